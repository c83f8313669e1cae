//! Flat `key = value` run configuration with command-line overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use hypervq::data::Corruption;
use hypervq::geometry::BallConfig;
use hypervq::models::{AutoencoderConfig, ClassifierConfig};
use hypervq::quantizers::{QuantizerConfig, QuantizerKind, TemperatureSchedule};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the dataset root when `data_dir` is unset.
pub const DATA_DIR_ENV: &str = "HYPERVQ_DATA_DIR";

/// Keys that fix the trained architecture and must agree with a loaded checkpoint.
pub const MODEL_KEYS: [&str; 10] = [
    "quantizer",
    "codes",
    "latent_dim",
    "curvature",
    "boundary_eps",
    "hidden",
    "res_blocks",
    "stages",
    "ema",
    "gumbel_hard",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub quantizer: String,
    pub codes: usize,
    pub latent_dim: usize,
    pub curvature: f64,
    pub boundary_eps: f64,
    pub beta: f64,
    pub ema: bool,
    pub ema_decay: f64,
    pub gumbel_hard: bool,
    pub tau_max: f64,
    pub tau_min: f64,
    /// Per-step decay; when absent, chosen so `tau_min` is reached at `tau_min_fraction` of training.
    pub tau_delta: Option<f64>,
    pub tau_min_fraction: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub hidden: usize,
    pub res_blocks: usize,
    pub stages: usize,
    pub data_dir: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub log_every: u64,
    pub classifier_epochs: usize,
    pub classifier_learning_rate: f64,
    pub classifier_channels: usize,
    pub classifier_hidden: usize,
    pub eval_samples: usize,
    pub rotation_deg: f64,
    pub flip_prob: f64,
    pub noise_sigma: f64,
    pub dump_embeddings: bool,
    pub poincare_silhouette: bool,
    pub device_threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            quantizer: "hypervq".into(),
            codes: 16,
            latent_dim: 3,
            curvature: 1.0,
            boundary_eps: 1e-5,
            beta: 0.25,
            ema: false,
            ema_decay: 0.99,
            gumbel_hard: true,
            tau_max: 2.0,
            tau_min: 0.5,
            tau_delta: None,
            tau_min_fraction: 0.7,
            learning_rate: 3e-4,
            batch_size: 128,
            epochs: 10,
            max_steps: None,
            seed: 0,
            hidden: 16,
            res_blocks: 2,
            stages: 2,
            data_dir: None,
            train_limit: None,
            test_limit: None,
            log_every: 1,
            classifier_epochs: 5,
            classifier_learning_rate: 1e-3,
            classifier_channels: 32,
            classifier_hidden: 64,
            eval_samples: 1000,
            rotation_deg: 30.0,
            flip_prob: 0.5,
            noise_sigma: 0.1,
            dump_embeddings: false,
            poincare_silhouette: false,
            device_threads: 1,
        }
    }
}

/// A parsed configuration together with the keys that were set explicitly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub explicit: BTreeSet<String>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub quantizer: Option<String>,
    pub device_threads: Option<usize>,
}

impl LoadedConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        if let Some((key, _)) = table.iter().find(|(_, v)| v.is_table() || v.is_array()) {
            return Err(CliError::Config(format!("`{key}` must be a scalar")));
        }
        let explicit = table.keys().cloned().collect();
        let config = RunConfig::deserialize(table).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self { config, explicit })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn apply(mut self, o: &Overrides) -> Result<Self, CliError> {
        if let Some(seed) = o.seed {
            self.config.seed = seed;
            self.explicit.insert("seed".into());
        }
        if let Some(q) = &o.quantizer {
            self.config.quantizer = q.clone();
            self.explicit.insert("quantizer".into());
        }
        if let Some(t) = o.device_threads {
            self.config.device_threads = t;
            self.explicit.insert("device_threads".into());
        }
        self.config.validate()?;
        Ok(self)
    }
}

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(what()))
    }
}

impl RunConfig {
    pub fn kind(&self) -> Result<QuantizerKind, CliError> {
        self.quantizer.parse().map_err(|_| {
            let known: Vec<_> = QuantizerKind::ALL.iter().map(|k| k.name()).collect();
            CliError::Config(format!("unknown quantizer `{}` (expected one of {})", self.quantizer, known.join(", ")))
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let kind = self.kind()?;
        check(kind == QuantizerKind::Identity || self.codes >= 2, || {
            format!("codes must be at least 2, got {}", self.codes)
        })?;
        for (name, v) in [
            ("latent_dim", self.latent_dim),
            ("batch_size", self.batch_size),
            ("hidden", self.hidden),
            ("stages", self.stages),
            ("classifier_channels", self.classifier_channels),
            ("classifier_hidden", self.classifier_hidden),
            ("device_threads", self.device_threads),
        ] {
            check(v > 0, || format!("{name} must be positive"))?;
        }
        check(self.log_every > 0, || "log_every must be positive".into())?;
        for (name, v) in [
            ("curvature", self.curvature),
            ("learning_rate", self.learning_rate),
            ("classifier_learning_rate", self.classifier_learning_rate),
            ("tau_max", self.tau_max),
            ("tau_min", self.tau_min),
        ] {
            check(v.is_finite() && v > 0.0, || format!("{name} must be positive and finite, got {v}"))?;
        }
        check(self.boundary_eps > 0.0 && self.boundary_eps < 1.0, || {
            format!("boundary_eps must lie in (0, 1), got {}", self.boundary_eps)
        })?;
        check(self.beta >= 0.0 && self.beta.is_finite(), || format!("beta must be non-negative, got {}", self.beta))?;
        check(self.ema_decay > 0.0 && self.ema_decay < 1.0, || {
            format!("ema_decay must lie in (0, 1), got {}", self.ema_decay)
        })?;
        check(self.tau_min <= self.tau_max, || "tau_min must not exceed tau_max".into())?;
        if let Some(d) = self.tau_delta {
            check(d > 0.0 && d <= 1.0, || format!("tau_delta must lie in (0, 1], got {d}"))?;
        }
        check(self.tau_min_fraction > 0.0 && self.tau_min_fraction <= 1.0, || {
            "tau_min_fraction must lie in (0, 1]".into()
        })?;
        check((0.0..=1.0).contains(&self.flip_prob), || {
            format!("flip_prob must lie in [0, 1], got {}", self.flip_prob)
        })?;
        check(self.noise_sigma >= 0.0 && self.rotation_deg >= 0.0, || {
            "corruption magnitudes must be non-negative".into()
        })?;
        check(self.eval_samples >= 2, || "eval_samples must be at least 2".into())?;
        Ok(())
    }

    pub fn data_dir(&self) -> Result<PathBuf, CliError> {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .ok_or_else(|| CliError::Config(format!("no dataset: set `data_dir` or {DATA_DIR_ENV}")))
    }

    pub fn ball(&self) -> Result<BallConfig, CliError> {
        BallConfig::new(self.curvature, self.boundary_eps).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn quantizer_config(&self, total_steps: u64) -> Result<QuantizerConfig, CliError> {
        let schedule = match self.tau_delta {
            Some(d) => TemperatureSchedule::new(self.tau_max, self.tau_min, d),
            None => {
                TemperatureSchedule::reaching_min_at(total_steps, self.tau_min_fraction, self.tau_max, self.tau_min)
            }
        }
        .map_err(|e| CliError::Config(e.to_string()))?;
        let mut q = QuantizerConfig::new(self.kind()?, self.codes, self.latent_dim);
        q.ball = self.ball()?;
        q.beta = self.beta;
        q.ema = self.ema;
        q.ema_decay = self.ema_decay;
        q.gumbel_hard = self.gumbel_hard;
        q.schedule = schedule;
        Ok(q)
    }

    pub fn autoencoder(&self, channels: usize, height: usize, width: usize) -> AutoencoderConfig {
        AutoencoderConfig {
            channels,
            height,
            width,
            hidden: self.hidden,
            res_blocks: self.res_blocks,
            latent_dim: self.latent_dim,
            stages: self.stages,
        }
    }

    pub fn classifier(&self, classes: usize) -> ClassifierConfig {
        ClassifierConfig {
            latent_dim: self.latent_dim,
            conv_channels: self.classifier_channels,
            hidden: self.classifier_hidden,
            classes,
        }
    }

    pub fn corruption(&self) -> Corruption {
        Corruption { max_rotation_deg: self.rotation_deg, flip_prob: self.flip_prob, noise_sigma: self.noise_sigma }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn value_of(&self, key: &str) -> Option<toml::Value> {
        toml::Table::try_from(self).ok()?.get(key).cloned()
    }
}
