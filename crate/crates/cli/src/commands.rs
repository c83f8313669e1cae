//! The four subcommands, callable in-process.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use hypervq::data::{corrupt, load_mnist, ImageDataset, Split};
use hypervq::diffcore::{AdamConfig, AdamState};
use hypervq::geometry::{exp_map_origin, safe_project, BallConfig, GeometryError, TangentVector};
use hypervq::metrics::{
    davies_bouldin, perplexity, silhouette, silhouette_poincare, ClusterAssignment, MetricsError, MseAccumulator,
};
use hypervq::models::{
    classifier_step, freeze_backbone, load_checkpoint, save_checkpoint, vqvae_step, Checkpoint, ClassifierHead,
    Embeddings, VqVae,
};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{LoadedConfig, RunConfig, MODEL_KEYS};
use crate::CliError;

const EVAL_BATCH: usize = 250;
/// Stream offsets so corruption and sampling never share draws with training.
const CORRUPTION_STREAM: u64 = 0x00c0_ffee;
const SAMPLING_STREAM: u64 = 0x5a3b_1e00;

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T, CliError> {
    r.map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    io(path, fs::write(path, contents))
}

fn prepare_out(out: &Path) -> Result<(), CliError> {
    io(out, fs::create_dir_all(out))
}

fn load_split(cfg: &RunConfig, split: Split) -> Result<ImageDataset, CliError> {
    let ds = load_mnist(&cfg.data_dir()?, split)?;
    let limit = match split {
        Split::Train => cfg.train_limit,
        Split::Test => cfg.test_limit,
    };
    Ok(match limit {
        Some(n) if n < ds.len() => ds.take(n),
        _ => ds,
    })
}

fn batches(n: usize, size: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n.div_ceil(size)).map(move |b| (b * size..((b + 1) * size).min(n)).collect())
}

fn steps_per_epoch(n: usize, batch: usize) -> u64 {
    n.div_ceil(batch) as u64
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |t| t.to_string())
}

/// Rebuilds a model from a checkpoint written by [`cmd_train_vqvae`].
pub fn restore_model(ckpt: &Checkpoint) -> Result<(RunConfig, VqVae), CliError> {
    let missing = |k: &str| CliError::Config(format!("checkpoint lacks `{k}` metadata"));
    let saved = LoadedConfig::parse(ckpt.meta("config").ok_or_else(|| missing("config"))?)?.config;
    let dim =
        |k: &str| -> Result<usize, CliError> { ckpt.meta(k).and_then(|v| v.parse().ok()).ok_or_else(|| missing(k)) };
    let ae = saved.autoencoder(dim("channels")?, dim("height")?, dim("width")?);
    let q = saved.quantizer_config(1)?;
    let mut model = VqVae::new(ae, &q, &mut ChaCha8Rng::seed_from_u64(0))?;
    model.load_checkpoint(ckpt)?;
    Ok((saved, model))
}

/// Rejects explicitly configured architecture keys that disagree with the checkpoint.
fn check_compatible(run: &LoadedConfig, saved: &RunConfig) -> Result<(), CliError> {
    for key in MODEL_KEYS {
        if run.explicit.contains(key) && run.config.value_of(key) != saved.value_of(key) {
            return Err(CliError::Config(format!(
                "`{key}` is {} in the configuration but {} in the checkpoint",
                run.config.value_of(key).map_or("unset".into(), |v| v.to_string()),
                saved.value_of(key).map_or("unset".into(), |v| v.to_string()),
            )));
        }
    }
    Ok(())
}

fn load_backbone(run: &LoadedConfig, path: &Path) -> Result<(Checkpoint, RunConfig, VqVae), CliError> {
    let ckpt = load_checkpoint(path)?;
    let (saved, model) = restore_model(&ckpt)?;
    check_compatible(run, &saved)?;
    Ok((ckpt, saved, model))
}

/// Trains a VQVAE; returns the summary that was also written to `summary.txt`.
pub fn cmd_train_vqvae(run: &LoadedConfig, out: &Path) -> Result<String, CliError> {
    let cfg = &run.config;
    prepare_out(out)?;
    let train = load_split(cfg, Split::Train)?;
    let test = load_split(cfg, Split::Test)?;
    let per_epoch = steps_per_epoch(train.len(), cfg.batch_size);
    let total = cfg.max_steps.map_or(per_epoch * cfg.epochs as u64, |m| m.min(per_epoch * cfg.epochs as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ae = cfg.autoencoder(train.channels(), train.height(), train.width());
    let mut model = VqVae::new(ae, &cfg.quantizer_config(total)?, &mut rng)?;
    let mut adam = AdamState::new(AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() });

    let log_path = out.join("train.log");
    let mut log = String::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut last = None;
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if model.step() >= total {
                break 'epochs;
            }
            let rec = match vqvae_step(&mut model, &mut adam, &train.batch(chunk), &mut rng) {
                Ok(r) => r,
                Err(e) => {
                    write(&log_path, &log)?;
                    return Err(e.into());
                }
            };
            if rec.step % cfg.log_every == 0 || rec.step + 1 == total {
                writeln!(
                    log,
                    "step={} epoch={epoch} loss={} recon={} aux_loss={} perplexity={} tau={}",
                    rec.step,
                    rec.loss,
                    rec.recon,
                    rec.aux,
                    rec.perplexity,
                    fmt_opt(rec.temperature)
                )
                .expect("string write");
            }
            last = Some(rec);
        }
    }
    write(&log_path, &log)?;

    let ckpt = model
        .to_checkpoint()
        .with_meta("config", cfg.to_text())
        .with_meta("channels", train.channels())
        .with_meta("height", train.height())
        .with_meta("width", train.width());
    save_checkpoint(&out.join("model.ckpt"), &ckpt)?;
    let eval = evaluate_split(&ckpt, &test, cfg.device_threads)?;
    let mut summary = String::new();
    writeln!(summary, "steps={}", model.step()).expect("string write");
    if let Some(r) = last {
        writeln!(summary, "final_loss={}\nfinal_recon={}\nfinal_aux_loss={}", r.loss, r.recon, r.aux)
            .expect("string write");
    }
    writeln!(summary, "test_mse={}\ntest_perplexity={}", eval.mse, eval.perplexity()).expect("string write");
    write(&out.join("summary.txt"), &summary)?;
    Ok(summary)
}

/// Encoded statistics of one dataset split.
#[derive(Clone, Debug)]
pub struct SplitEval {
    pub mse: f64,
    pub usage: Vec<u64>,
    pub embeddings: Embeddings,
}

impl SplitEval {
    pub fn perplexity(&self) -> f64 {
        perplexity(&self.usage).unwrap_or(f64::NAN)
    }
}

fn evaluate_batches(
    ckpt: &Checkpoint,
    ds: &ImageDataset,
    ids: &[usize],
) -> Result<Vec<(usize, Embeddings, Vec<f64>)>, CliError> {
    let (_, mut model) = restore_model(ckpt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let all: Vec<Vec<usize>> = batches(ds.len(), EVAL_BATCH).collect();
    ids.iter()
        .map(|&b| {
            let (recon, emb) = model.evaluate(&ds.batch(&all[b]), &mut rng)?;
            Ok((b, emb, recon.into_data()))
        })
        .collect()
}

/// Evaluation-mode pass over `ds`, sharded over `threads` workers with an ordered merge.
pub fn evaluate_split(ckpt: &Checkpoint, ds: &ImageDataset, threads: usize) -> Result<SplitEval, CliError> {
    let n_batches = ds.len().div_ceil(EVAL_BATCH);
    let threads = threads.clamp(1, n_batches.max(1));
    let shards: Vec<Vec<usize>> = (0..threads).map(|t| (t..n_batches).step_by(threads).collect()).collect();
    let mut results = if threads == 1 {
        evaluate_batches(ckpt, ds, &shards[0])?
    } else {
        let joined: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = shards.iter().map(|ids| s.spawn(|| evaluate_batches(ckpt, ds, ids))).collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
        });
        let mut merged = Vec::with_capacity(n_batches);
        for part in joined {
            merged.extend(part?);
        }
        merged
    };
    results.sort_by_key(|(b, _, _)| *b);

    let (_, model) = restore_model(ckpt)?;
    let codes = model.quantizer.num_codes();
    let dim = model.config.latent_dim;
    let positions = {
        let (h, w) = model.config.latent_hw();
        h * w
    };
    let mut acc = MseAccumulator::default();
    let mut usage = vec![0u64; codes];
    let mut embeddings = Embeddings { dim, z_e: vec![], z_q: vec![], indices: vec![], positions_per_image: positions };
    for ((_, emb, recon), ids) in results.into_iter().zip(batches(ds.len(), EVAL_BATCH)) {
        acc.add(ds.batch(&ids).data(), &recon)?;
        for &i in &emb.indices {
            usage[i] += 1;
        }
        embeddings.z_e.extend(emb.z_e);
        embeddings.z_q.extend(emb.z_q);
        embeddings.indices.extend(emb.indices);
    }
    Ok(SplitEval { mse: acc.mean(), usage, embeddings })
}

/// Metrics of one condition in an [`EvalReport`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionMetrics {
    pub mse: f64,
    pub perplexity: f64,
    pub silhouette: f64,
    pub davies_bouldin: f64,
    /// Poincaré-distance silhouette of the projected latents, when requested.
    pub silhouette_poincare: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub clean: ConditionMetrics,
    pub corrupted: ConditionMetrics,
}

impl EvalReport {
    pub fn silhouette_drop(&self) -> f64 {
        self.clean.silhouette - self.corrupted.silhouette
    }

    /// One `name=value` line per metric.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (prefix, m) in [("clean", &self.clean), ("corrupted", &self.corrupted)] {
            writeln!(s, "{prefix}.mse={}", m.mse).expect("string write");
            writeln!(s, "{prefix}.perplexity={}", m.perplexity).expect("string write");
            writeln!(s, "{prefix}.silhouette={}", m.silhouette).expect("string write");
            writeln!(s, "{prefix}.davies_bouldin={}", m.davies_bouldin).expect("string write");
            if let Some(v) = m.silhouette_poincare {
                writeln!(s, "{prefix}.silhouette_poincare={v}").expect("string write");
            }
        }
        writeln!(s, "silhouette_drop={}", self.silhouette_drop()).expect("string write");
        s
    }

    pub fn parse(text: &str) -> Option<Self> {
        let get = |key: &str| -> Option<f64> {
            text.lines().find_map(|l| l.strip_prefix(key)?.strip_prefix('=')?.parse().ok())
        };
        let cond = |p: &str| -> Option<ConditionMetrics> {
            Some(ConditionMetrics {
                mse: get(&format!("{p}.mse"))?,
                perplexity: get(&format!("{p}.perplexity"))?,
                silhouette: get(&format!("{p}.silhouette"))?,
                davies_bouldin: get(&format!("{p}.davies_bouldin"))?,
                silhouette_poincare: get(&format!("{p}.silhouette_poincare")),
            })
        };
        Some(Self { clean: cond("clean")?, corrupted: cond("corrupted")? })
    }
}

/// Sampled latent rows labelled by their assigned code.
pub fn sample_assignment(emb: &Embeddings, rows: &[usize]) -> Result<ClusterAssignment, MetricsError> {
    let d = emb.dim;
    let points = rows.iter().flat_map(|&r| emb.z_e[r * d..(r + 1) * d].iter().copied()).collect();
    ClusterAssignment::from_flat(d, points, rows.iter().map(|&r| emb.indices[r]).collect())
}

fn undefined_as_nan(r: Result<f64, MetricsError>) -> Result<f64, MetricsError> {
    match r {
        Err(MetricsError::TooFewClusters(_)) => Ok(f64::NAN),
        other => other,
    }
}

/// Maps each sampled latent onto the ball the quantizer works in.
fn projected(assign: &ClusterAssignment, ball: BallConfig) -> Result<ClusterAssignment, CliError> {
    let points = (0..assign.len())
        .map(|i| {
            let v = TangentVector::new(assign.point(i).to_vec())?;
            Ok(safe_project(exp_map_origin(&v, ball).coords(), ball)?.into_coords())
        })
        .collect::<Result<Vec<_>, GeometryError>>()
        .map_err(|e| CliError::NonFinite(e.to_string()))?;
    Ok(ClusterAssignment::new(points, assign.labels().to_vec())?)
}

fn condition(eval: &SplitEval, rows: &[usize], ball: Option<BallConfig>) -> Result<ConditionMetrics, CliError> {
    let assign = sample_assignment(&eval.embeddings, rows)?;
    let silhouette_poincare = match ball {
        Some(ball) => Some(undefined_as_nan(silhouette_poincare(&projected(&assign, ball)?, ball))?),
        None => None,
    };
    Ok(ConditionMetrics {
        mse: eval.mse,
        perplexity: eval.perplexity(),
        silhouette: undefined_as_nan(silhouette(&assign))?,
        davies_bouldin: undefined_as_nan(davies_bouldin(&assign))?,
        silhouette_poincare,
    })
}

fn dump_embeddings(path: &Path, parts: [(&str, &Embeddings); 2]) -> Result<(), CliError> {
    let mut s = String::new();
    let d = parts[0].1.dim;
    write!(s, "split,image,position,code").expect("string write");
    for j in 0..d {
        write!(s, ",z{j}").expect("string write");
    }
    s.push('\n');
    for (name, emb) in parts {
        for (r, code) in emb.indices.iter().enumerate() {
            write!(s, "{name},{},{},{code}", r / emb.positions_per_image, r % emb.positions_per_image)
                .expect("string write");
            for v in &emb.z_e[r * d..(r + 1) * d] {
                write!(s, ",{v}").expect("string write");
            }
            s.push('\n');
        }
    }
    write(path, s)
}

/// Clean and corrupted test-set metrics; writes `metrics.txt` and optionally `embeddings.csv`.
pub fn cmd_eval(run: &LoadedConfig, checkpoint: &Path, out: &Path) -> Result<EvalReport, CliError> {
    let cfg = &run.config;
    prepare_out(out)?;
    let (ckpt, saved, _) = load_backbone(run, checkpoint)?;
    let ball = if cfg.poincare_silhouette { Some(saved.ball()?) } else { None };
    let test = load_split(cfg, Split::Test)?;
    let noisy = corrupt(&test, &cfg.corruption(), &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ CORRUPTION_STREAM))?;
    let clean_eval = evaluate_split(&ckpt, &test, cfg.device_threads)?;
    let noisy_eval = evaluate_split(&ckpt, &noisy, cfg.device_threads)?;
    let total = clean_eval.embeddings.indices.len();
    let mut rows =
        index::sample(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ SAMPLING_STREAM), total, cfg.eval_samples.min(total))
            .into_vec();
    rows.sort_unstable();
    let report =
        EvalReport { clean: condition(&clean_eval, &rows, ball)?, corrupted: condition(&noisy_eval, &rows, ball)? };
    write(&out.join("metrics.txt"), report.to_text())?;
    if cfg.dump_embeddings {
        dump_embeddings(
            &out.join("embeddings.csv"),
            [("clean", &clean_eval.embeddings), ("corrupted", &noisy_eval.embeddings)],
        )?;
    }
    Ok(report)
}

fn accuracy(model: &mut VqVae, head: &ClassifierHead, ds: &ImageDataset, labels: &[usize]) -> Result<f64, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut correct = 0;
    for ids in batches(ds.len(), EVAL_BATCH) {
        let grid = model.quantized_grid(&ds.batch(&ids), &mut rng)?;
        let predicted = head.predict(&grid)?;
        correct += ids.iter().zip(predicted).filter(|(&i, p)| labels[i] == *p).count();
    }
    Ok(correct as f64 / ds.len().max(1) as f64)
}

/// Trains a head on the frozen backbone; writes `head.ckpt`, `backbone.ckpt` and `classifier.log`.
pub fn cmd_train_classifier(run: &LoadedConfig, checkpoint: &Path, out: &Path) -> Result<String, CliError> {
    let cfg = &run.config;
    prepare_out(out)?;
    let (input, _, mut model) = load_backbone(run, checkpoint)?;
    let train = load_split(cfg, Split::Train)?;
    let test = load_split(cfg, Split::Test)?;
    let no_labels = |ds: &ImageDataset| CliError::Config(format!("split `{}` has no labels", ds.split()));
    let train_labels = train.labels().ok_or_else(|| no_labels(&train))?.to_vec();
    let test_labels = test.labels().ok_or_else(|| no_labels(&test))?.to_vec();
    let classes = train_labels.iter().chain(&test_labels).max().map_or(0, |m| m + 1);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    freeze_backbone(&mut model);
    let mut head = ClassifierHead::new(cfg.classifier(classes), &mut rng)?;
    let mut adam = AdamState::new(AdamConfig { learning_rate: cfg.classifier_learning_rate, ..AdamConfig::default() });
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = String::new();
    for epoch in 0..cfg.classifier_epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut hits) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let labels: Vec<usize> = chunk.iter().map(|&i| train_labels[i]).collect();
            let rec = classifier_step(&mut model, &mut head, &mut adam, &train.batch(chunk), &labels, &mut rng)?;
            loss += rec.loss * chunk.len() as f64;
            hits += rec.accuracy * chunk.len() as f64;
        }
        let n = train.len().max(1) as f64;
        let test_acc = accuracy(&mut model, &head, &test, &test_labels)?;
        writeln!(log, "epoch={epoch} loss={} train_accuracy={} test_accuracy={test_acc}", loss / n, hits / n)
            .expect("string write");
    }
    write(&out.join("classifier.log"), &log)?;

    let backbone = Checkpoint { tensors: model.store.to_named(), metadata: input.metadata.clone() };
    save_checkpoint(&out.join("backbone.ckpt"), &backbone)?;
    let head_ckpt =
        Checkpoint::new(head.store.to_named()).with_meta("classes", classes).with_meta("config", cfg.to_text());
    save_checkpoint(&out.join("head.ckpt"), &head_ckpt)?;
    let final_line = log.lines().last().unwrap_or("").to_string();
    Ok(format!("{final_line}\n"))
}

/// Writes one comma-separated row per code at full precision; returns the row count.
pub fn cmd_export_codebook(checkpoint: &Path, out: &Path) -> Result<usize, CliError> {
    prepare_out(out)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let (_, model) = restore_model(&ckpt)?;
    let codebook = model.quantizer.codebook(&model.store)?;
    let mut s = String::new();
    let rows = codebook.shape()[0];
    for r in 0..rows {
        let line: Vec<String> = codebook.row(r).iter().map(f64::to_string).collect();
        writeln!(s, "{}", line.join(",")).expect("string write");
    }
    write(&out.join("codebook.csv"), s)?;
    Ok(rows)
}

/// Parses a file written by [`cmd_export_codebook`].
pub fn read_codebook(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text = io(path, fs::read_to_string(path))?;
    text.lines()
        .map(|l| {
            l.split(',')
                .map(|v| v.parse::<f64>().map_err(|e| CliError::Config(format!("{}: {e}", path.display()))))
                .collect()
        })
        .collect()
}
