#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hypervq::data::{write_idx_images, write_idx_labels, ImageDataset};
use hypervq_cli::LoadedConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CLASSES: usize = 4;

/// `n` 8×8 images whose class decides which corner holds a bright 3×3 block.
pub fn pattern_images(n: usize, seed: u64) -> ImageDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corners = [(0, 0), (0, 5), (5, 0), (5, 5)];
    let mut pixels = vec![0.0; n * 64];
    let labels: Vec<usize> = (0..n).map(|i| i % CLASSES).collect();
    for (img, &l) in pixels.chunks_mut(64).zip(&labels) {
        for v in img.iter_mut() {
            *v = rng.random_range(0.0..0.2);
        }
        let (y0, x0) = corners[l];
        for y in y0..y0 + 3 {
            for x in x0..x0 + 3 {
                img[y * 8 + x] = rng.random_range(0.8..1.0);
            }
        }
    }
    // Round to bytes so the IDX round trip is exact.
    let pixels = pixels.into_iter().map(|v: f64| (v * 255.0).round() / 255.0).collect();
    ImageDataset::new(1, 8, 8, pixels, Some(labels), "fixture").unwrap()
}

/// Writes a tiny IDX dataset with both splits and returns its directory.
pub fn write_fixture(dir: &Path, train: usize, test: usize) -> PathBuf {
    let data = dir.join("data");
    std::fs::create_dir_all(&data).unwrap();
    for (prefix, n, seed) in [("train", train, 1), ("t10k", test, 2)] {
        let ds = pattern_images(n, seed);
        write_idx_images(&data.join(format!("{prefix}-images-idx3-ubyte")), &ds).unwrap();
        write_idx_labels(&data.join(format!("{prefix}-labels-idx1-ubyte")), ds.labels().unwrap()).unwrap();
    }
    data
}

/// Small-model configuration pointing at `data`; keys in `extra` replace the defaults.
pub fn fixture_config(data: &Path, extra: &str) -> String {
    let base = format!(
        "data_dir = {:?}\ncodes = 4\nhidden = 8\nres_blocks = 1\nbatch_size = 16\nepochs = 2\nlearning_rate = 0.003\n\
         eval_samples = 200\nclassifier_epochs = 3\n",
        data.display().to_string()
    );
    let key = |l: &str| l.split('=').next().unwrap_or("").trim().to_string();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let mut text: String = base.lines().filter(|l| !overridden.contains(&key(l))).map(|l| format!("{l}\n")).collect();
    text.push_str(extra);
    text.push('\n');
    text
}

pub fn config(text: &str) -> LoadedConfig {
    LoadedConfig::parse(text).unwrap().apply(&Default::default()).unwrap()
}
