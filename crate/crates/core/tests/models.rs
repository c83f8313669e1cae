use std::collections::BTreeMap;

use hypervq::diffcore::{AdamConfig, AdamState, Tensor};
use hypervq::models::{
    classifier_step, freeze_backbone, load_checkpoint, save_checkpoint, vqvae_step, AutoencoderConfig, Checkpoint,
    CheckpointError, ClassifierConfig, ClassifierHead, ModelError, VqVae,
};
use hypervq::quantizers::{QuantizerConfig, QuantizerKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(latent_dim: usize) -> AutoencoderConfig {
    AutoencoderConfig { channels: 1, height: 8, width: 8, hidden: 8, res_blocks: 1, latent_dim, stages: 2 }
}

fn model(cfg: AutoencoderConfig, kind: QuantizerKind, k: usize, seed: u64) -> VqVae {
    let q = QuantizerConfig::new(kind, k, cfg.latent_dim);
    VqVae::new(cfg, &q, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn adam(lr: f64) -> AdamState {
    AdamState::new(AdamConfig { learning_rate: lr, ..AdamConfig::default() })
}

fn random_images(rng: &mut ChaCha8Rng, n: usize, cfg: &AutoencoderConfig) -> Tensor {
    let len = n * cfg.channels * cfg.height * cfg.width;
    Tensor::new(vec![n, cfg.channels, cfg.height, cfg.width], (0..len).map(|_| rng.random()).collect()).unwrap()
}

/// Single-square images: a bright 3×3 patch at a random location.
fn square_fixture(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    let mut data = vec![0.0; n * 64];
    for img in data.chunks_mut(64) {
        let (y0, x0) = (rng.random_range(0..6), rng.random_range(0..6));
        for y in y0..y0 + 3 {
            for x in x0..x0 + 3 {
                img[y * 8 + x] = 1.0;
            }
        }
    }
    Tensor::new(vec![n, 1, 8, 8], data).unwrap()
}

fn checksum(m: &VqVae) -> Vec<u8> {
    m.to_checkpoint().to_bytes()
}

#[test]
fn mnist_encoder_shape() {
    let m = model(AutoencoderConfig::mnist(), QuantizerKind::HyperVq, 16, 1);
    let x = random_images(&mut ChaCha8Rng::seed_from_u64(2), 4, &m.config);
    let z = m.encode(&x).unwrap();
    assert_eq!(z.shape(), &[4, 3, 7, 7]);
    assert_eq!(m.decode(&z).unwrap().shape(), &[4, 1, 28, 28]);
}

#[test]
fn wrong_input_shape_is_rejected() {
    let m = model(tiny(2), QuantizerKind::KmeansVq, 4, 1);
    assert!(matches!(m.encode(&Tensor::zeros(&[2, 1, 8, 6])), Err(ModelError::Shape(_))));
    assert!(matches!(m.decode(&Tensor::zeros(&[2, 3, 2, 2])), Err(ModelError::Shape(_))));
    let q = QuantizerConfig::new(QuantizerKind::KmeansVq, 4, 3);
    assert!(matches!(VqVae::new(tiny(2), &q, &mut ChaCha8Rng::seed_from_u64(0)), Err(ModelError::Config(_))));
    let odd = AutoencoderConfig { height: 10, ..tiny(2) };
    let q = QuantizerConfig::new(QuantizerKind::KmeansVq, 4, 2);
    assert!(matches!(VqVae::new(odd, &q, &mut ChaCha8Rng::seed_from_u64(0)), Err(ModelError::Config(_))));
}

#[test]
fn zero_weights_give_zero_latents_and_zero_images() {
    let mut m = model(tiny(2), QuantizerKind::HyperVq, 4, 3);
    for id in m.store.ids().collect::<Vec<_>>() {
        if m.store.name(id).starts_with("encoder.") || m.store.name(id).starts_with("decoder.") {
            m.store.get_mut(id).data_mut().fill(0.0);
        }
    }
    let x = random_images(&mut ChaCha8Rng::seed_from_u64(4), 3, &m.config);
    assert!(m.encode(&x).unwrap().data().iter().all(|&v| v == 0.0));
    assert!(m.decode(&Tensor::ones(&[3, 2, 2, 2])).unwrap().data().iter().all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_weights_keep_outputs_finite(seed in any::<u64>(), hw in 1usize..4, scale in 0.0f64..50.0) {
        let cfg = AutoencoderConfig { height: 4 * hw, width: 4 * (4 - hw), ..tiny(3) };
        let m = model(cfg.clone(), QuantizerKind::KmeansVq, 4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = random_images(&mut rng, 2, &cfg).map(|v| v * scale);
        let z = m.encode(&x).unwrap();
        prop_assert!(z.is_finite());
        let y = m.decode(&z).unwrap();
        prop_assert!(y.is_finite());
        prop_assert_eq!(y.shape(), x.shape());
    }
}

#[test]
fn reconstruction_loss_falls_monotonically_on_one_sample() {
    let mut m = model(tiny(4), QuantizerKind::Identity, 1, 5);
    let one = square_fixture(&mut ChaCha8Rng::seed_from_u64(6), 1);
    let batch = Tensor::new(vec![4, 1, 8, 8], one.data().repeat(4)).unwrap();
    let mut opt = adam(3e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let losses: Vec<f64> = (0..50).map(|_| vqvae_step(&mut m, &mut opt, &batch, &mut rng).unwrap().recon).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn every_quantizer_runs_the_same_loop_and_trains_the_encoder() {
    for kind in QuantizerKind::ALL {
        let mut m = model(tiny(3), kind, 4, 8);
        let before = m.store.get(m.store.find("encoder.down0.weight").unwrap()).clone();
        let x = random_images(&mut ChaCha8Rng::seed_from_u64(9), 4, &m.config);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let rec = vqvae_step(&mut m, &mut adam(1e-3), &x, &mut rng).unwrap();
        assert!(rec.loss.is_finite() && rec.recon.is_finite(), "{kind}");
        assert_eq!(rec.loss, rec.recon + rec.aux, "{kind}");
        let after = m.store.get(m.store.find("encoder.down0.weight").unwrap());
        assert_ne!(&before, after, "{kind}: encoder received no gradient");
        assert_eq!(m.step(), 1);
        if matches!(kind, QuantizerKind::HyperVq | QuantizerKind::HyperEmbMatVq | QuantizerKind::GumbelVq) {
            assert!(rec.temperature.is_some());
        }
    }
}

#[test]
fn hypervq_aux_loss_is_zero() {
    let mut m = model(tiny(3), QuantizerKind::HyperVq, 8, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut opt = adam(1e-3);
    for _ in 0..5 {
        let x = random_images(&mut rng, 4, &m.config);
        assert_eq!(vqvae_step(&mut m, &mut opt, &x, &mut rng).unwrap().aux, 0.0);
    }
}

#[test]
fn hypervq_stays_finite_for_1000_steps() {
    let cfg = AutoencoderConfig { hidden: 4, ..tiny(3) };
    let mut m = model(cfg, QuantizerKind::HyperVq, 8, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut opt = adam(1e-2);
    for _ in 0..1000 {
        let x = random_images(&mut rng, 2, &m.config).map(|v| 20.0 * (v - 0.5));
        let rec = vqvae_step(&mut m, &mut opt, &x, &mut rng).unwrap();
        assert!(rec.loss.is_finite() && rec.perplexity.is_finite());
    }
    assert!(m.store.iter().all(|(_, _, t)| t.is_finite()));
}

#[test]
fn identity_autoencoder_fits_100_samples() {
    let mut m = model(tiny(4), QuantizerKind::Identity, 1, 15);
    let data = square_fixture(&mut ChaCha8Rng::seed_from_u64(16), 100);
    let mut opt = adam(3e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut last = f64::INFINITY;
    for _ in 0..2000 {
        last = vqvae_step(&mut m, &mut opt, &data, &mut rng).unwrap().recon;
        if last < 0.05 {
            break;
        }
    }
    assert!(last < 0.05, "final mse {last}");
    let recon = m.reconstruct(&data, &mut rng).unwrap();
    let mse = recon.zip_map(&data, |a, b| (a - b) * (a - b)).sum() / 6400.0;
    assert!(mse < 0.06, "eval mse {mse}");
}

#[test]
fn classifier_requires_frozen_backbone_and_leaves_it_untouched() {
    let mut m = model(tiny(3), QuantizerKind::HyperVq, 8, 18);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut head = ClassifierHead::new(ClassifierConfig::new(3, 4), &mut rng).unwrap();
    let x = random_images(&mut rng, 8, &m.config);
    let labels: Vec<usize> = (0..8).map(|i| i % 4).collect();
    let mut opt = adam(1e-3);
    assert!(matches!(
        classifier_step(&mut m, &mut head, &mut opt, &x, &labels, &mut rng),
        Err(ModelError::BackboneNotFrozen(_))
    ));
    freeze_backbone(&mut m);
    let before = checksum(&m);
    let head_before = head.store.to_named();
    for _ in 0..10 {
        let rec = classifier_step(&mut m, &mut head, &mut opt, &x, &labels, &mut rng).unwrap();
        assert!(rec.loss.is_finite() && (0.0..=1.0).contains(&rec.accuracy));
    }
    assert_eq!(checksum(&m), before);
    assert_ne!(head.store.to_named(), head_before);
    let grid = m.quantized_grid(&x, &mut rng).unwrap();
    assert_eq!(head.logits(&grid).unwrap().shape(), &[8, 4]);
}

#[test]
fn head_separates_synthetic_codes() {
    // Four classes around well-separated centres with bounded noise, so a linear boundary exists.
    let centres = [[6.0, 0.0, 0.0], [0.0, 6.0, 0.0], [0.0, 0.0, 6.0], [-3.5, -3.5, -3.5]];
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let labels: Vec<usize> = (0..120).map(|i| i % 4).collect();
    let points: Vec<f64> = labels.iter().flat_map(|&l| centres[l].map(|c| c + rng.random_range(-1.0..1.0))).collect();
    let grid = Tensor::new(vec![120, 3, 1, 1], points).unwrap();
    let mut head = ClassifierHead::new(ClassifierConfig::new(3, 4), &mut rng).unwrap();
    let mut opt = adam(3e-3);
    let mut acc = 0.0;
    for _ in 0..200 {
        acc = head.train_on_grid(&mut opt, &grid, &labels).unwrap().accuracy;
    }
    let predicted = head.predict(&grid).unwrap();
    assert_eq!(predicted, labels, "training accuracy {acc}");
}

#[test]
fn checkpoint_roundtrip_is_bit_exact_and_deterministic() {
    let specials = vec![0.0, -0.0, f64::MIN_POSITIVE / 4.0, f64::MAX, -1.0 / 3.0, f64::INFINITY, f64::NAN, 1e-300];
    let mut tensors = BTreeMap::new();
    tensors.insert("b.special".to_string(), Tensor::new(vec![2, 4], specials).unwrap());
    tensors.insert("a.scalar".to_string(), Tensor::scalar(std::f64::consts::PI));
    let ckpt = Checkpoint::new(tensors).with_meta("kind", "hypervq").with_meta("step", 12);
    let bytes = ckpt.to_bytes();
    assert_eq!(bytes, ckpt.clone().to_bytes());
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.metadata, ckpt.metadata);
    for (name, t) in &ckpt.tensors {
        let u = back.tensor(name).unwrap();
        assert_eq!(u.shape(), t.shape());
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(u), bits(t), "{name}");
    }
    assert_eq!(back.to_bytes(), bytes);
    assert!(matches!(back.tensor("missing"), Err(CheckpointError::Missing(_))));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Checkpoint::from_bytes(b"nope\n1\n{}\n").is_err());
}

#[test]
fn model_checkpoint_restores_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut m = model(tiny(3), QuantizerKind::KmeansVq, 4, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = random_images(&mut rng, 4, &m.config);
    vqvae_step(&mut m, &mut adam(1e-3), &x, &mut rng).unwrap();
    save_checkpoint(&path, &m.to_checkpoint()).unwrap();
    let mut fresh = model(tiny(3), QuantizerKind::KmeansVq, 4, 99);
    fresh.load_checkpoint(&load_checkpoint(&path).unwrap()).unwrap();
    assert_eq!(fresh.step(), 1);
    assert_eq!(fresh.store.to_named(), m.store.to_named());
    assert_eq!(fresh.reconstruct(&x, &mut rng).unwrap(), m.reconstruct(&x, &mut rng).unwrap());
    let mut other = model(tiny(2), QuantizerKind::KmeansVq, 4, 1);
    assert!(other.load_checkpoint(&m.to_checkpoint()).is_err());
}
