use std::fs;

use hypervq::data::{
    corrupt, flip_horizontal, load_idx, load_mnist, rotate_bilinear, synth_mixture, write_idx_images, write_idx_labels,
    Corruption, DataError, ImageDataset, Split,
};
use hypervq::metrics::{silhouette, ClusterAssignment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn byte_images(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> ImageDataset {
    let pixels = (0..n * h * w).map(|_| f64::from(rng.random::<u8>()) / 255.0).collect();
    let labels = (0..n).map(|i| i % 10).collect();
    ImageDataset::new(1, h, w, pixels, Some(labels), "fixture").unwrap()
}

#[test]
fn idx_roundtrip_is_pixel_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ds = byte_images(&mut rng, 2, 28, 28);
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
    write_idx_images(&ip, &ds).unwrap();
    write_idx_labels(&lp, ds.labels().unwrap()).unwrap();
    let back = load_idx(&ip, &lp).unwrap();
    assert_eq!((back.len(), back.channels(), back.height(), back.width()), (2, 1, 28, 28));
    assert_eq!(back.pixels(), ds.pixels());
    assert_eq!(back.labels(), ds.labels());
    let bytes = fs::read(&ip).unwrap();
    write_idx_images(&ip, &back).unwrap();
    assert_eq!(fs::read(&ip).unwrap(), bytes);
    assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
    assert_eq!(bytes.len(), 16 + 2 * 784);
}

#[test]
fn idx_rejects_bad_magic_truncation_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ds = byte_images(&mut rng, 3, 4, 4);
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
    write_idx_images(&ip, &ds).unwrap();
    write_idx_labels(&lp, ds.labels().unwrap()).unwrap();
    // Label file where the image file is expected.
    match load_idx(&lp, &lp) {
        Err(DataError::BadMagic { found, expected }) => {
            assert_eq!((found, expected), (0x801, 0x803));
            assert!(DataError::BadMagic { found, expected }.to_string().contains("0x00000801"));
        }
        other => panic!("expected bad magic, got {other:?}"),
    }
    let bytes = fs::read(&ip).unwrap();
    fs::write(&ip, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(load_idx(&ip, &lp), Err(DataError::Truncated { .. })));
    fs::write(&ip, &bytes).unwrap();
    write_idx_labels(&lp, &[1, 2]).unwrap();
    assert!(matches!(load_idx(&ip, &lp), Err(DataError::CountMismatch { images: 3, labels: 2 })));
    assert!(matches!(load_idx(&dir.path().join("missing"), &lp), Err(DataError::Io { .. })));
}

#[test]
fn bundled_mnist_subset_loads() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-5k");
    let train = load_mnist(&dir, Split::Train).unwrap();
    let test = load_mnist(&dir, Split::Test).unwrap();
    assert_eq!((train.len(), test.len()), (4000, 1000));
    assert_eq!((train.height(), train.width()), (28, 28));
    let mut per_digit = [0; 10];
    for &l in test.labels().unwrap() {
        per_digit[l] += 1;
    }
    assert_eq!(per_digit, [100; 10]);
}

#[test]
fn dataset_rejects_values_outside_unit_interval() {
    assert!(matches!(ImageDataset::new(1, 1, 2, vec![0.5, 1.5], None, "x"), Err(DataError::OutOfRange(_))));
    assert!(matches!(
        ImageDataset::new(1, 1, 2, vec![0.5, 0.5], Some(vec![1, 2]), "x"),
        Err(DataError::CountMismatch { .. })
    ));
}

#[test]
fn synth_mixture_is_seeded_and_well_separated() {
    let a = synth_mixture(4, 50, 3, 30.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let b = synth_mixture(4, 50, 3, 30.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 200);
    let s = silhouette(&ClusterAssignment::from_flat(3, a.points.clone(), a.labels.clone()).unwrap()).unwrap();
    assert!(s > 0.9, "silhouette {s}");
    assert!(synth_mixture(4, 50, 3, 0.0, &mut ChaCha8Rng::seed_from_u64(7)).is_err());
    let single = synth_mixture(1, 20, 2, 1.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    assert!(silhouette(&ClusterAssignment::from_flat(2, single.points, single.labels).unwrap()).is_err());
}

#[test]
fn disabled_corruption_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ds = byte_images(&mut rng, 5, 28, 28);
    let out = corrupt(&ds, &Corruption::none(), &mut rng).unwrap();
    assert_eq!(out.pixels(), ds.pixels());
    assert_eq!(rotate_bilinear(ds.image(0), 28, 28, 0.0), ds.image(0));
}

#[test]
fn corruption_stays_in_range_and_is_seeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ds = byte_images(&mut rng, 20, 28, 28);
    let ops = Corruption { noise_sigma: 0.5, ..Corruption::default() };
    let a = corrupt(&ds, &ops, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = corrupt(&ds, &ops, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
    assert!(a.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_ne!(a.pixels(), ds.pixels());
    assert_eq!(a.labels(), ds.labels());
}

#[test]
fn flip_is_an_involution() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ds = byte_images(&mut rng, 3, 7, 9);
    let ops = Corruption { flip_prob: 1.0, ..Corruption::none() };
    let once = corrupt(&ds, &ops, &mut rng).unwrap();
    assert_eq!(once.image(0)[0], ds.image(0)[8]);
    let twice = corrupt(&once, &ops, &mut rng).unwrap();
    assert_eq!(twice.pixels(), ds.pixels());
    assert_eq!(flip_horizontal(&flip_horizontal(ds.image(1), 9), 9), ds.image(1));
}

#[test]
fn quarter_turn_rotation_permutes_pixels() {
    // A 90° turn on a square grid maps pixel centres onto pixel centres.
    let img: Vec<f64> = (0..25).map(|v| v as f64 / 24.0).collect();
    let r = rotate_bilinear(&img, 5, 5, 90.0);
    for y in 0..5 {
        for x in 0..5 {
            // Inverse mapping: source (sy, sx) = (c·dy − s·dx, s·dy + c·dx) + centre.
            let (sy, sx) = (4 - x, y);
            assert!((r[y * 5 + x] - img[sy * 5 + sx]).abs() < 1e-12);
        }
    }
    let back = rotate_bilinear(&r, 5, 5, -90.0);
    for (a, b) in back.iter().zip(&img) {
        assert!((a - b).abs() < 1e-12);
    }
}
