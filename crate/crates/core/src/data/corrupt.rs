use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use super::{DataError, ImageDataset};

/// Random corruptions applied independently per image, in the order rotate, flip, noise.
#[derive(Clone, Debug, PartialEq)]
pub struct Corruption {
    /// Maximum absolute rotation in degrees; `0` disables rotation.
    pub max_rotation_deg: f64,
    /// Probability of a horizontal flip.
    pub flip_prob: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise_sigma: f64,
}

impl Default for Corruption {
    fn default() -> Self {
        Self { max_rotation_deg: 30.0, flip_prob: 0.5, noise_sigma: 0.1 }
    }
}

impl Corruption {
    pub fn none() -> Self {
        Self { max_rotation_deg: 0.0, flip_prob: 0.0, noise_sigma: 0.0 }
    }

    fn validate(&self) -> Result<(), DataError> {
        if !(self.noise_sigma >= 0.0 && self.max_rotation_deg >= 0.0 && (0.0..=1.0).contains(&self.flip_prob)) {
            return Err(DataError::Invalid(format!("invalid corruption {self:?}")));
        }
        Ok(())
    }
}

/// Mirrors each `h × w` plane of `image` left to right.
pub fn flip_horizontal(image: &[f64], width: usize) -> Vec<f64> {
    image.chunks(width).flat_map(|row| row.iter().rev().copied()).collect()
}

/// Rotates each `h × w` plane about its centre by `degrees`, bilinear with zero fill.
pub fn rotate_bilinear(image: &[f64], height: usize, width: usize, degrees: f64) -> Vec<f64> {
    let (s, c) = degrees.to_radians().sin_cos();
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; image.len()];
    for (plane_in, plane_out) in image.chunks(height * width).zip(out.chunks_mut(height * width)) {
        let at = |y: isize, x: isize| -> f64 {
            if y < 0 || x < 0 || y >= height as isize || x >= width as isize {
                0.0
            } else {
                plane_in[y as usize * width + x as usize]
            }
        };
        for y in 0..height {
            for x in 0..width {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                let sy = c * dy - s * dx + cy;
                let sx = s * dy + c * dx + cx;
                let (y0, x0) = (sy.floor(), sx.floor());
                let (fy, fx) = (sy - y0, sx - x0);
                let (y0, x0) = (y0 as isize, x0 as isize);
                plane_out[y * width + x] = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                    + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
            }
        }
    }
    out
}

/// Returns a corrupted copy of `ds`; deterministic given the generator state.
pub fn corrupt(ds: &ImageDataset, ops: &Corruption, rng: &mut dyn RngCore) -> Result<ImageDataset, DataError> {
    ops.validate()?;
    let noise = Normal::new(0.0, ops.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut pixels = Vec::with_capacity(ds.pixels().len());
    for i in 0..ds.len() {
        let mut img = ds.image(i).to_vec();
        if ops.max_rotation_deg > 0.0 {
            let angle = rng.random_range(-ops.max_rotation_deg..=ops.max_rotation_deg);
            img = rotate_bilinear(&img, ds.height(), ds.width(), angle);
        }
        if ops.flip_prob > 0.0 && rng.random_bool(ops.flip_prob) {
            img = flip_horizontal(&img, ds.width());
        }
        if ops.noise_sigma > 0.0 {
            for v in img.iter_mut() {
                *v += noise.sample(rng);
            }
        }
        pixels.extend(img.into_iter().map(|v| v.clamp(0.0, 1.0)));
    }
    Ok(ds.with_pixels(pixels, format!("{}-corrupted", ds.split())))
}
