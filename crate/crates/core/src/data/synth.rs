use rand::RngCore;
use rand_distr::{Distribution, Normal};

use super::DataError;
use crate::diffcore::Tensor;

/// Labelled points in `ℝ^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorDataset {
    pub dim: usize,
    pub points: Vec<f64>,
    pub labels: Vec<usize>,
}

impl VectorDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows as an `(n, d)` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.dim], self.points.clone()).expect("rows tile the buffer")
    }

    /// Points as 1×1 latent grids of shape `(n, d, 1, 1)`.
    pub fn to_latent_grid(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.dim, 1, 1], self.points.clone()).expect("rows tile the buffer")
    }
}

/// Isotropic unit-variance Gaussian blobs whose centres are `separation` apart on average.
///
/// Centres are drawn uniformly on the sphere of radius `separation / √2`, so the
/// expected distance between two centres is close to `separation`.
pub fn synth_mixture(
    clusters: usize,
    per_cluster: usize,
    dim: usize,
    separation: f64,
    rng: &mut dyn RngCore,
) -> Result<VectorDataset, DataError> {
    if !(separation > 0.0) {
        return Err(DataError::Invalid(format!("separation must be positive, got {separation}")));
    }
    if clusters == 0 || per_cluster == 0 || dim == 0 {
        return Err(DataError::Invalid("empty mixture".into()));
    }
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let radius = separation / std::f64::consts::SQRT_2;
    let centres: Vec<Vec<f64>> = (0..clusters)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| unit.sample(rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.iter().map(|x| x * radius / n).collect()
        })
        .collect();
    let mut points = Vec::with_capacity(clusters * per_cluster * dim);
    let mut labels = Vec::with_capacity(clusters * per_cluster);
    for _ in 0..per_cluster {
        for (k, centre) in centres.iter().enumerate() {
            points.extend(centre.iter().map(|c| c + unit.sample(rng)));
            labels.push(k);
        }
    }
    Ok(VectorDataset { dim, points, labels })
}
