//! Cluster-quality and codebook-usage metrics.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geometry::{distance_raw, BallConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("usage histogram is empty")]
    EmptyHistogram,
    #[error("{points} points but {labels} labels")]
    LengthMismatch { points: usize, labels: usize },
    #[error("points have inconsistent dimension")]
    RaggedPoints,
    #[error("need at least 2 clusters, found {0}")]
    TooFewClusters(usize),
    #[error("reconstruction shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
}

/// Exponentiated Shannon entropy of code usage; lies in `[1, K]`.
pub fn perplexity(usage_counts: &[u64]) -> Result<f64, MetricsError> {
    let total: u64 = usage_counts.iter().sum();
    if total == 0 {
        return Err(MetricsError::EmptyHistogram);
    }
    let total = total as f64;
    let entropy: f64 = usage_counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    Ok(entropy.exp())
}

/// Points with one cluster label each; only labels that occur define clusters.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    dim: usize,
    points: Vec<f64>,
    labels: Vec<usize>,
}

impl ClusterAssignment {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self, MetricsError> {
        let dim = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != dim) {
            return Err(MetricsError::RaggedPoints);
        }
        Self::from_flat(dim, points.concat(), labels)
    }

    /// Builds from row-major `points` of width `dim`.
    pub fn from_flat(dim: usize, points: Vec<f64>, labels: Vec<usize>) -> Result<Self, MetricsError> {
        let n = if dim == 0 { 0 } else { points.len() / dim };
        if dim == 0 || points.len() != n * dim {
            return Err(MetricsError::RaggedPoints);
        }
        if n != labels.len() {
            return Err(MetricsError::LengthMismatch { points: n, labels: labels.len() });
        }
        Ok(Self { dim, points, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Member indices per distinct label, in ascending label order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            map.entry(l).or_default().push(i);
        }
        map.into_values().collect()
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean silhouette `(b − a) / max(a, b)` under Euclidean distance.
pub fn silhouette(assign: &ClusterAssignment) -> Result<f64, MetricsError> {
    silhouette_with(assign, euclidean)
}

/// Silhouette under the Poincaré distance; points must lie inside the ball.
pub fn silhouette_poincare(assign: &ClusterAssignment, cfg: BallConfig) -> Result<f64, MetricsError> {
    let c = cfg.curvature();
    silhouette_with(assign, |a, b| distance_raw(a, b, c))
}

/// Silhouette with an arbitrary metric. Points in singleton clusters score 0.
pub fn silhouette_with(assign: &ClusterAssignment, dist: impl Fn(&[f64], &[f64]) -> f64) -> Result<f64, MetricsError> {
    let clusters = assign.clusters();
    if clusters.len() < 2 {
        return Err(MetricsError::TooFewClusters(clusters.len()));
    }
    let mut owner = vec![0; assign.len()];
    for (c, members) in clusters.iter().enumerate() {
        for &i in members {
            owner[i] = c;
        }
    }
    let mut total = 0.0;
    for i in 0..assign.len() {
        let own = owner[i];
        if clusters[own].len() == 1 {
            continue;
        }
        let mut sums = vec![0.0; clusters.len()];
        for j in 0..assign.len() {
            if j != i {
                sums[owner[j]] += dist(assign.point(i), assign.point(j));
            }
        }
        let a = sums[own] / (clusters[own].len() - 1) as f64;
        let b = (0..clusters.len())
            .filter(|&c| c != own)
            .map(|c| sums[c] / clusters[c].len() as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / assign.len() as f64)
}

/// Davies–Bouldin index under Euclidean distance; lower is better.
///
/// Pairs with coincident centroids and nonzero scatter contribute `+∞`.
pub fn davies_bouldin(assign: &ClusterAssignment) -> Result<f64, MetricsError> {
    let clusters = assign.clusters();
    let k = clusters.len();
    if k < 2 {
        return Err(MetricsError::TooFewClusters(k));
    }
    let d = assign.dim();
    let centroids: Vec<Vec<f64>> = clusters
        .iter()
        .map(|members| {
            let mut c = vec![0.0; d];
            for &i in members {
                for (acc, v) in c.iter_mut().zip(assign.point(i)) {
                    *acc += v;
                }
            }
            c.iter().map(|v| v / members.len() as f64).collect()
        })
        .collect();
    let scatter: Vec<f64> = clusters
        .iter()
        .zip(&centroids)
        .map(|(members, c)| members.iter().map(|&i| euclidean(assign.point(i), c)).sum::<f64>() / members.len() as f64)
        .collect();
    let mut total = 0.0;
    for i in 0..k {
        let mut worst: f64 = 0.0;
        for j in 0..k {
            if i == j {
                continue;
            }
            let num = scatter[i] + scatter[j];
            let gap = euclidean(&centroids[i], &centroids[j]);
            let ratio = if gap > 0.0 {
                num / gap
            } else if num > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            worst = worst.max(ratio);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Running per-element squared-error mean over many batches.
#[derive(Clone, Debug, Default)]
pub struct MseAccumulator {
    sum: f64,
    count: usize,
}

impl MseAccumulator {
    pub fn add(&mut self, target: &[f64], prediction: &[f64]) -> Result<(), MetricsError> {
        if target.len() != prediction.len() {
            return Err(MetricsError::ShapeMismatch(vec![target.len()], vec![prediction.len()]));
        }
        self.sum += target.iter().zip(prediction).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        self.count += target.len();
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean squared error so far; zero before any data.
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Dataset-mean per-pixel squared error of `reconstruct` over `n` items fetched in batches.
pub fn reconstruction_mse<E>(
    batches: impl IntoIterator<Item = Vec<f64>>,
    mut reconstruct: impl FnMut(&[f64]) -> Result<Vec<f64>, E>,
) -> Result<f64, E>
where
    E: From<MetricsError>,
{
    let mut acc = MseAccumulator::default();
    for batch in batches {
        let out = reconstruct(&batch)?;
        acc.add(&batch, &out)?;
    }
    Ok(acc.mean())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perplexity_examples() {
        assert!((perplexity(&[5; 16]).unwrap() - 16.0).abs() < 1e-12);
        assert_eq!(perplexity(&[0, 9, 0]).unwrap(), 1.0);
        let expected = (-(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln())).exp();
        assert!((perplexity(&[3, 1]).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 1.7548).abs() < 1e-4);
        assert_eq!(perplexity(&[0, 0]), Err(MetricsError::EmptyHistogram));
    }

    #[test]
    fn davies_bouldin_handles_coincident_centroids() {
        let a = ClusterAssignment::new(vec![vec![-1.0], vec![1.0], vec![0.0]], vec![0, 0, 1]).unwrap();
        assert_eq!(davies_bouldin(&a).unwrap(), f64::INFINITY);
        let b = ClusterAssignment::new(vec![vec![0.0], vec![0.0]], vec![0, 1]).unwrap();
        assert_eq!(davies_bouldin(&b).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_assignments() {
        assert!(matches!(
            ClusterAssignment::new(vec![vec![0.0], vec![1.0, 2.0]], vec![0, 1]),
            Err(MetricsError::RaggedPoints)
        ));
        assert!(matches!(
            ClusterAssignment::new(vec![vec![0.0]], vec![0, 1]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        let one = ClusterAssignment::new(vec![vec![0.0], vec![1.0]], vec![4, 4]).unwrap();
        assert_eq!(silhouette(&one), Err(MetricsError::TooFewClusters(1)));
        assert_eq!(davies_bouldin(&one), Err(MetricsError::TooFewClusters(1)));
    }
}
