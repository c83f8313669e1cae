use rand::{Rng, RngCore};

use super::{
    check_rows, mean_row_sq_dist, one_hot, usage_counts, Mode, QuantizeResult, Quantizer, QuantizerError,
    QuantizerKind, PARAM_PREFIX,
};
use crate::diffcore::{straight_through, Bindings, DiffTensor, ParamId, ParamStore, Tensor};
use crate::geometry::differentiable::{log_map_origin, project_to_ball};
use crate::geometry::{distance_raw, safe_project, BallConfig};

/// Additive smoothing of EMA cluster sizes.
const EMA_EPS: f64 = 1e-5;

/// Index of the nearest codebook row for each point; ties go to the lowest index.
pub fn nearest_euclidean(points: &Tensor, codebook: &Tensor) -> Vec<usize> {
    let d = codebook.shape()[1];
    points
        .data()
        .chunks(d)
        .map(|p| {
            argmin(codebook.data().chunks(d).map(|c| p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
        })
        .collect()
}

/// Index of the Poincaré-nearest codebook point for each ball point.
pub fn nearest_poincare(points: &Tensor, codebook: &Tensor, cfg: BallConfig) -> Vec<usize> {
    let d = codebook.shape()[1];
    let c = cfg.curvature();
    points.data().chunks(d).map(|p| argmin(codebook.data().chunks(d).map(|q| distance_raw(p, q, c)))).collect()
}

fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, v) in values.enumerate() {
        if v < best.1 {
            best = (k, v);
        }
    }
    best.0
}

fn uniform_codebook(rng: &mut dyn RngCore, num_codes: usize, dim: usize) -> Tensor {
    let bound = 1.0 / num_codes as f64;
    let data = (0..num_codes * dim).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(vec![num_codes, dim], data).expect("shape matches data")
}

/// `‖sg[z_e] − z_q‖² + β ‖z_e − sg[z_q]‖²`, averaged over rows.
fn vq_loss<'g>(
    z_e: &DiffTensor<'g>,
    z_q: &DiffTensor<'g>,
    beta: f64,
    codebook_term: bool,
) -> Result<DiffTensor<'g>, QuantizerError> {
    let commit = mean_row_sq_dist(z_e, &z_q.detach())?.scale(beta);
    if !codebook_term {
        return Ok(commit);
    }
    Ok(mean_row_sq_dist(&z_e.detach(), z_q)?.add(&commit)?)
}

#[derive(Clone, Debug)]
struct EmaState {
    decay: f64,
    counts: ParamId,
    sums: ParamId,
    pending: Option<(Vec<f64>, Vec<f64>)>,
}

/// Nearest-neighbour quantization with a learned Euclidean codebook.
#[derive(Clone, Debug)]
pub struct KmeansVq {
    num_codes: usize,
    dim: usize,
    beta: f64,
    codebook: ParamId,
    ema: Option<EmaState>,
}

impl KmeansVq {
    pub fn new(store: &mut ParamStore, num_codes: usize, dim: usize, beta: f64, rng: &mut dyn RngCore) -> Self {
        let codebook = store.add(format!("{PARAM_PREFIX}codebook"), uniform_codebook(rng, num_codes, dim));
        Self { num_codes, dim, beta, codebook, ema: None }
    }

    /// Switches codebook learning from gradient descent to online EMA updates.
    pub fn with_ema(mut self, store: &mut ParamStore, decay: f64) -> Self {
        store.set_trainable(self.codebook, false);
        let counts = store.add(format!("{PARAM_PREFIX}ema_counts"), Tensor::ones(&[self.num_codes]));
        let sums = store.add(format!("{PARAM_PREFIX}ema_sums"), store.get(self.codebook).clone());
        store.set_trainable(counts, false);
        store.set_trainable(sums, false);
        self.ema = Some(EmaState { decay, counts, sums, pending: None });
        self
    }

    pub fn codebook_id(&self) -> ParamId {
        self.codebook
    }

    pub fn uses_ema(&self) -> bool {
        self.ema.is_some()
    }
}

impl Quantizer for KmeansVq {
    fn kind(&self) -> QuantizerKind {
        QuantizerKind::KmeansVq
    }

    fn num_codes(&self) -> usize {
        self.num_codes
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn forward<'g>(
        &mut self,
        z_e: &DiffTensor<'g>,
        params: &Bindings<'g, '_>,
        mode: Mode,
        _rng: &mut dyn RngCore,
    ) -> Result<QuantizeResult<'g>, QuantizerError> {
        check_rows(z_e, self.dim)?;
        let codebook = params.var(self.codebook);
        let z_val = z_e.value();
        let indices = nearest_euclidean(&z_val, &codebook.value());
        let select = params.graph().constant(one_hot(&indices, self.num_codes));
        let z_q = select.matmul(&codebook)?;
        let aux_loss = vq_loss(z_e, &z_q, self.beta, self.ema.is_none())?;
        if let (Some(ema), Mode::Train) = (self.ema.as_mut(), mode) {
            let mut counts = vec![0.0; self.num_codes];
            let mut sums = vec![0.0; self.num_codes * self.dim];
            for (row, &k) in z_val.data().chunks(self.dim).zip(&indices) {
                counts[k] += 1.0;
                for (s, v) in sums[k * self.dim..(k + 1) * self.dim].iter_mut().zip(row) {
                    *s += v;
                }
            }
            ema.pending = Some((counts, sums));
        }
        Ok(QuantizeResult {
            z_q: straight_through(&z_q, z_e)?,
            usage_counts: usage_counts(&indices, self.num_codes),
            indices,
            logits: None,
            aux_loss,
        })
    }

    fn after_step(&mut self, store: &mut ParamStore, _rng: &mut dyn RngCore) -> Result<(), QuantizerError> {
        let Some(ema) = self.ema.as_mut() else { return Ok(()) };
        let Some((counts, sums)) = ema.pending.take() else { return Ok(()) };
        let g = ema.decay;
        for (n, c) in store.get_mut(ema.counts).data_mut().iter_mut().zip(&counts) {
            *n = g * *n + (1.0 - g) * c;
        }
        for (m, s) in store.get_mut(ema.sums).data_mut().iter_mut().zip(&sums) {
            *m = g * *m + (1.0 - g) * s;
        }
        let n = store.get(ema.counts).data().to_vec();
        let total: f64 = n.iter().sum();
        let k = self.num_codes as f64;
        let sums = store.get(ema.sums).data().to_vec();
        let d = self.dim;
        let book = store.get_mut(self.codebook).data_mut();
        for (j, &nj) in n.iter().enumerate() {
            let smoothed = (nj + EMA_EPS) / (total + k * EMA_EPS) * total;
            if smoothed > 0.0 {
                for i in 0..d {
                    book[j * d + i] = sums[j * d + i] / smoothed;
                }
            }
        }
        Ok(())
    }

    fn codebook(&self, store: &ParamStore) -> Result<Tensor, QuantizerError> {
        Ok(store.get(self.codebook).clone())
    }
}

/// Poincaré nearest-neighbour quantization with a codebook on the ball.
#[derive(Clone, Debug)]
pub struct HyperKmeansVq {
    num_codes: usize,
    dim: usize,
    beta: f64,
    ball: BallConfig,
    codebook: ParamId,
}

impl HyperKmeansVq {
    pub fn new(
        store: &mut ParamStore,
        num_codes: usize,
        dim: usize,
        beta: f64,
        ball: BallConfig,
        rng: &mut dyn RngCore,
    ) -> Self {
        let tangent = uniform_codebook(rng, num_codes, dim);
        let rows: Vec<Vec<f64>> = (0..num_codes)
            .map(|k| {
                let v = crate::geometry::TangentVector::new(tangent.row(k).to_vec()).expect("finite init");
                crate::geometry::exp_map_origin(&v, ball).into_coords()
            })
            .collect();
        let codebook =
            store.add(format!("{PARAM_PREFIX}ball_codebook"), Tensor::from_rows(&rows).expect("rectangular"));
        Self { num_codes, dim, beta, ball, codebook }
    }

    pub fn codebook_id(&self) -> ParamId {
        self.codebook
    }

    pub fn ball(&self) -> BallConfig {
        self.ball
    }
}

impl Quantizer for HyperKmeansVq {
    fn kind(&self) -> QuantizerKind {
        QuantizerKind::HyperKmeansVq
    }

    fn num_codes(&self) -> usize {
        self.num_codes
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn forward<'g>(
        &mut self,
        z_e: &DiffTensor<'g>,
        params: &Bindings<'g, '_>,
        _mode: Mode,
        _rng: &mut dyn RngCore,
    ) -> Result<QuantizeResult<'g>, QuantizerError> {
        check_rows(z_e, self.dim)?;
        let points = params.var(self.codebook);
        let z_h = project_to_ball(&z_e.detach(), self.ball)?;
        let indices = nearest_poincare(&z_h.value(), &points.value(), self.ball);
        let select = params.graph().constant(one_hot(&indices, self.num_codes));
        let z_q = select.matmul(&log_map_origin(&points, self.ball)?)?;
        let aux_loss = vq_loss(z_e, &z_q, self.beta, true)?;
        Ok(QuantizeResult {
            z_q: straight_through(&z_q, z_e)?,
            usage_counts: usage_counts(&indices, self.num_codes),
            indices,
            logits: None,
            aux_loss,
        })
    }

    /// Pulls codebook points that drifted past the safety shell back inside the ball.
    fn after_step(&mut self, store: &mut ParamStore, _rng: &mut dyn RngCore) -> Result<(), QuantizerError> {
        let d = self.dim;
        let ball = self.ball;
        let book = store.get_mut(self.codebook).data_mut();
        for row in book.chunks_mut(d) {
            let inside = safe_project(row, ball)?;
            row.copy_from_slice(inside.coords());
        }
        Ok(())
    }

    fn codebook(&self, store: &ParamStore) -> Result<Tensor, QuantizerError> {
        let g = crate::diffcore::Graph::new();
        let points = g.constant(store.get(self.codebook).clone());
        Ok(log_map_origin(&points, self.ball)?.value().as_ref().clone())
    }
}
