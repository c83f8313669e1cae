use rand::{Rng, RngCore};

use super::gumbel::{normal_init, select_rows};
use super::{
    check_rows, usage_counts, zero_loss, GumbelMode, Mode, QuantizeResult, Quantizer, QuantizerError, QuantizerKind,
    TemperatureSchedule, PARAM_PREFIX,
};
use crate::diffcore::{Bindings, DiffTensor, ParamId, ParamStore, Tensor};
use crate::geometry::differentiable::{hyperplane_logits, plane_codebook, project_to_ball};
use crate::geometry::{hyperplane_foot, hyperplane_signed_score, BallConfig, BallPoint, GeometryError, TangentVector};

/// Normals shorter than this are re-sampled after an update.
pub const MIN_NORMAL_NORM: f64 = 1e-8;

/// Offset range for freshly sampled planes.
const OFFSET_INIT: f64 = 1.0;

/// A unidirectional decision hyperplane through `exp_0(r â)` with normal `a`.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperbolicHyperplane {
    pub a: TangentVector,
    pub r: f64,
}

impl HyperbolicHyperplane {
    pub fn new(a: TangentVector, r: f64) -> Result<Self, GeometryError> {
        if !(a.norm() > 0.0) {
            return Err(GeometryError::DegenerateNormal);
        }
        Ok(Self { a, r })
    }

    /// Representative tangent vector `r · a/‖a‖`.
    pub fn codebook_vector(&self) -> Vec<f64> {
        let n = self.a.norm();
        self.a.coords().iter().map(|v| self.r * v / n).collect()
    }

    /// Foot point `q = exp_0(r â)` on the ball.
    pub fn foot(&self, cfg: BallConfig) -> Result<BallPoint, GeometryError> {
        hyperplane_foot(&self.a, self.r, cfg)
    }

    pub fn score(&self, x: &BallPoint) -> Result<f64, GeometryError> {
        hyperplane_signed_score(x, &self.a, self.r)
    }
}

/// Stacks `r_k · â_k` into a `(K, d)` matrix.
pub fn hypervq_codebook(planes: &[HyperbolicHyperplane]) -> Result<Tensor, QuantizerError> {
    let rows: Vec<Vec<f64>> = planes.iter().map(HyperbolicHyperplane::codebook_vector).collect();
    Ok(Tensor::from_rows(&rows)?)
}

/// Parameter handles of `K` hyperplanes: normals `(K, d)` and offsets `(K)`.
#[derive(Clone, Copy, Debug)]
pub struct PlaneParams {
    pub normals: ParamId,
    pub offsets: ParamId,
}

impl PlaneParams {
    /// Registers freshly initialised planes: `a ~ N(0, 1)`, `r ~ U(-1, 1)`.
    pub fn register(store: &mut ParamStore, num_codes: usize, dim: usize, rng: &mut dyn RngCore) -> Self {
        let normals = store.add(format!("{PARAM_PREFIX}normals"), normal_init(rng, &[num_codes, dim], 1.0));
        let offsets: Vec<f64> = (0..num_codes).map(|_| rng.random_range(-OFFSET_INIT..OFFSET_INIT)).collect();
        let offsets = store.add(format!("{PARAM_PREFIX}offsets"), Tensor::new(vec![num_codes], offsets).expect("1-D"));
        Self { normals, offsets }
    }

    pub fn logits<'g>(
        &self,
        z_e: &DiffTensor<'g>,
        params: &Bindings<'g, '_>,
        cfg: BallConfig,
    ) -> Result<DiffTensor<'g>, QuantizerError> {
        let z_h = project_to_ball(z_e, cfg)?;
        Ok(hyperplane_logits(&z_h, &params.var(self.normals), &params.var(self.offsets), cfg)?)
    }

    /// Re-samples every plane whose normal has collapsed below [`MIN_NORMAL_NORM`].
    pub fn resample_degenerate(&self, store: &mut ParamStore, rng: &mut dyn RngCore) -> usize {
        let dim = store.get(self.normals).shape()[1];
        let degenerate: Vec<usize> = store
            .get(self.normals)
            .data()
            .chunks(dim)
            .enumerate()
            .filter(|(_, row)| row.iter().map(|v| v * v).sum::<f64>().sqrt() < MIN_NORMAL_NORM)
            .map(|(k, _)| k)
            .collect();
        for &k in &degenerate {
            let fresh = normal_init(rng, &[dim], 1.0);
            store.get_mut(self.normals).data_mut()[k * dim..(k + 1) * dim].copy_from_slice(fresh.data());
            store.get_mut(self.offsets).data_mut()[k] = rng.random_range(-OFFSET_INIT..OFFSET_INIT);
        }
        degenerate.len()
    }

    pub fn planes(&self, store: &ParamStore) -> Result<Vec<HyperbolicHyperplane>, QuantizerError> {
        let a = store.get(self.normals);
        let r = store.get(self.offsets);
        let dim = a.shape()[1];
        a.data()
            .chunks(dim)
            .zip(r.data())
            .map(|(row, &r)| Ok(HyperbolicHyperplane::new(TangentVector::new(row.to_vec())?, r)?))
            .collect()
    }
}

/// Hyperbolic MLR selection with hyperplane representatives as codebook.
#[derive(Clone, Debug)]
pub struct HyperVq {
    num_codes: usize,
    dim: usize,
    ball: BallConfig,
    planes: PlaneParams,
    schedule: TemperatureSchedule,
    gumbel: GumbelMode,
}

impl HyperVq {
    pub fn new(
        store: &mut ParamStore,
        num_codes: usize,
        dim: usize,
        ball: BallConfig,
        schedule: TemperatureSchedule,
        gumbel: GumbelMode,
        rng: &mut dyn RngCore,
    ) -> Self {
        let planes = PlaneParams::register(store, num_codes, dim, rng);
        Self { num_codes, dim, ball, planes, schedule, gumbel }
    }

    pub fn planes(&self) -> PlaneParams {
        self.planes
    }

    pub fn ball(&self) -> BallConfig {
        self.ball
    }
}

impl Quantizer for HyperVq {
    fn kind(&self) -> QuantizerKind {
        QuantizerKind::HyperVq
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
        rng: &mut dyn RngCore,
    ) -> Result<QuantizeResult<'g>, QuantizerError> {
        check_rows(z_e, self.dim)?;
        let logits = self.planes.logits(z_e, params, self.ball)?;
        let codebook = plane_codebook(&params.var(self.planes.normals), &params.var(self.planes.offsets))?;
        let (z_q, indices) = select_rows(&logits, &codebook, &mut self.schedule, self.gumbel, mode, rng)?;
        Ok(QuantizeResult {
            z_q,
            usage_counts: usage_counts(&indices, self.num_codes),
            indices,
            logits: Some(logits),
            aux_loss: zero_loss(params),
        })
    }

    fn after_step(&mut self, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<(), QuantizerError> {
        self.planes.resample_degenerate(store, rng);
        Ok(())
    }

    fn codebook(&self, store: &ParamStore) -> Result<Tensor, QuantizerError> {
        hypervq_codebook(&self.planes.planes(store)?)
    }

    fn schedule(&self) -> Option<&TemperatureSchedule> {
        Some(&self.schedule)
    }
}

/// Hyperbolic MLR selection over a free embedding matrix.
#[derive(Clone, Debug)]
pub struct HyperEmbMatVq {
    num_codes: usize,
    dim: usize,
    ball: BallConfig,
    planes: PlaneParams,
    embedding: ParamId,
    schedule: TemperatureSchedule,
    gumbel: GumbelMode,
}

impl HyperEmbMatVq {
    pub fn new(
        store: &mut ParamStore,
        num_codes: usize,
        dim: usize,
        ball: BallConfig,
        schedule: TemperatureSchedule,
        gumbel: GumbelMode,
        rng: &mut dyn RngCore,
    ) -> Self {
        let planes = PlaneParams::register(store, num_codes, dim, rng);
        let embedding = store.add(format!("{PARAM_PREFIX}embedding"), normal_init(rng, &[num_codes, dim], 1.0));
        Self { num_codes, dim, ball, planes, embedding, schedule, gumbel }
    }

    pub fn planes(&self) -> PlaneParams {
        self.planes
    }

    pub fn embedding(&self) -> ParamId {
        self.embedding
    }
}

impl Quantizer for HyperEmbMatVq {
    fn kind(&self) -> QuantizerKind {
        QuantizerKind::HyperEmbMatVq
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
        rng: &mut dyn RngCore,
    ) -> Result<QuantizeResult<'g>, QuantizerError> {
        check_rows(z_e, self.dim)?;
        let logits = self.planes.logits(z_e, params, self.ball)?;
        let (z_q, indices) =
            select_rows(&logits, &params.var(self.embedding), &mut self.schedule, self.gumbel, mode, rng)?;
        Ok(QuantizeResult {
            z_q,
            usage_counts: usage_counts(&indices, self.num_codes),
            indices,
            logits: Some(logits),
            aux_loss: zero_loss(params),
        })
    }

    fn after_step(&mut self, store: &mut ParamStore, rng: &mut dyn RngCore) -> Result<(), QuantizerError> {
        self.planes.resample_degenerate(store, rng);
        Ok(())
    }

    fn codebook(&self, store: &ParamStore) -> Result<Tensor, QuantizerError> {
        Ok(store.get(self.embedding).clone())
    }

    fn schedule(&self) -> Option<&TemperatureSchedule> {
        Some(&self.schedule)
    }
}
