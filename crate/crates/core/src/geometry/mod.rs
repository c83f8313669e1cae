//! Poincaré-ball geometry.
//!
//! The ball of curvature `-c` is the open set `{x : ‖x‖ < 1/√c}`. This module
//! provides the gyrovector operations on plain `f64` vectors: Möbius addition,
//! exponential and logarithmic maps, geodesic distance, the boundary-safe
//! projection and the signed score of a point against a unidirectional
//! hyperplane. [`differentiable`] mirrors the ones needed for training on
//! batched [`DiffTensor`](crate::DiffTensor) rows.
//!
//! | Function | Maps |
//! |---|---|
//! | [`exp_map`], [`exp_map_origin`] | tangent space → ball |
//! | [`log_map`], [`log_map_origin`] | ball → tangent space |
//! | [`mobius_add`] | ball × ball → ball |
//! | [`distance`] | ball × ball → ℝ≥0 |
//! | [`safe_project`] | ℝⁿ → shell of radius `(1-ε)/√c` |
//! | [`hyperplane_signed_score`] | ball → ℝ (MLR logit) |

pub mod differentiable;

use thiserror::Error;

/// Default curvature magnitude.
pub const DEFAULT_CURVATURE: f64 = 1.0;
/// Default boundary margin of the safe projection.
pub const DEFAULT_BOUNDARY_EPS: f64 = 1e-5;

/// How far past an open-domain edge a hyperbolic-function argument may land
/// through rounding before it is treated as a logic error.
pub const DOMAIN_SLACK: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("curvature must be positive and finite, got {0}")]
    InvalidCurvature(f64),
    #[error("boundary epsilon must lie in (0, 1), got {0}")]
    InvalidBoundaryEps(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("points live on balls of different curvature ({0} vs {1})")]
    CurvatureMismatch(f64, f64),
    #[error("point with c·‖x‖² = {0} is not strictly inside the ball")]
    OutsideBall(f64),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("hyperplane normal has zero norm")]
    DegenerateNormal,
}

/// Curvature and boundary margin of a Poincaré ball.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallConfig {
    curvature: f64,
    boundary_eps: f64,
}

impl Default for BallConfig {
    fn default() -> Self {
        Self { curvature: DEFAULT_CURVATURE, boundary_eps: DEFAULT_BOUNDARY_EPS }
    }
}

impl BallConfig {
    pub fn new(curvature: f64, boundary_eps: f64) -> Result<Self, GeometryError> {
        if !(curvature > 0.0 && curvature.is_finite()) {
            return Err(GeometryError::InvalidCurvature(curvature));
        }
        if !(boundary_eps > 0.0 && boundary_eps < 1.0) {
            return Err(GeometryError::InvalidBoundaryEps(boundary_eps));
        }
        Ok(Self { curvature, boundary_eps })
    }

    pub fn with_curvature(curvature: f64) -> Result<Self, GeometryError> {
        Self::new(curvature, DEFAULT_BOUNDARY_EPS)
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    pub fn boundary_eps(&self) -> f64 {
        self.boundary_eps
    }

    pub fn sqrt_c(&self) -> f64 {
        self.curvature.sqrt()
    }

    /// Euclidean radius `1/√c` of the ball.
    pub fn radius(&self) -> f64 {
        1.0 / self.sqrt_c()
    }

    /// Radius `(1-ε)/√c` of the safe-projection shell.
    pub fn shell_radius(&self) -> f64 {
        (1.0 - self.boundary_eps) / self.sqrt_c()
    }
}

/// A point strictly inside the ball.
#[derive(Clone, Debug, PartialEq)]
pub struct BallPoint {
    coords: Vec<f64>,
    config: BallConfig,
}

impl BallPoint {
    pub fn new(coords: Vec<f64>, config: BallConfig) -> Result<Self, GeometryError> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let scaled = config.curvature * norm_sq(&coords);
        if scaled >= 1.0 {
            return Err(GeometryError::OutsideBall(scaled));
        }
        Ok(Self { coords, config })
    }

    pub fn origin(dim: usize, config: BallConfig) -> Self {
        Self { coords: vec![0.0; dim], config }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn config(&self) -> BallConfig {
        self.config
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        norm_sq(&self.coords).sqrt()
    }

    /// Builds a point from coordinates that may sit on the boundary through
    /// rounding, pulling them just inside.
    fn inside(mut coords: Vec<f64>, config: BallConfig) -> Self {
        let c = config.curvature;
        let mut scaled = c * norm_sq(&coords);
        debug_assert!(scaled.sqrt() < 1.0 + DOMAIN_SLACK, "point escaped the ball: c·‖x‖² = {scaled}");
        while scaled >= 1.0 {
            let shrink = (1.0 - 4.0 * f64::EPSILON) / scaled.sqrt();
            coords.iter_mut().for_each(|v| *v *= shrink);
            scaled = c * norm_sq(&coords);
        }
        Self { coords, config }
    }
}

/// A tangent vector (at the origin unless stated otherwise).
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    coords: Vec<f64>,
}

impl TangentVector {
    pub fn new(coords: Vec<f64>) -> Result<Self, GeometryError> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { coords })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { coords: vec![0.0; dim] }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        norm_sq(&self.coords).sqrt()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Largest double strictly below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// `artanh` with its argument nudged into `(-1, 1)`.
pub(crate) fn artanh_clamped(x: f64) -> f64 {
    debug_assert!(x.abs() < 1.0 + DOMAIN_SLACK, "artanh argument {x} outside (-1, 1)");
    x.clamp(-BELOW_ONE, BELOW_ONE).atanh()
}

fn check_pair(x: &BallPoint, y: &BallPoint) -> Result<(), GeometryError> {
    if x.dim() != y.dim() {
        return Err(GeometryError::DimensionMismatch(x.dim(), y.dim()));
    }
    if x.config.curvature != y.config.curvature {
        return Err(GeometryError::CurvatureMismatch(x.config.curvature, y.config.curvature));
    }
    Ok(())
}

/// Möbius addition on raw coordinates.
pub(crate) fn mobius_add_raw(x: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let xy = dot(x, y);
    let xx = norm_sq(x);
    let yy = norm_sq(y);
    let ca = 1.0 + 2.0 * c * xy + c * yy;
    let cb = 1.0 - c * xx;
    let den = 1.0 + 2.0 * c * xy + c * c * xx * yy;
    x.iter().zip(y).map(|(a, b)| (ca * a + cb * b) / den).collect()
}

/// Möbius addition `x ⊕_c y`.
pub fn mobius_add(x: &BallPoint, y: &BallPoint) -> Result<BallPoint, GeometryError> {
    check_pair(x, y)?;
    Ok(BallPoint::inside(mobius_add_raw(&x.coords, &y.coords, x.config.curvature), x.config))
}

/// Möbius negation `-x`.
pub fn mobius_neg(x: &BallPoint) -> BallPoint {
    BallPoint { coords: x.coords.iter().map(|v| -v).collect(), config: x.config }
}

/// Conformal factor `λ_x = 2 / (1 - c‖x‖²)`.
pub fn conformal_factor(x: &BallPoint) -> f64 {
    2.0 / (1.0 - x.config.curvature * norm_sq(&x.coords))
}

/// Exponential map at `x` applied to tangent vector `v`.
pub fn exp_map(x: &BallPoint, v: &TangentVector) -> Result<BallPoint, GeometryError> {
    if x.dim() != v.dim() {
        return Err(GeometryError::DimensionMismatch(x.dim(), v.dim()));
    }
    let vn = v.norm();
    if vn == 0.0 {
        return Ok(x.clone());
    }
    let sqrt_c = x.config.sqrt_c();
    let scale = (sqrt_c * conformal_factor(x) * vn / 2.0).tanh() / (sqrt_c * vn);
    let step: Vec<f64> = v.coords.iter().map(|c| c * scale).collect();
    let step = BallPoint::inside(step, x.config);
    Ok(BallPoint::inside(mobius_add_raw(&x.coords, &step.coords, x.config.curvature), x.config))
}

/// Exponential map at the origin: `tanh(√c‖v‖) v / (√c‖v‖)`.
pub fn exp_map_origin(v: &TangentVector, config: BallConfig) -> BallPoint {
    exp_map(&BallPoint::origin(v.dim(), config), v).expect("dimensions agree by construction")
}

/// Logarithmic map at `x` of the point `y`.
pub fn log_map(x: &BallPoint, y: &BallPoint) -> Result<TangentVector, GeometryError> {
    check_pair(x, y)?;
    let c = x.config.curvature;
    let u = mobius_add_raw(&mobius_neg(x).coords, &y.coords, c);
    let un = norm_sq(&u).sqrt();
    if un == 0.0 {
        return Ok(TangentVector::zeros(x.dim()));
    }
    let sqrt_c = x.config.sqrt_c();
    let scale = 2.0 / (sqrt_c * conformal_factor(x)) * artanh_clamped(sqrt_c * un) / un;
    Ok(TangentVector { coords: u.iter().map(|v| v * scale).collect() })
}

/// Logarithmic map at the origin: `artanh(√c‖y‖) y / (√c‖y‖)`.
pub fn log_map_origin(y: &BallPoint) -> TangentVector {
    log_map(&BallPoint::origin(y.dim(), y.config), y).expect("dimensions agree by construction")
}

/// Geodesic distance `(2/√c) artanh(√c ‖-x ⊕_c y‖)`.
pub fn distance(x: &BallPoint, y: &BallPoint) -> Result<f64, GeometryError> {
    check_pair(x, y)?;
    Ok(distance_raw(&x.coords, &y.coords, x.config.curvature))
}

/// Geodesic distance on raw coordinates assumed to lie inside the ball.
pub fn distance_raw(x: &[f64], y: &[f64], c: f64) -> f64 {
    if x == y {
        return 0.0;
    }
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let u = mobius_add_raw(&neg, y, c);
    let sqrt_c = c.sqrt();
    2.0 / sqrt_c * artanh_clamped(sqrt_c * norm_sq(&u).sqrt())
}

/// Rescales `p` onto the shell of radius `(1-ε)/√c` when it lies outside it.
pub fn safe_project(p: &[f64], config: BallConfig) -> Result<BallPoint, GeometryError> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let shell = config.shell_radius();
    let norm = norm_sq(p).sqrt();
    if norm <= shell {
        return Ok(BallPoint { coords: p.to_vec(), config });
    }
    let limit = (1.0 - config.boundary_eps).powi(2);
    let mut factor = shell / norm;
    loop {
        let coords: Vec<f64> = p.iter().map(|v| v * factor).collect();
        if config.curvature * norm_sq(&coords) <= limit {
            return Ok(BallPoint { coords, config });
        }
        factor *= 1.0 - f64::EPSILON;
    }
}

/// Foot point `q = exp_0(r · a/‖a‖)` of the unidirectional hyperplane `(a, r)`.
pub fn hyperplane_foot(a: &TangentVector, r: f64, config: BallConfig) -> Result<BallPoint, GeometryError> {
    let an = a.norm();
    if an == 0.0 {
        return Err(GeometryError::DegenerateNormal);
    }
    let offset = TangentVector { coords: a.coords.iter().map(|v| r * v / an).collect() };
    Ok(exp_map_origin(&offset, config))
}

/// Signed, `‖a‖`-weighted distance of `x` to the unidirectional hyperplane `(a, r)`:
///
/// `(‖a‖/√c) asinh(2√c ⟨-q ⊕ x, a⟩ / ((1 - c‖-q ⊕ x‖²) ‖a‖))`.
pub fn hyperplane_signed_score(x: &BallPoint, a: &TangentVector, r: f64) -> Result<f64, GeometryError> {
    if x.dim() != a.dim() {
        return Err(GeometryError::DimensionMismatch(x.dim(), a.dim()));
    }
    let q = hyperplane_foot(a, r, x.config)?;
    let c = x.config.curvature;
    let sqrt_c = x.config.sqrt_c();
    let u = mobius_add_raw(&mobius_neg(&q).coords, &x.coords, c);
    let an = a.norm();
    let lam = (1.0 - c * norm_sq(&u)).max(f64::MIN_POSITIVE);
    let arg = 2.0 * sqrt_c * dot(&u, &a.coords) / (lam * an);
    Ok(an / sqrt_c * arg.asinh())
}
