//! Ball operations on batches of row vectors, built from differentiable primitives.
//!
//! Inputs are `(n, d)` tensors holding one point or tangent vector per row;
//! `(1, d)` operands broadcast against `(n, d)` ones.

use super::BallConfig;
use crate::diffcore::{DiffError, DiffTensor, Tensor};

/// Norms below this are treated as zero when forming `tanh(s)/s`-style ratios.
const MIN_NORM: f64 = 1e-15;
/// Largest double strictly below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

fn expect_rows(x: &DiffTensor<'_>, what: &str) -> Result<(), DiffError> {
    if x.shape().len() != 2 {
        return Err(DiffError::Shape(format!("{what} expects (n, d) rows, got {:?}", x.shape())));
    }
    Ok(())
}

/// Row-wise `‖x‖²`, shape `(n, 1)`.
pub fn row_norm_sq<'g>(x: &DiffTensor<'g>) -> Result<DiffTensor<'g>, DiffError> {
    x.square().sum_axis(1)
}

/// Row-wise inner product of broadcast-compatible row tensors, shape `(n, 1)`.
pub fn row_dot<'g>(x: &DiffTensor<'g>, y: &DiffTensor<'g>) -> Result<DiffTensor<'g>, DiffError> {
    x.mul(y)?.sum_axis(1)
}

/// `exp_0^c(v) = tanh(√c‖v‖) v / (√c‖v‖)` per row.
pub fn exp_map_origin<'g>(v: &DiffTensor<'g>, cfg: BallConfig) -> Result<DiffTensor<'g>, DiffError> {
    expect_rows(v, "exp_map_origin")?;
    let scaled = v.l2_norm(1)?.scale(cfg.sqrt_c()).clamp_min(MIN_NORM);
    let factor = scaled.tanh().div(&scaled)?;
    v.mul(&factor)
}

/// `log_0^c(y) = artanh(√c‖y‖) y / (√c‖y‖)` per row.
pub fn log_map_origin<'g>(y: &DiffTensor<'g>, cfg: BallConfig) -> Result<DiffTensor<'g>, DiffError> {
    expect_rows(y, "log_map_origin")?;
    let scaled = y.l2_norm(1)?.scale(cfg.sqrt_c());
    let worst = scaled.value().data().iter().copied().fold(0.0, f64::max);
    debug_assert!(worst < 1.0 + super::DOMAIN_SLACK, "log_map_origin of a point outside the ball ({worst})");
    let scaled = scaled.clamp_min(MIN_NORM).clamp_max(BELOW_ONE);
    let factor = scaled.artanh()?.div(&scaled)?;
    y.mul(&factor)
}

/// Möbius addition `x ⊕_c y` per row.
pub fn mobius_add<'g>(x: &DiffTensor<'g>, y: &DiffTensor<'g>, cfg: BallConfig) -> Result<DiffTensor<'g>, DiffError> {
    expect_rows(x, "mobius_add")?;
    expect_rows(y, "mobius_add")?;
    let c = cfg.curvature();
    let xy = row_dot(x, y)?;
    let xx = row_norm_sq(x)?;
    let yy = row_norm_sq(y)?;
    let two_cxy = xy.scale(2.0 * c);
    let coef_x = two_cxy.add(&yy.scale(c))?.add_scalar(1.0);
    let coef_y = xx.scale(-c).add_scalar(1.0);
    let den = two_cxy.add(&xx.mul(&yy)?.scale(c * c))?.add_scalar(1.0);
    x.mul(&coef_x)?.add(&y.mul(&coef_y)?)?.div(&den)
}

/// Geodesic distance `(2/√c) artanh(√c‖-x ⊕_c y‖)` per row, shape `(n, 1)`.
pub fn distance<'g>(x: &DiffTensor<'g>, y: &DiffTensor<'g>, cfg: BallConfig) -> Result<DiffTensor<'g>, DiffError> {
    let diff = mobius_add(&x.neg(), y, cfg)?;
    let scaled = diff.l2_norm(1)?.scale(cfg.sqrt_c()).clamp_max(BELOW_ONE);
    Ok(scaled.artanh()?.scale(2.0 / cfg.sqrt_c()))
}

/// Rows with norm above `(1-ε)/√c` are rescaled onto that shell.
pub fn safe_project<'g>(x: &DiffTensor<'g>, cfg: BallConfig) -> Result<DiffTensor<'g>, DiffError> {
    expect_rows(x, "safe_project")?;
    let shell = cfg.shell_radius();
    let denom = x.l2_norm(1)?.clamp_min(shell);
    let shell_t = x.graph().constant(Tensor::scalar(shell));
    x.mul(&shell_t.div(&denom)?)
}

/// `safe_project(exp_map_origin(z))`: Euclidean latents onto the ball.
pub fn project_to_ball<'g>(z: &DiffTensor<'g>, cfg: BallConfig) -> Result<DiffTensor<'g>, DiffError> {
    safe_project(&exp_map_origin(z, cfg)?, cfg)
}

/// Unit normals `a / ‖a‖` of `(k, d)` hyperplane normals, with the norms `(k, 1)`.
pub fn unit_normals<'g>(a: &DiffTensor<'g>) -> Result<(DiffTensor<'g>, DiffTensor<'g>), DiffError> {
    expect_rows(a, "unit_normals")?;
    let norms = a.l2_norm(1)?;
    if let Some(k) = norms.value().data().iter().position(|&n| n == 0.0) {
        return Err(DiffError::Domain(format!("hyperplane {k} has a zero normal")));
    }
    Ok((a.div(&norms)?, norms))
}

/// Geometric codebook `r_k · a_k/‖a_k‖`, shape `(k, d)`.
pub fn plane_codebook<'g>(a: &DiffTensor<'g>, r: &DiffTensor<'g>) -> Result<DiffTensor<'g>, DiffError> {
    let (unit, _) = unit_normals(a)?;
    let k = a.shape()[0];
    unit.mul(&r.reshape(&[k, 1])?)
}

/// Unidirectional hyperbolic MLR logits of ball points `x (n, d)` against
/// hyperplanes with normals `a (k, d)` and offsets `r (k)`; shape `(n, k)`.
///
/// Uses the closed form `(‖a‖/√c) asinh(2√c ⟨u, a⟩ / ((1 - c‖u‖²)‖a‖))` with
/// `u = -q ⊕ x`. The Möbius sum is never materialised: `⟨u, a⟩` and `‖u‖²`
/// are expanded from the pairwise inner products, so every intermediate is
/// `(n, k)`.
pub fn hyperplane_logits<'g>(
    x: &DiffTensor<'g>,
    a: &DiffTensor<'g>,
    r: &DiffTensor<'g>,
    cfg: BallConfig,
) -> Result<DiffTensor<'g>, DiffError> {
    expect_rows(x, "hyperplane_logits")?;
    let (k, d) = (a.shape()[0], a.shape()[1]);
    if x.shape()[1] != d || r.numel() != k {
        return Err(DiffError::Shape(format!(
            "hyperplane_logits: points {:?}, normals {:?}, offsets {:?}",
            x.shape(),
            a.shape(),
            r.shape()
        )));
    }
    let c = cfg.curvature();
    let sqrt_c = cfg.sqrt_c();
    let (unit, a_norm) = unit_normals(a)?;
    let q = exp_map_origin(&unit.mul(&r.reshape(&[k, 1])?)?, cfg)?;
    // u = (-q) ⊕ x = (coef_q · (-q) + coef_x · x) / den
    let neg_q = q.neg();
    let neg_q_t = neg_q.permute(&[1, 0])?;
    let qx = x.matmul(&neg_q_t)?; // ⟨-q, x⟩, (n, k)
    let qq = row_norm_sq(&neg_q)?.reshape(&[1, k])?;
    let xx = row_norm_sq(x)?; // (n, 1)
    let two_cqx = qx.scale(2.0 * c);
    let coef_q = two_cqx.add(&xx.scale(c))?.add_scalar(1.0); // (n, k)
    let coef_x = qq.scale(-c).add_scalar(1.0); // (1, k)
    let den = two_cqx.add(&xx.mul(&qq)?.scale(c * c))?.add_scalar(1.0);
    let qa = row_dot(&neg_q, a)?.reshape(&[1, k])?;
    let xa = x.matmul(&a.permute(&[1, 0])?)?;
    let num_a = coef_q.mul(&qa)?.add(&coef_x.mul(&xa)?)?;
    let num_sq =
        coef_q.square().mul(&qq)?.add(&coef_q.mul(&coef_x)?.mul(&qx)?.scale(2.0))?.add(&coef_x.square().mul(&xx)?)?;
    let u_a = num_a.div(&den)?;
    let u_sq = num_sq.div(&den.square())?;
    let lam = u_sq.scale(-c).add_scalar(1.0).clamp_min(f64::MIN_POSITIVE);
    let a_norm_row = a_norm.reshape(&[1, k])?;
    let arg = u_a.scale(2.0 * sqrt_c).div(&lam.mul(&a_norm_row)?)?;
    arg.asinh().mul(&a_norm_row.scale(1.0 / sqrt_c))
}
