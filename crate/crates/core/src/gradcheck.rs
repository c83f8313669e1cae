//! Central finite-difference gradient checking for test suites.
//!
//! The checked function builds a scalar from its inputs on a fresh graph. The
//! analytic gradient comes from one backward pass; the numeric one perturbs each
//! input entry by `±step` and re-evaluates only the forward values, so it never
//! touches the backward rules under test.

use crate::diffcore::{DiffError, DiffTensor, Graph, Tensor};

/// Per-input comparison of analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, floor)` per input.
    pub relative_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Norm floor below which gradients are compared absolutely.
pub const NORM_FLOOR: f64 = 1e-6;

/// Checks `f` at `inputs` with central differences of half-width `step`.
pub fn check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<GradCheckReport, DiffError>
where
    F: for<'g> Fn(&'g Graph, &[DiffTensor<'g>]) -> Result<DiffTensor<'g>, DiffError>,
{
    let graph = Graph::new();
    let vars: Vec<DiffTensor<'_>> = inputs.iter().map(|t| graph.variable(t.clone())).collect();
    let out = f(&graph, &vars)?;
    graph.backward(out)?;
    let analytic: Vec<Tensor> =
        vars.iter().zip(inputs).map(|(v, t)| v.grad().unwrap_or_else(|| Tensor::zeros(t.shape()))).collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64, DiffError> {
        let g = Graph::new();
        let vs: Vec<DiffTensor<'_>> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&g, &vs)?.item())
    };

    let mut relative_errors = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.numel()];
        let mut work = inputs.to_vec();
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        let a = analytic[i].data();
        let diff = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        relative_errors.push(diff / na.max(nn).max(NORM_FLOOR));
    }
    Ok(GradCheckReport { relative_errors })
}

/// Reduces a tensor to a scalar through a fixed pseudo-random projection so that
/// every output entry contributes a distinct weight.
pub fn project<'g>(y: &DiffTensor<'g>) -> Result<DiffTensor<'g>, DiffError> {
    let shape = y.shape();
    let n: usize = shape.iter().product();
    let weights = (0..n).map(|i| ((i as f64 + 1.0) * 0.7548776662).sin() + 0.1).collect();
    let w = y.graph().constant(Tensor::new(shape, weights)?);
    y.dot(&w)
}
