use rand::{Rng, RngCore};

use crate::diffcore::{Bindings, DiffError, DiffTensor, ParamId, ParamStore, Tensor};

fn uniform(rng: &mut dyn RngCore, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..=bound)).collect()).expect("shape matches")
}

/// Plain or transposed 2-D convolution with bias.
#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
    pub transposed: bool,
}

impl Conv2d {
    /// Registers `name.weight` and `name.bias`, uniform in `±1/√fan_in`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        transposed: bool,
        rng: &mut dyn RngCore,
    ) -> Self {
        let (shape, fan_in) = if transposed {
            ([in_c, out_c, kernel, kernel], out_c * kernel * kernel)
        } else {
            ([out_c, in_c, kernel, kernel], in_c * kernel * kernel)
        };
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(rng, &shape, bound));
        let bias = store.add(format!("{name}.bias"), uniform(rng, &[out_c], bound));
        Self { weight, bias, stride, padding, transposed }
    }

    pub fn forward<'g>(&self, x: &DiffTensor<'g>, p: &Bindings<'g, '_>) -> Result<DiffTensor<'g>, DiffError> {
        let (w, b) = (p.var(self.weight), p.var(self.bias));
        if self.transposed {
            x.conv_transpose2d(&w, Some(&b), self.stride, self.padding)
        } else {
            x.conv2d(&w, Some(&b), self.stride, self.padding)
        }
    }
}

/// Affine map on `(n, in)` rows.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut dyn RngCore) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(rng, &[input, output], bound));
        let bias = store.add(format!("{name}.bias"), uniform(rng, &[output], bound));
        Self { weight, bias }
    }

    pub fn forward<'g>(&self, x: &DiffTensor<'g>, p: &Bindings<'g, '_>) -> Result<DiffTensor<'g>, DiffError> {
        x.matmul(&p.var(self.weight))?.add(&p.var(self.bias))
    }
}
