//! 2-D convolution and transposed convolution over NCHW tensors (im2col + GEMM).

use super::tensor::gemm;
use super::{DiffError, DiffTensor, Tensor};

/// Spatial geometry shared by a convolution and its transpose.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    channels: usize,
    height: usize,
    width: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self, DiffError> {
        if stride == 0 {
            return Err(DiffError::Shape("stride must be positive".into()));
        }
        let padded_h = height + 2 * padding;
        let padded_w = width + 2 * padding;
        if padded_h < kernel_h || padded_w < kernel_w {
            return Err(DiffError::Shape(format!(
                "kernel {kernel_h}x{kernel_w} larger than padded input {padded_h}x{padded_w}"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            kernel_h,
            kernel_w,
            stride,
            padding,
            out_h: (padded_h - kernel_h) / stride + 1,
            out_w: (padded_w - kernel_w) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source pixel for output position `(oy, ox)` and kernel tap `(ky, kx)`.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.padding)?;
        let x = (ox * self.stride + kx).checked_sub(self.padding)?;
        (y < self.height && x < self.width).then_some((y, x))
    }

    /// Writes the patches of one image into columns `[col0, col0 + out_len)` of a
    /// `(patch_len, total_cols)` matrix.
    fn im2col(&self, image: &[f64], cols: &mut [f64], total_cols: usize, col0: usize) {
        for c in 0..self.channels {
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let row = (c * self.kernel_h + ky) * self.kernel_w + kx;
                    let dst = &mut cols[row * total_cols + col0..row * total_cols + col0 + self.out_len()];
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            dst[oy * self.out_w + ox] = match self.source(oy, ox, ky, kx) {
                                Some((y, x)) => image[(c * self.height + y) * self.width + x],
                                None => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters columns back onto one image.
    fn col2im(&self, cols: &[f64], total_cols: usize, col0: usize, image: &mut [f64]) {
        for c in 0..self.channels {
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let row = (c * self.kernel_h + ky) * self.kernel_w + kx;
                    let src = &cols[row * total_cols + col0..row * total_cols + col0 + self.out_len()];
                    for oy in 0..self.out_h {
                        for ox in 0..self.out_w {
                            if let Some((y, x)) = self.source(oy, ox, ky, kx) {
                                image[(c * self.height + y) * self.width + x] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col_batch(&self, input: &[f64], batch: usize) -> Vec<f64> {
        let image_len = self.channels * self.height * self.width;
        let total = batch * self.out_len();
        let mut cols = vec![0.0; self.patch_len() * total];
        for n in 0..batch {
            self.im2col(&input[n * image_len..(n + 1) * image_len], &mut cols, total, n * self.out_len());
        }
        cols
    }

    fn col2im_batch(&self, cols: &[f64], batch: usize) -> Vec<f64> {
        let image_len = self.channels * self.height * self.width;
        let total = batch * self.out_len();
        let mut out = vec![0.0; batch * image_len];
        for n in 0..batch {
            self.col2im(cols, total, n * self.out_len(), &mut out[n * image_len..(n + 1) * image_len]);
        }
        out
    }
}

/// `(channels, batch * len)` matrix to NCHW with spatial extent `len`.
fn channel_major_to_nchw(m: &[f64], channels: usize, batch: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; m.len()];
    for c in 0..channels {
        for n in 0..batch {
            let src = &m[c * batch * len + n * len..c * batch * len + (n + 1) * len];
            out[(n * channels + c) * len..(n * channels + c + 1) * len].copy_from_slice(src);
        }
    }
    out
}

fn nchw_to_channel_major(x: &[f64], channels: usize, batch: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for n in 0..batch {
        for c in 0..channels {
            let src = &x[(n * channels + c) * len..(n * channels + c + 1) * len];
            out[c * batch * len + n * len..c * batch * len + (n + 1) * len].copy_from_slice(src);
        }
    }
    out
}

fn expect_4d(t: &Tensor, what: &str) -> Result<[usize; 4], DiffError> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(DiffError::Shape(format!("{what} must be 4-D, got {:?}", t.shape()))),
    }
}

fn check_bias(bias: Option<&DiffTensor<'_>>, channels: usize) -> Result<(), DiffError> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(DiffError::Shape(format!("bias shape {:?}, expected [{channels}]", b.shape())));
        }
    }
    Ok(())
}

fn add_bias(out: &mut [f64], bias: &[f64], batch: usize, len: usize) {
    let channels = bias.len();
    for n in 0..batch {
        for (c, b) in bias.iter().enumerate() {
            out[(n * channels + c) * len..(n * channels + c + 1) * len].iter_mut().for_each(|v| *v += b);
        }
    }
}

fn bias_grad(g: &[f64], channels: usize, batch: usize, len: usize) -> Tensor {
    let mut out = vec![0.0; channels];
    for n in 0..batch {
        for (c, o) in out.iter_mut().enumerate() {
            *o += g[(n * channels + c) * len..(n * channels + c + 1) * len].iter().sum::<f64>();
        }
    }
    Tensor::new(vec![channels], out).expect("bias grad")
}

impl<'g> DiffTensor<'g> {
    /// Cross-correlation of an `(N, C, H, W)` input with `(O, C, kh, kw)` weights.
    pub fn conv2d(
        &self,
        weight: &DiffTensor<'g>,
        bias: Option<&DiffTensor<'g>>,
        stride: usize,
        padding: usize,
    ) -> Result<DiffTensor<'g>, DiffError> {
        let x = self.value();
        let w = weight.value();
        let [batch, channels, height, width] = expect_4d(&x, "conv2d input")?;
        let [out_c, w_c, kh, kw] = expect_4d(&w, "conv2d weight")?;
        if w_c != channels {
            return Err(DiffError::Shape(format!("conv2d weight has {w_c} input channels, input has {channels}")));
        }
        check_bias(bias, out_c)?;
        let geom = ConvGeom::new(channels, height, width, kh, kw, stride, padding)?;
        let (patch, len) = (geom.patch_len(), geom.out_len());
        let total = batch * len;
        let cols = geom.im2col_batch(x.data(), batch);
        let mut out_cm = vec![0.0; out_c * total];
        gemm(out_c, patch, total, w.data(), false, &cols, false, 0.0, &mut out_cm);
        let mut out = channel_major_to_nchw(&out_cm, out_c, batch, len);
        if let Some(b) = bias {
            add_bias(&mut out, b.value().data(), batch, len);
        }
        let value = Tensor::new(vec![batch, out_c, geom.out_h, geom.out_w], out)?;
        let mut parents = vec![*self, *weight];
        parents.extend(bias.copied());
        Ok(self.graph.push_op(value, &parents, move |g, needs| {
            let g_cm = nchw_to_channel_major(g.data(), out_c, batch, len);
            let gx = needs[0].then(|| {
                let mut gcols = vec![0.0; patch * total];
                gemm(patch, out_c, total, w.data(), true, &g_cm, false, 0.0, &mut gcols);
                Tensor::new(vec![batch, channels, height, width], geom.col2im_batch(&gcols, batch)).expect("conv gx")
            });
            let gw = needs[1].then(|| {
                let mut gw = vec![0.0; out_c * patch];
                gemm(out_c, total, patch, &g_cm, false, &cols, true, 0.0, &mut gw);
                Tensor::new(vec![out_c, channels, kh, kw], gw).expect("conv gw")
            });
            let mut grads = vec![gx, gw];
            if needs.len() > 2 {
                grads.push(needs[2].then(|| bias_grad(g.data(), out_c, batch, len)));
            }
            grads
        }))
    }

    /// Transposed convolution of an `(N, Cin, H, W)` input with `(Cin, Cout, kh, kw)`
    /// weights; output spatial size is `(H - 1) * stride - 2 * padding + kh`.
    pub fn conv_transpose2d(
        &self,
        weight: &DiffTensor<'g>,
        bias: Option<&DiffTensor<'g>>,
        stride: usize,
        padding: usize,
    ) -> Result<DiffTensor<'g>, DiffError> {
        let x = self.value();
        let w = weight.value();
        let [batch, in_c, height, width] = expect_4d(&x, "conv_transpose2d input")?;
        let [w_in, out_c, kh, kw] = expect_4d(&w, "conv_transpose2d weight")?;
        if w_in != in_c {
            return Err(DiffError::Shape(format!(
                "conv_transpose2d weight has {w_in} input channels, input has {in_c}"
            )));
        }
        check_bias(bias, out_c)?;
        if stride == 0 {
            return Err(DiffError::Shape("stride must be positive".into()));
        }
        let out_h = ((height - 1) * stride + kh)
            .checked_sub(2 * padding)
            .ok_or_else(|| DiffError::Shape("padding too large for transposed convolution".into()))?;
        let out_w = ((width - 1) * stride + kw)
            .checked_sub(2 * padding)
            .ok_or_else(|| DiffError::Shape("padding too large for transposed convolution".into()))?;
        // The adjoint conv maps the (out_h, out_w) output back onto (height, width).
        let geom = ConvGeom::new(out_c, out_h, out_w, kh, kw, stride, padding)?;
        debug_assert_eq!((geom.out_h, geom.out_w), (height, width));
        let (patch, len) = (geom.patch_len(), height * width);
        let total = batch * len;
        let x_cm = nchw_to_channel_major(x.data(), in_c, batch, len);
        let mut cols = vec![0.0; patch * total];
        gemm(patch, in_c, total, w.data(), true, &x_cm, false, 0.0, &mut cols);
        let mut out = geom.col2im_batch(&cols, batch);
        let out_len = out_h * out_w;
        if let Some(b) = bias {
            add_bias(&mut out, b.value().data(), batch, out_len);
        }
        let value = Tensor::new(vec![batch, out_c, out_h, out_w], out)?;
        let mut parents = vec![*self, *weight];
        parents.extend(bias.copied());
        Ok(self.graph.push_op(value, &parents, move |g, needs| {
            let gcols = geom.im2col_batch(g.data(), batch);
            let gx = needs[0].then(|| {
                let mut gx_cm = vec![0.0; in_c * total];
                gemm(in_c, patch, total, w.data(), false, &gcols, false, 0.0, &mut gx_cm);
                Tensor::new(vec![batch, in_c, height, width], channel_major_to_nchw(&gx_cm, in_c, batch, len))
                    .expect("convT gx")
            });
            let gw = needs[1].then(|| {
                let mut gw = vec![0.0; in_c * patch];
                gemm(in_c, total, patch, &x_cm, false, &gcols, true, 0.0, &mut gw);
                Tensor::new(vec![in_c, out_c, kh, kw], gw).expect("convT gw")
            });
            let mut grads = vec![gx, gw];
            if needs.len() > 2 {
                grads.push(needs[2].then(|| bias_grad(g.data(), out_c, batch, out_len)));
            }
            grads
        }))
    }
}
