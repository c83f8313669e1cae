//! Differentiable primitives.
//!
//! Every operation computes its forward value eagerly and records a backward
//! rule that maps the output gradient to parent gradients.

use std::rc::Rc;

use super::tensor::{broadcast_zip, gemm};
use super::{DiffError, DiffTensor, Tensor};

/// Splits `shape` around `axis` into `(outer, len, inner)` extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(shape: &[usize], axis: usize) -> Result<(), DiffError> {
    if axis >= shape.len() {
        return Err(DiffError::Shape(format!("axis {axis} out of range for {shape:?}")));
    }
    Ok(())
}

fn reduce_axis(x: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = 1;
    let mut out = vec![0.0; outer * inner];
    let d = x.data();
    for o in 0..outer {
        for l in 0..len {
            let base = (o * len + l) * inner;
            for i in 0..inner {
                out[o * inner + i] += d[base + i];
            }
        }
    }
    Tensor::new(shape, out).expect("reduced shape")
}

impl<'g> DiffTensor<'g> {
    fn same_graph(&self, other: &DiffTensor<'_>) {
        assert!(std::ptr::eq(self.graph, other.graph), "tensors recorded on different graphs");
    }

    fn unary(&self, value: Tensor, grad: impl Fn(&Tensor, &Tensor, &Tensor) -> Tensor + 'static) -> DiffTensor<'g> {
        let x = self.value();
        let y = Rc::new(value.clone());
        self.graph.push_op(value, &[*self], move |g, _| vec![Some(grad(g, &x, &y))])
    }

    fn binary(
        &self,
        other: &DiffTensor<'g>,
        f: impl Fn(f64, f64) -> f64,
        grad: impl Fn(&Tensor, &Tensor, &Tensor, &[bool]) -> Result<(Option<Tensor>, Option<Tensor>), DiffError> + 'static,
    ) -> Result<DiffTensor<'g>, DiffError> {
        self.same_graph(other);
        let a = self.value();
        let b = other.value();
        let value = broadcast_zip(&a, &b, f)?;
        Ok(self.graph.push_op(value, &[*self, *other], move |g, needs| {
            let (ga, gb) = grad(g, &a, &b, needs).expect("broadcast gradient");
            vec![ga, gb]
        }))
    }

    pub fn add(&self, other: &DiffTensor<'g>) -> Result<DiffTensor<'g>, DiffError> {
        self.binary(
            other,
            |a, b| a + b,
            |g, a, b, needs| {
                let ga = if needs[0] { Some(g.sum_to_shape(a.shape())?) } else { None };
                let gb = if needs[1] { Some(g.sum_to_shape(b.shape())?) } else { None };
                Ok((ga, gb))
            },
        )
    }

    pub fn sub(&self, other: &DiffTensor<'g>) -> Result<DiffTensor<'g>, DiffError> {
        self.binary(
            other,
            |a, b| a - b,
            |g, a, b, needs| {
                let ga = if needs[0] { Some(g.sum_to_shape(a.shape())?) } else { None };
                let gb = if needs[1] { Some(g.map(|v| -v).sum_to_shape(b.shape())?) } else { None };
                Ok((ga, gb))
            },
        )
    }

    pub fn mul(&self, other: &DiffTensor<'g>) -> Result<DiffTensor<'g>, DiffError> {
        self.binary(
            other,
            |a, b| a * b,
            |g, a, b, needs| {
                let ga =
                    if needs[0] { Some(broadcast_zip(g, b, |g, b| g * b)?.sum_to_shape(a.shape())?) } else { None };
                let gb =
                    if needs[1] { Some(broadcast_zip(g, a, |g, a| g * a)?.sum_to_shape(b.shape())?) } else { None };
                Ok((ga, gb))
            },
        )
    }

    pub fn div(&self, other: &DiffTensor<'g>) -> Result<DiffTensor<'g>, DiffError> {
        self.binary(
            other,
            |a, b| a / b,
            |g, a, b, needs| {
                let ga =
                    if needs[0] { Some(broadcast_zip(g, b, |g, b| g / b)?.sum_to_shape(a.shape())?) } else { None };
                let gb = if needs[1] {
                    let ratio = broadcast_zip(a, b, |a, b| -a / (b * b))?;
                    Some(broadcast_zip(g, &ratio, |g, r| g * r)?.sum_to_shape(b.shape())?)
                } else {
                    None
                };
                Ok((ga, gb))
            },
        )
    }

    pub fn neg(&self) -> DiffTensor<'g> {
        self.scale(-1.0)
    }

    /// Multiplies by a constant.
    pub fn scale(&self, s: f64) -> DiffTensor<'g> {
        self.unary(self.value().map(|v| v * s), move |g, _, _| g.map(|v| v * s))
    }

    /// Adds a constant.
    pub fn add_scalar(&self, s: f64) -> DiffTensor<'g> {
        self.unary(self.value().map(|v| v + s), |g, _, _| g.clone())
    }

    pub fn relu(&self) -> DiffTensor<'g> {
        self.unary(self.value().map(|v| v.max(0.0)), |g, x, _| g.zip_map(x, |g, x| if x > 0.0 { g } else { 0.0 }))
    }

    pub fn tanh(&self) -> DiffTensor<'g> {
        self.unary(self.value().map(f64::tanh), |g, _, y| g.zip_map(y, |g, y| g * (1.0 - y * y)))
    }

    /// Inverse hyperbolic tangent; every entry must satisfy `|x| < 1`.
    pub fn artanh(&self) -> Result<DiffTensor<'g>, DiffError> {
        let x = self.value();
        if let Some(&bad) = x.data().iter().find(|v| !(v.abs() < 1.0)) {
            return Err(DiffError::Domain(format!("artanh argument {bad} outside (-1, 1)")));
        }
        Ok(self.unary(x.map(f64::atanh), |g, x, _| g.zip_map(x, |g, x| g / (1.0 - x * x))))
    }

    pub fn asinh(&self) -> DiffTensor<'g> {
        self.unary(self.value().map(f64::asinh), |g, x, _| g.zip_map(x, |g, x| g / (1.0 + x * x).sqrt()))
    }

    pub fn exp(&self) -> DiffTensor<'g> {
        self.unary(self.value().map(f64::exp), |g, _, y| g.zip_map(y, |g, y| g * y))
    }

    /// Natural logarithm; every entry must be positive.
    pub fn log(&self) -> Result<DiffTensor<'g>, DiffError> {
        let x = self.value();
        if let Some(&bad) = x.data().iter().find(|v| !(**v > 0.0)) {
            return Err(DiffError::Domain(format!("log argument {bad} not positive")));
        }
        Ok(self.unary(x.map(f64::ln), |g, x, _| g.zip_map(x, |g, x| g / x)))
    }

    /// Elementwise power with a constant exponent.
    pub fn pow(&self, p: f64) -> DiffTensor<'g> {
        self.unary(self.value().map(|v| v.powf(p)), move |g, x, _| {
            g.zip_map(x, |g, x| if p == 0.0 { 0.0 } else { g * p * x.powf(p - 1.0) })
        })
    }

    pub fn square(&self) -> DiffTensor<'g> {
        self.unary(self.value().map(|v| v * v), |g, x, _| g.zip_map(x, |g, x| 2.0 * g * x))
    }

    /// `max(x, floor)`; the gradient is zero wherever the floor is active.
    pub fn clamp_min(&self, floor: f64) -> DiffTensor<'g> {
        self.unary(self.value().map(|v| v.max(floor)), move |g, x, _| {
            g.zip_map(x, |g, x| if x > floor { g } else { 0.0 })
        })
    }

    /// `min(x, ceiling)`; the gradient is zero wherever the ceiling is active.
    pub fn clamp_max(&self, ceiling: f64) -> DiffTensor<'g> {
        self.unary(self.value().map(|v| v.min(ceiling)), move |g, x, _| {
            g.zip_map(x, |g, x| if x < ceiling { g } else { 0.0 })
        })
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&self) -> DiffTensor<'g> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.graph.push_op(Tensor::scalar(x.sum()), &[*self], move |g, _| vec![Some(Tensor::full(&shape, g.item()))])
    }

    pub fn mean(&self) -> DiffTensor<'g> {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum along `axis`, keeping it as a size-one dimension.
    pub fn sum_axis(&self, axis: usize) -> Result<DiffTensor<'g>, DiffError> {
        let x = self.value();
        check_axis(x.shape(), axis)?;
        let shape = x.shape().to_vec();
        let value = reduce_axis(&x, axis);
        Ok(self.graph.push_op(value, &[*self], move |g, _| vec![Some(g.broadcast_to(&shape).expect("keepdim"))]))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<DiffTensor<'g>, DiffError> {
        let len = self.shape().get(axis).copied().unwrap_or(1) as f64;
        Ok(self.sum_axis(axis)?.scale(1.0 / len))
    }

    /// Full contraction `sum(a * b)` of two same-shape tensors.
    pub fn dot(&self, other: &DiffTensor<'g>) -> Result<DiffTensor<'g>, DiffError> {
        self.same_graph(other);
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(DiffError::Shape(format!("dot of {:?} and {:?}", a.shape(), b.shape())));
        }
        let v: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
        Ok(self.graph.push_op(Tensor::scalar(v), &[*self, *other], move |g, needs| {
            let s = g.item();
            vec![needs[0].then(|| b.map(|v| v * s)), needs[1].then(|| a.map(|v| v * s))]
        }))
    }

    /// Product of 2-D tensors `(m, k) x (k, n)`.
    pub fn matmul(&self, other: &DiffTensor<'g>) -> Result<DiffTensor<'g>, DiffError> {
        self.same_graph(other);
        let a = self.value();
        let b = other.value();
        if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(DiffError::Shape(format!("matmul of {:?} and {:?}", a.shape(), b.shape())));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.graph.push_op(value, &[*self, *other], move |g, needs| {
            let ga = needs[0].then(|| {
                let mut buf = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, b.data(), true, 0.0, &mut buf);
                Tensor::new(vec![m, k], buf).expect("matmul grad")
            });
            let gb = needs[1].then(|| {
                let mut buf = vec![0.0; k * n];
                gemm(k, m, n, a.data(), true, g.data(), false, 0.0, &mut buf);
                Tensor::new(vec![k, n], buf).expect("matmul grad")
            });
            vec![ga, gb]
        }))
    }

    /// Euclidean norm along `axis` (kept as size one).
    ///
    /// The gradient at a zero vector is taken to be zero.
    pub fn l2_norm(&self, axis: usize) -> Result<DiffTensor<'g>, DiffError> {
        let x = self.value();
        check_axis(x.shape(), axis)?;
        let norm = reduce_axis(&x.map(|v| v * v), axis).map(f64::sqrt);
        let norm_rc = Rc::new(norm.clone());
        Ok(self.graph.push_op(norm, &[*self], move |g, _| {
            let scale = broadcast_zip(g, &norm_rc, |g, n| if n > 0.0 { g / n } else { 0.0 }).expect("keepdim");
            vec![Some(broadcast_zip(&x, &scale, |x, s| x * s).expect("keepdim"))]
        }))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<DiffTensor<'g>, DiffError> {
        let x = self.value();
        let value = x.broadcast_to(shape)?;
        let src = x.shape().to_vec();
        Ok(self.graph.push_op(value, &[*self], move |g, _| vec![Some(g.sum_to_shape(&src).expect("broadcast"))]))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<DiffTensor<'g>, DiffError> {
        let x = self.value();
        let value = x.reshape(shape)?;
        let src = x.shape().to_vec();
        Ok(self.graph.push_op(value, &[*self], move |g, _| vec![Some(g.reshape(&src).expect("reshape"))]))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<DiffTensor<'g>, DiffError> {
        let value = self.value().permute(axes)?;
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Ok(self.graph.push_op(value, &[*self], move |g, _| vec![Some(g.permute(&inverse).expect("permute"))]))
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[DiffTensor<'g>], axis: usize) -> Result<DiffTensor<'g>, DiffError> {
        let first = parts.first().ok_or_else(|| DiffError::Shape("concat of nothing".into()))?;
        let base = first.shape();
        check_axis(&base, axis)?;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        for (p, v) in parts.iter().zip(&values) {
            first.same_graph(p);
            let s = v.shape();
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(d, (a, b))| d != axis && a != b) {
                return Err(DiffError::Shape(format!("concat of {base:?} and {s:?} along {axis}")));
            }
        }
        let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &len) in values.iter().zip(&lens) {
                data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        Ok(first.graph.push_op(value, parts, move |g, needs| {
            let gd = g.data();
            let mut grads: Vec<Vec<f64>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
            for o in 0..outer {
                let mut offset = o * total * inner;
                for (buf, &len) in grads.iter_mut().zip(&lens) {
                    buf.extend_from_slice(&gd[offset..offset + len * inner]);
                    offset += len * inner;
                }
            }
            grads
                .into_iter()
                .zip(&shapes)
                .zip(needs)
                .map(|((buf, s), &need)| need.then(|| Tensor::new(s.clone(), buf).expect("concat grad")))
                .collect()
        }))
    }

    /// Softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<DiffTensor<'g>, DiffError> {
        let x = self.value();
        check_axis(x.shape(), axis)?;
        let (outer, len, inner) = split_axis(x.shape(), axis);
        let xd = x.data();
        let mut y = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| xd[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for l in 0..len {
                    let e = (xd[at(l)] - max).exp();
                    y[at(l)] = e;
                    total += e;
                }
                for l in 0..len {
                    y[at(l)] /= total;
                }
            }
        }
        let value = Tensor::new(x.shape().to_vec(), y)?;
        let y = Rc::new(value.clone());
        Ok(self.graph.push_op(value, &[*self], move |g, _| {
            let gy = g.zip_map(&y, |g, y| g * y);
            let s = reduce_axis(&gy, axis);
            let ys = broadcast_zip(&y, &s, |y, s| y * s).expect("softmax");
            vec![Some(gy.zip_map(&ys, |a, b| a - b))]
        }))
    }

    /// Mean cross-entropy of `(n, classes)` logits against integer labels.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<DiffTensor<'g>, DiffError> {
        let x = self.value();
        if x.ndim() != 2 || x.shape()[0] != labels.len() {
            return Err(DiffError::Shape(format!("cross_entropy of {:?} with {} labels", x.shape(), labels.len())));
        }
        let (n, c) = (x.shape()[0], x.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(DiffError::Shape(format!("label {bad} out of range for {c} classes")));
        }
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = x.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + total.ln();
            loss += lse - row[label];
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
        }
        let labels = labels.to_vec();
        Ok(self.graph.push_op(Tensor::scalar(loss / n as f64), &[*self], move |g, _| {
            let s = g.item() / n as f64;
            let mut grad = probs.clone();
            for (r, &label) in labels.iter().enumerate() {
                grad[r * c + label] -= 1.0;
            }
            grad.iter_mut().for_each(|v| *v *= s);
            vec![Some(Tensor::new(vec![n, c], grad).expect("ce grad"))]
        }))
    }

    /// Mean squared error over all entries.
    pub fn mse(&self, target: &DiffTensor<'g>) -> Result<DiffTensor<'g>, DiffError> {
        self.same_graph(target);
        let p = self.value();
        let t = target.value();
        if p.shape() != t.shape() {
            return Err(DiffError::Shape(format!("mse of {:?} and {:?}", p.shape(), t.shape())));
        }
        let n = p.numel() as f64;
        let diff = p.zip_map(&t, |a, b| a - b);
        let v = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
        Ok(self.graph.push_op(Tensor::scalar(v), &[*self, *target], move |g, needs| {
            let s = 2.0 * g.item() / n;
            let gp = diff.map(|d| d * s);
            let gt = needs[1].then(|| gp.map(|v| -v));
            vec![needs[0].then_some(gp), gt]
        }))
    }

    /// A copy of this value that blocks gradients (stop-gradient).
    pub fn detach(&self) -> DiffTensor<'g> {
        self.graph.constant((*self.value()).clone())
    }

    /// Forward value of `hard`, gradient routed entirely to `self` (the soft path).
    pub fn straight_through(&self, hard: &Tensor) -> Result<DiffTensor<'g>, DiffError> {
        if hard.shape() != self.value().shape() {
            return Err(DiffError::Shape(format!("straight_through of {:?} and {:?}", hard.shape(), self.shape())));
        }
        Ok(self.graph.push_op(hard.clone(), &[*self], |g, _| vec![Some(g.clone())]))
    }
}

/// `straight_through(hard, soft)`: forward equals `hard`, backward flows to `soft` only.
pub fn straight_through<'g>(hard: &DiffTensor<'g>, soft: &DiffTensor<'g>) -> Result<DiffTensor<'g>, DiffError> {
    hard.same_graph(soft);
    soft.straight_through(&hard.value())
}
