//! Dense row-major `f64` arrays with numpy-style broadcasting.

use super::DiffError;

/// A plain (non-differentiable) dense array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, DiffError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(DiffError::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(DiffError::Shape(format!("shape {shape:?} needs {numel} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    /// Builds a 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DiffError> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(DiffError::Shape("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self, DiffError> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self { shape: self.shape.clone(), data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Generic axis permutation.
    pub fn permute(&self, axes: &[usize]) -> Result<Self, DiffError> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return Err(DiffError::Shape(format!("bad permutation {axes:?} for {:?}", self.shape)));
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut data = Vec::with_capacity(self.numel());
        let mut idx = vec![0usize; nd];
        let mut offset = 0usize;
        for _ in 0..self.numel() {
            data.push(self.data[offset]);
            for d in (0..nd).rev() {
                idx[d] += 1;
                offset += src_strides[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                offset -= src_strides[d] * out_shape[d];
                idx[d] = 0;
            }
        }
        Ok(Self { shape: out_shape, data })
    }

    /// Materialises `self` broadcast to `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self, DiffError> {
        let target = broadcast_shape(&self.shape, shape)?;
        if target != shape {
            return Err(DiffError::Shape(format!("cannot broadcast {:?} to {shape:?}", self.shape)));
        }
        let src = broadcast_strides(&self.shape, shape);
        let mut data = Vec::with_capacity(shape.iter().product());
        for_each_offset(shape, &src, |o| data.push(self.data[o]));
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// Sums `self` down to `shape`, the inverse of broadcasting.
    pub fn sum_to_shape(&self, shape: &[usize]) -> Result<Self, DiffError> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let target = broadcast_shape(shape, &self.shape)?;
        if target != self.shape {
            return Err(DiffError::Shape(format!("cannot reduce {:?} to {shape:?}", self.shape)));
        }
        let dst = broadcast_strides(shape, &self.shape);
        let mut out = Tensor::zeros(shape);
        let mut i = 0;
        for_each_offset(&self.shape, &dst, |o| {
            out.data[o] += self.data[i];
            i += 1;
        });
        Ok(out)
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

/// Result shape of broadcasting `a` against `b`.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>, DiffError> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(DiffError::Shape(format!("cannot broadcast {a:?} with {b:?}"))),
        };
    }
    Ok(out)
}

/// Strides of `src` when viewed inside the broadcast shape `out` (0 on broadcast axes).
fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(src);
    let lead = out.len() - src.len();
    (0..out.len()).map(|i| if i < lead || src[i - lead] == 1 { 0 } else { s[i - lead] }).collect()
}

/// Visits every index of `shape` in row-major order, passing the source offset.
fn for_each_offset(shape: &[usize], src_strides: &[usize], mut f: impl FnMut(usize)) {
    let nd = shape.len();
    let numel: usize = shape.iter().product();
    let mut idx = vec![0usize; nd];
    let mut offset = 0usize;
    for _ in 0..numel {
        f(offset);
        for d in (0..nd).rev() {
            idx[d] += 1;
            offset += src_strides[d];
            if idx[d] < shape[d] {
                break;
            }
            offset -= src_strides[d] * shape[d];
            idx[d] = 0;
        }
    }
}

/// Elementwise binary op with broadcasting.
pub fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, DiffError> {
    if a.shape == b.shape {
        return Ok(a.zip_map(b, f));
    }
    let shape = broadcast_shape(&a.shape, &b.shape)?;
    if b.numel() == 1 {
        let s = b.data[0];
        return Ok(Tensor { shape, data: a.data.iter().map(|&x| f(x, s)).collect() });
    }
    let sa = broadcast_strides(&a.shape, &shape);
    let sb = broadcast_strides(&b.shape, &shape);
    let nd = shape.len();
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut idx = vec![0usize; nd];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..numel {
        data.push(f(a.data[oa], b.data[ob]));
        for d in (0..nd).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < shape[d] {
                break;
            }
            oa -= sa[d] * shape[d];
            ob -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
    Ok(Tensor { shape, data })
}

/// `c = alpha * op(a) * op(b) + beta * c` for row-major matrices.
///
/// `a` is `m x k` (or `k x m` when `trans_a`), `b` is `k x n` (or `n x k` when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover exactly the strided extents described above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[3, 1], &[1, 4]).unwrap(), vec![3, 4]);
        assert_eq!(broadcast_shape(&[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert!(broadcast_shape(&[2, 3], &[2]).is_err());
    }

    #[test]
    fn zip_and_reduce_are_adjoint() {
        let a = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![3], vec![10.0, 20.0, 30.0]).unwrap();
        let c = broadcast_zip(&a, &b, |x, y| x + y).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[11.0, 21.0, 31.0, 12.0, 22.0, 32.0]);
        let r = c.sum_to_shape(&[3]).unwrap();
        assert_eq!(r.data(), &[23.0, 43.0, 63.0]);
        let r = c.sum_to_shape(&[2, 1]).unwrap();
        assert_eq!(r.data(), &[63.0, 66.0]);
    }

    #[test]
    fn permute_transposes() {
        let t = Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        let p = t.permute(&[1, 0]).unwrap();
        assert_eq!(p.shape(), &[3, 2]);
        assert_eq!(p.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert!(t.permute(&[0, 0]).is_err());
    }

    #[test]
    fn gemm_with_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    }
}
