//! Dense row-major tensors and the primitive numeric operations built on them.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense n-dimensional array in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|v| *v = value);
        t
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// `rows x cols` matrix from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::invalid("ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            _ => Err(Error::invalid(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let cols = *self.shape.last().unwrap_or(&0);
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let cols = *self.shape.last().unwrap_or(&0);
        &mut self.data[i * cols..(i + 1) * cols]
    }

    pub fn at2(&self, i: usize, j: usize) -> T {
        self.data[i * self.shape[1] + j]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other, "add")?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
        Ok(())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.same_shape(other, "axpy")?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += alpha * b);
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.same_shape(other, "dot")?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm(&self) -> T {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Index of the largest element (first on ties).
    pub fn argmax(&self) -> Option<usize> {
        argmax(&self.data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors naming `what` if any element is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = Self::zeros(vec![c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(out)
    }

    /// Standard matrix product of an `m x k` and a `k x n` matrix.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = Self::zeros(vec![m, n]);
        gemm(
            Op::N,
            Op::N,
            m,
            k,
            n,
            T::one(),
            &self.data,
            &other.data,
            T::zero(),
            &mut out.data,
        );
        Ok(out)
    }

    /// Concatenates rank-1 tensors end to end.
    pub fn concat(parts: &[&Self]) -> Self {
        let data: Vec<T> = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        Tensor::vector(data)
    }

    pub fn as_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }
}

/// Whether a gemm operand is read as stored or transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Op {
    N,
    T,
}

/// `c = alpha * op(a) * op(b) + beta * c` on contiguous row-major buffers,
/// where `op(a)` is `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    ta: Op,
    tb: Op,
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    let (a_rs, a_cs) = match ta {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (b_rs, b_cs) = match tb {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    T::gemm(
        m, k, n, alpha, a, a_rs, a_cs, b, b_rs, b_cs, beta, c, n as isize, 1,
    );
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

pub(crate) fn argmax<T: Scalar>(v: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}

/// Softmax with the maximum subtracted before exponentiation.
pub fn softmax_stable<T: Scalar>(v: &Tensor<T>) -> Result<Tensor<T>> {
    if v.is_empty() {
        return Err(Error::Empty("softmax_stable"));
    }
    Ok(Tensor {
        shape: v.shape.clone(),
        data: softmax_slice(&v.data),
    })
}

pub(crate) fn softmax_slice<T: Scalar>(v: &[T]) -> Vec<T> {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: T = out.iter().copied().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

/// `log(sum(exp(v)))` without overflow.
pub(crate) fn log_sum_exp<T: Scalar>(v: impl Iterator<Item = T> + Clone) -> T {
    let max = v.clone().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let s: T = v.map(|x| (x - max).exp()).sum();
    max + s.ln()
}

/// `v / max(|v|_2, eps)`.
pub fn l2_normalize<T: Scalar>(v: &Tensor<T>, eps: T) -> Tensor<T> {
    let denom = v.norm().max(eps);
    v.map(|x| x / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn random(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.uniform_range(-1.0, 1.0))
    }

    fn triple_loop(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (m, k) = a.dims2().unwrap();
        let (_, n) = b.dims2().unwrap();
        let mut out = Tensor::zeros(vec![m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..k {
                    s += a.at2(i, l) * b.at2(l, j);
                }
                out.data[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let mut rng = Rng::new(0, 0);
        let m = random(&mut rng, &[3, 4]);
        assert_eq!(Tensor::identity(3).matmul(&m).unwrap(), m);
    }

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(11, 0);
        let a = random(&mut rng, &[7, 5]);
        let b = random(&mut rng, &[5, 3]);
        let got = a.matmul(&b).unwrap();
        let want = triple_loop(&a, &b);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f64>::zeros(vec![2, 3]);
        let b = Tensor::<f64>::zeros(vec![2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn transposed_gemm_variants() {
        let mut rng = Rng::new(5, 0);
        let a = random(&mut rng, &[4, 6]);
        let b = random(&mut rng, &[5, 6]);
        let mut c = vec![0.0; 20];
        gemm(Op::N, Op::T, 4, 6, 5, 1.0, a.data(), b.data(), 0.0, &mut c);
        let want = a.matmul(&b.transpose().unwrap()).unwrap();
        for (g, w) in c.iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-12);
        }
        let d = random(&mut rng, &[4, 5]);
        let mut e = vec![0.0; 30];
        gemm(Op::T, Op::N, 6, 4, 5, 1.0, a.data(), d.data(), 0.0, &mut e);
        let want = a.transpose().unwrap().matmul(&d).unwrap();
        for (g, w) in e.iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_stable(&Tensor::vector(vec![0.0f64, 0.0, 0.0])).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_stable(&Tensor::vector(vec![1000.0f64, 0.0])).unwrap();
        assert!(s.all_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-15);
        assert!(s.data()[1] >= 0.0 && s.data()[1] < 1e-300);

        let v = [1.0f64, 2.0, 3.0];
        let naive_den: f64 = v.iter().map(|x| x.exp()).sum();
        let s = softmax_stable(&Tensor::vector(v.to_vec())).unwrap();
        for (x, got) in v.iter().zip(s.data()) {
            let want = x.exp() / naive_den;
            assert!(((got - want) / want).abs() < 1e-12);
        }
        assert!(matches!(
            softmax_stable(&Tensor::<f64>::vector(vec![])),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn l2_normalize_examples() {
        let n = l2_normalize(&Tensor::vector(vec![3.0f64, 4.0]), 1e-12);
        assert!((n.data()[0] - 0.6).abs() < 1e-15 && (n.data()[1] - 0.8).abs() < 1e-15);
        let u = Tensor::vector(vec![0.0f64, 1.0, 0.0]);
        assert_eq!(l2_normalize(&u, 1e-12), u);
        let z = l2_normalize(&Tensor::vector(vec![0.0f64; 5]), 1e-12);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn matmul_associative(seed in 0u64..1000, m in 1usize..5, k in 1usize..5, n in 1usize..5, p in 1usize..5) {
            let mut rng = Rng::new(seed, 1);
            let a = random(&mut rng, &[m, k]);
            let b = random(&mut rng, &[k, n]);
            let c = random(&mut rng, &[n, p]);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (l, r) in left.data().iter().zip(right.data()) {
                prop_assert!((l - r).abs() < 1e-10);
            }
        }

        #[test]
        fn softmax_shift_invariant(v in prop::collection::vec(-50.0f64..50.0, 1..12), c in -100.0f64..100.0) {
            let a = softmax_stable(&Tensor::vector(v.clone())).unwrap();
            let b = softmax_stable(&Tensor::vector(v.iter().map(|x| x + c).collect())).unwrap();
            let sum: f64 = a.data().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn l2_normalize_idempotent(v in prop::collection::vec(-10.0f64..10.0, 1..16)) {
            let t = Tensor::vector(v);
            let once = l2_normalize(&t, 1e-12);
            let twice = l2_normalize(&once, 1e-12);
            for (x, y) in once.data().iter().zip(twice.data()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
            if t.norm() > 1e-12 {
                prop_assert!((once.norm() - 1.0).abs() < 1e-6);
            }
        }
    }
}
