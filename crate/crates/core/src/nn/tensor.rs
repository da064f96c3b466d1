//! Flat tensors and the scalar abstraction shared by `f32` and `f64`.

use rand_chacha::ChaCha8Rng;

/// Scalar element of the engine. Implemented for `f32` and `f64`.
pub trait Real:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn abs(self) -> Self;
    fn maxv(self, other: Self) -> Self;
    fn is_finite_v(self) -> bool;
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn maxv(self, other: Self) -> Self {
        f32::max(self, other)
    }
    fn is_finite_v(self) -> bool {
        f32::is_finite(self)
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn maxv(self, other: Self) -> Self {
        f64::max(self, other)
    }
    fn is_finite_v(self) -> bool {
        f64::is_finite(self)
    }
}

/// Dense tensor: contiguous data plus a shape. Row-major, last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub data: Vec<T>,
    pub shape: Vec<usize>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { data: vec![T::ZERO; n], shape: shape.to_vec() }
    }

    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Self {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "shape/data mismatch");
        Tensor { data, shape: shape.to_vec() }
    }

    /// Gaussian init with the given std, drawn in index order.
    pub fn randn(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Self {
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0f64, std).expect("valid std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(normal.sample(rng))).collect();
        Tensor { data, shape: shape.to_vec() }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.to_f64()).collect()
    }
}

/// A trainable tensor paired with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(&value.shape);
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::ZERO);
    }
}

/// out[m,n] += a[m,k] * b[k,n]
pub fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// out[k,n] += a[m,k]^T * b[m,n]  (i.e. aᵀb), used for weight gradients.
pub fn matmul_at_b_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn matmul_small_known() {
        // [1 2; 3 4] x [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut out = [0.0f64; 4];
        matmul_acc(&a, &b, &mut out, 2, 2, 2);
        assert_eq!(out, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_transpose_matches_explicit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::<f64>::randn(&[4, 3], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[4, 5], 1.0, &mut rng);
        let mut out = vec![0.0; 3 * 5];
        matmul_at_b_acc(&a.data, &b.data, &mut out, 4, 3, 5);
        for p in 0..3 {
            for q in 0..5 {
                let mut want = 0.0;
                for i in 0..4 {
                    want += a.data[i * 3 + p] * b.data[i * 5 + q];
                }
                assert!((out[p * 5 + q] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn randn_deterministic() {
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let t1 = Tensor::<f32>::randn(&[16], 0.5, &mut r1);
        let t2 = Tensor::<f32>::randn(&[16], 0.5, &mut r2);
        assert_eq!(t1.data, t2.data);
    }
}
