//! Dense row-major matrices, affine layers, the sigmoid nonlinearity, seeded
//! initialization and SGD with momentum.
//!
//! Everything is `f64`. Matrices hold one sample per row.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::{Error, Result, Rng};

/// Dense row-major matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// A matrix with no rows and `cols` columns.
    pub fn empty(cols: usize) -> Self {
        Self::zeros(0, cols)
    }

    /// Wraps row-major `data`, rejecting wrong lengths and non-finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Matrix::from_vec", (rows, cols), (data.len(), 1)));
        }
        let m = Self { rows, cols, data };
        m.ensure_finite("Matrix::from_vec")?;
        Ok(m)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", (i, cols), (i, r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        let step = self.cols.max(1);
        self.data.chunks_exact(step).take(self.rows)
    }

    /// Gathers the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            if i >= self.rows {
                return Err(Error::IndexOutOfRange { index: i, len: self.rows });
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self::from_raw(idx.len(), self.cols, data))
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Self::from_raw(
            end - start,
            self.cols,
            self.data[start * self.cols..end * self.cols].to_vec(),
        )
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Matrix {
        Self::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    fn check_same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        self.check_same_shape(other, "Matrix::add_scaled")?;
        axpy(alpha, &other.data, &mut self.data);
        Ok(())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        let mut out = self.clone();
        out.add_scaled(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        let mut out = self.clone();
        out.add_scaled(-1.0, other)?;
        Ok(out)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "Matrix::hadamard")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Self::from_raw(self.rows, self.cols, data))
    }

    /// Concatenates columns of two matrices with equal row counts.
    pub fn hstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape("Matrix::hstack", (self.rows, 0), (other.rows, 0)));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Self::from_raw(self.rows, cols, data))
    }

    /// Splits columns at `at` into `(left, right)`.
    pub fn hsplit(&self, at: usize) -> (Matrix, Matrix) {
        let mut left = Vec::with_capacity(self.rows * at);
        let mut right = Vec::with_capacity(self.rows * (self.cols - at));
        for r in self.iter_rows() {
            left.extend_from_slice(&r[..at]);
            right.extend_from_slice(&r[at..]);
        }
        (
            Self::from_raw(self.rows, at, left),
            Self::from_raw(self.rows, self.cols - at, right),
        )
    }

    /// `self · otherᵀ` where `other` is `c × k` and `self` is `r × k`.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape("Matrix::matmul_nt", (self.rows, other.cols), self.shape()));
        }
        Ok(gemm(self.rows, self.cols, other.rows, (&self.data, self.cols, 1), (&other.data, 1, other.cols)))
    }

    /// `self · other` where `self` is `r × k` and `other` is `k × c`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape("Matrix::matmul", (self.rows, other.rows), self.shape()));
        }
        Ok(gemm(self.rows, self.cols, other.cols, (&self.data, self.cols, 1), (&other.data, other.cols, 1)))
    }

    /// `selfᵀ · other` where both have the same number of rows.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape("Matrix::matmul_tn", (other.rows, self.cols), self.shape()));
        }
        Ok(gemm(self.cols, self.rows, other.cols, (&self.data, 1, self.cols), (&other.data, other.cols, 1)))
    }

    /// Sum over rows, i.e. one value per column.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in self.iter_rows() {
            axpy(1.0, r, &mut out);
        }
        out
    }

    pub fn sum_squares(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Elementwise logistic function.
pub fn sigmoid(x: &Matrix) -> Matrix {
    x.map(sigmoid_scalar)
}

/// Backpropagates `grad` through a sigmoid whose output was `y`.
pub fn sigmoid_backward(y: &Matrix, grad: &Matrix) -> Result<Matrix> {
    if y.shape() != grad.shape() {
        return Err(Error::shape("sigmoid_backward", y.shape(), grad.shape()));
    }
    let data = y
        .data
        .iter()
        .zip(&grad.data)
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect();
    Ok(Matrix::from_raw(y.rows, y.cols, data))
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, `fan_in` being the column count.
    FanInUniform,
    /// Uniform in `[-limit, limit]`.
    Uniform(f64),
    /// Uniform in `gain · [-sqrt(6/(fan_in+fan_out)), sqrt(6/(fan_in+fan_out))]`.
    /// A gain of 4 suits sigmoid layers.
    Glorot(f64),
    Zeros,
}

/// `m × n` product of strided `m × k` and `k × n` operands given as
/// `(data, row_stride, col_stride)`.
fn gemm(m: usize, k: usize, n: usize, a: (&[f64], usize, usize), b: (&[f64], usize, usize)) -> Matrix {
    let mut out = Matrix::zeros(m, n);
    if m == 0 || k == 0 || n == 0 {
        return out;
    }
    // SAFETY: the caller passes buffers of at least m·k and k·n elements laid
    // out with the given strides; `out` holds m·n elements with row stride n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

impl InitScheme {
    /// Half-width of the sampling interval for a `rows × cols` matrix.
    pub fn limit(self, rows: usize, cols: usize) -> f64 {
        match self {
            InitScheme::FanInUniform => 1.0 / libm::sqrt(cols.max(1) as f64),
            InitScheme::Uniform(l) => l,
            InitScheme::Glorot(gain) => gain * libm::sqrt(6.0 / (rows + cols).max(1) as f64),
            InitScheme::Zeros => 0.0,
        }
    }
}

pub fn init_with_rng(rows: usize, cols: usize, scheme: InitScheme, rng: &mut Rng) -> Matrix {
    let limit = scheme.limit(rows, cols);
    if limit == 0.0 {
        return Matrix::zeros(rows, cols);
    }
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Matrix::from_raw(rows, cols, data)
}

/// Deterministic initialization: equal seeds give bitwise-equal matrices.
pub fn seeded_init(rows: usize, cols: usize, scheme: InitScheme, seed: u64) -> Matrix {
    init_with_rng(rows, cols, scheme, &mut crate::rng_from_seed(seed))
}

/// Hyperparameters of SGD with momentum and L2 weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_steps: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 0.004,
            max_steps: 5000,
        }
    }
}

impl OptimizerConfig {
    /// A zero learning rate is accepted and turns every step into a no-op.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One momentum update over flat buffers:
/// `v <- momentum * v - lr * (g + wd * p)`, `p <- p + v`.
pub fn momentum_update(
    param: &mut [f64],
    velocity: &mut [f64],
    grad: &[f64],
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for ((p, v), g) in param.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v - learning_rate * (g + weight_decay * *p);
        *p += *v;
    }
}

/// Fully-connected layer `y = x · Wᵀ + b` with its momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    weight: Matrix,
    bias: Vec<f64>,
    velocity_weight: Matrix,
    velocity_bias: Vec<f64>,
}

/// Parameter gradients of an [`AffineLayer`].
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl AffineGrads {
    pub fn zeros_like(layer: &AffineLayer) -> Self {
        Self {
            weight: Matrix::zeros(layer.out_dim(), layer.in_dim()),
            bias: vec![0.0; layer.out_dim()],
        }
    }

    pub fn add_assign(&mut self, other: &AffineGrads) -> Result<()> {
        self.weight.add_scaled(1.0, &other.weight)?;
        if self.bias.len() != other.bias.len() {
            return Err(Error::shape("AffineGrads::add_assign", (self.bias.len(), 1), (other.bias.len(), 1)));
        }
        axpy(1.0, &other.bias, &mut self.bias);
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.weight.scale(s);
        self.bias.iter_mut().for_each(|b| *b *= s);
    }

    pub fn max_abs(&self) -> f64 {
        self.bias
            .iter()
            .fold(self.weight.max_abs(), |m, v| m.max(v.abs()))
    }
}

impl AffineLayer {
    /// Builds a layer from an `out × in` weight and an `out`-long bias.
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape("AffineLayer::new", (weight.rows(), 1), (bias.len(), 1)));
        }
        weight.ensure_finite("AffineLayer weight")?;
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("AffineLayer bias"));
        }
        let velocity_weight = Matrix::zeros(weight.rows(), weight.cols());
        let velocity_bias = vec![0.0; bias.len()];
        Ok(Self {
            weight,
            bias,
            velocity_weight,
            velocity_bias,
        })
    }

    /// Random weights from `scheme`, zero biases.
    pub fn init(in_dim: usize, out_dim: usize, scheme: InitScheme, rng: &mut Rng) -> Self {
        let weight = init_with_rng(out_dim, in_dim, scheme, rng);
        Self {
            velocity_weight: Matrix::zeros(out_dim, in_dim),
            velocity_bias: vec![0.0; out_dim],
            bias: vec![0.0; out_dim],
            weight,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
            velocity_weight: Matrix::zeros(out_dim, in_dim),
            velocity_bias: vec![0.0; out_dim],
        }
    }

    /// Restores momentum buffers, e.g. from a checkpoint.
    pub fn with_velocity(mut self, weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.shape() != self.weight.shape() || bias.len() != self.bias.len() {
            return Err(Error::shape("AffineLayer::with_velocity", self.weight.shape(), weight.shape()));
        }
        self.velocity_weight = weight;
        self.velocity_bias = bias;
        Ok(self)
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut Matrix {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn velocity_weight(&self) -> &Matrix {
        &self.velocity_weight
    }

    pub fn velocity_bias(&self) -> &[f64] {
        &self.velocity_bias
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape("affine_forward", (x.rows(), self.in_dim()), x.shape()));
        }
        let mut out = x.matmul_nt(&self.weight)?;
        for r in 0..out.rows() {
            axpy(1.0, &self.bias, out.row_mut(r));
        }
        Ok(out)
    }

    /// Gradients of the parameters given the layer input and `∂loss/∂output`.
    pub fn param_grads(&self, x: &Matrix, grad_out: &Matrix) -> Result<AffineGrads> {
        if x.cols() != self.in_dim() || grad_out.cols() != self.out_dim() || x.rows() != grad_out.rows() {
            return Err(Error::shape(
                "AffineLayer::param_grads",
                (x.rows(), self.out_dim()),
                grad_out.shape(),
            ));
        }
        Ok(AffineGrads {
            weight: grad_out.matmul_tn(x)?,
            bias: grad_out.column_sums(),
        })
    }

    /// `∂loss/∂input` given `∂loss/∂output`.
    pub fn input_grad(&self, grad_out: &Matrix) -> Result<Matrix> {
        if grad_out.cols() != self.out_dim() {
            return Err(Error::shape(
                "AffineLayer::input_grad",
                (grad_out.rows(), self.out_dim()),
                grad_out.shape(),
            ));
        }
        grad_out.matmul(&self.weight)
    }

    /// Applies one SGD-with-momentum step with weight decay on weights and biases.
    pub fn sgd_momentum_step(&mut self, grads: &AffineGrads, cfg: &OptimizerConfig) -> Result<()> {
        if grads.weight.shape() != self.weight.shape() || grads.bias.len() != self.bias.len() {
            return Err(Error::shape("sgd_momentum_step", self.weight.shape(), grads.weight.shape()));
        }
        momentum_update(
            self.weight.as_mut_slice(),
            self.velocity_weight.as_mut_slice(),
            grads.weight.as_slice(),
            cfg.learning_rate,
            cfg.momentum,
            cfg.weight_decay,
        );
        momentum_update(
            &mut self.bias,
            &mut self.velocity_bias,
            &grads.bias,
            cfg.learning_rate,
            cfg.momentum,
            cfg.weight_decay,
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layer(w: &[&[f64]], b: &[f64]) -> AffineLayer {
        AffineLayer::new(Matrix::from_rows(w).unwrap(), b.to_vec()).unwrap()
    }

    #[test]
    fn affine_identity() {
        let l = layer(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0]);
        let y = l.forward(&Matrix::from_rows(&[[3.0, 4.0]]).unwrap()).unwrap();
        assert_eq!(y.as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn affine_hand_arithmetic() {
        let l = layer(&[&[1.0, 1.0], &[1.0, -1.0]], &[1.0, 0.0]);
        let y = l.forward(&Matrix::from_rows(&[[2.0, 3.0]]).unwrap()).unwrap();
        assert_eq!(y.as_slice(), &[6.0, -1.0]);
    }

    #[test]
    fn affine_rejects_wrong_cols() {
        let l = AffineLayer::zeros(2, 2);
        let err = l.forward(&Matrix::zeros(1, 3)).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn sigmoid_points() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!((sigmoid_scalar(libm::log(3.0)) - 0.75).abs() < 1e-15);
        let big = sigmoid_scalar(1000.0);
        assert!(big.is_finite() && big <= 1.0 && big > 0.999);
        let small = sigmoid_scalar(-1000.0);
        assert!(small.is_finite() && small >= 0.0);
    }

    #[test]
    fn sgd_zero_grad_is_noop() {
        let mut l = layer(&[&[0.3, -0.2]], &[0.1]);
        let before = l.clone();
        let g = AffineGrads::zeros_like(&l);
        let cfg = OptimizerConfig { learning_rate: 0.1, momentum: 0.9, weight_decay: 0.0, max_steps: 1 };
        l.sgd_momentum_step(&g, &cfg).unwrap();
        assert_eq!(l.weight(), before.weight());
        assert_eq!(l.bias(), before.bias());
    }

    #[test]
    fn sgd_scalar_step() {
        let mut l = layer(&[&[1.0]], &[0.0]);
        let g = AffineGrads { weight: Matrix::from_rows(&[[1.0]]).unwrap(), bias: vec![0.0] };
        let cfg = OptimizerConfig { learning_rate: 0.1, momentum: 0.0, weight_decay: 0.0, max_steps: 1 };
        l.sgd_momentum_step(&g, &cfg).unwrap();
        assert!((l.weight().get(0, 0) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_second_step() {
        let mut l = layer(&[&[1.0]], &[0.0]);
        let g = AffineGrads { weight: Matrix::from_rows(&[[1.0]]).unwrap(), bias: vec![0.0] };
        let cfg = OptimizerConfig { learning_rate: 0.1, momentum: 0.9, weight_decay: 0.0, max_steps: 2 };
        l.sgd_momentum_step(&g, &cfg).unwrap();
        let w1 = l.weight().get(0, 0);
        l.sgd_momentum_step(&g, &cfg).unwrap();
        let step2 = w1 - l.weight().get(0, 0);
        assert!((step2 - 0.1 * 1.9).abs() < 1e-12);
    }

    #[test]
    fn sgd_shape_mismatch() {
        let mut l = AffineLayer::zeros(2, 2);
        let g = AffineGrads { weight: Matrix::zeros(1, 2), bias: vec![0.0] };
        assert!(l.sgd_momentum_step(&g, &OptimizerConfig::default()).is_err());
    }

    #[test]
    fn seeded_init_determinism() {
        let a = seeded_init(8, 5, InitScheme::FanInUniform, 7);
        let b = seeded_init(8, 5, InitScheme::FanInUniform, 7);
        let c = seeded_init(8, 5, InitScheme::FanInUniform, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let lim = 1.0 / libm::sqrt(5.0);
        assert!(a.as_slice().iter().all(|v| v.abs() <= lim));
    }

    #[test]
    fn seeded_init_mean_within_three_sigma() {
        let m = seeded_init(1000, 1000, InitScheme::FanInUniform, 3);
        let n = m.as_slice().len() as f64;
        let mean = m.as_slice().iter().sum::<f64>() / n;
        let limit = 1.0 / libm::sqrt(1000.0);
        // uniform(-L, L): variance L^2 / 3
        let sigma_mean = limit / libm::sqrt(3.0) / libm::sqrt(n);
        assert!(mean.abs() < 3.0 * sigma_mean, "mean {mean} sigma {sigma_mean}");
    }

    #[test]
    fn matmul_variants_agree() {
        let a = seeded_init(3, 4, InitScheme::Uniform(1.0), 1);
        let b = seeded_init(5, 4, InitScheme::Uniform(1.0), 2);
        let nt = a.matmul_nt(&b).unwrap();
        let nn = a.matmul(&b.transpose()).unwrap();
        let tn = a.transpose().matmul_tn(&b.transpose()).unwrap();
        for ((x, y), z) in nt.as_slice().iter().zip(nn.as_slice()).zip(tn.as_slice()) {
            assert!((x - y).abs() < 1e-14 && (x - z).abs() < 1e-14);
        }
    }

    #[test]
    fn from_vec_rejects_nan() {
        assert!(Matrix::from_vec(1, 1, vec![f64::NAN]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![0.0]).is_err());
    }

    proptest! {
        #[test]
        fn affine_is_affine(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = crate::rng_from_seed(seed);
            let mut l = AffineLayer::init(4, 3, InitScheme::Uniform(1.0), &mut rng);
            l.bias_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
            let x = init_with_rng(2, 4, InitScheme::Uniform(1.0), &mut rng);
            let y = init_with_rng(2, 4, InitScheme::Uniform(1.0), &mut rng);
            let mut comb = x.scaled(a);
            comb.add_scaled(b, &y).unwrap();
            let lhs = l.forward(&comb).unwrap();
            let mut rhs = l.forward(&x).unwrap().scaled(a);
            rhs.add_scaled(b, &l.forward(&y).unwrap()).unwrap();
            for r in 0..2 {
                for c in 0..3 {
                    let expected = rhs.get(r, c) - (a + b - 1.0) * l.bias()[c];
                    prop_assert!((lhs.get(r, c) - expected).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn sigmoid_symmetry(x in -800.0f64..800.0) {
            prop_assert!((sigmoid_scalar(x) + sigmoid_scalar(-x) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn plain_gd_without_momentum(w in -5.0f64..5.0, g in -5.0f64..5.0, lr in 0.0f64..1.0) {
            let mut l = AffineLayer::new(Matrix::from_rows(&[[w]]).unwrap(), vec![w]).unwrap();
            let grads = AffineGrads { weight: Matrix::from_rows(&[[g]]).unwrap(), bias: vec![g] };
            let cfg = OptimizerConfig { learning_rate: lr, momentum: 0.0, weight_decay: 0.0, max_steps: 1 };
            l.sgd_momentum_step(&grads, &cfg).unwrap();
            prop_assert_eq!(l.weight().get(0, 0), w - lr * g);
            prop_assert_eq!(l.bias()[0], w - lr * g);
        }

        #[test]
        fn forward_preserves_finiteness(seed in 0u64..500) {
            let mut rng = crate::rng_from_seed(seed);
            let l = AffineLayer::init(6, 4, InitScheme::FanInUniform, &mut rng);
            let x = init_with_rng(3, 6, InitScheme::Uniform(100.0), &mut rng);
            let y = sigmoid(&l.forward(&x).unwrap());
            prop_assert!(y.is_finite());
        }
    }
}
