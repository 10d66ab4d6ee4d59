//! Forward and backward kernels for the dense layers used by the models.
//!
//! Activations are stored as `N x features` row-major matrices, one example
//! per row. Weights are `out x in`, so a linear layer computes `x * W^T + b`.

use rand::Rng;

use super::matrix::{gemm, MatRef, Matrix, Real};
use crate::error::{Error, Result};
use crate::rng;

/// Train mode samples dropout masks; eval mode is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `y[n] = W x[n] + b`.
pub fn linear_forward<F: Real>(x: MatRef<'_, F>, w: MatRef<'_, F>, b: &[F]) -> Result<Matrix<F>> {
    if x.cols != w.cols || b.len() != w.rows {
        return Err(Error::shape(
            "linear_forward",
            format!(
                "x {}x{}, W {}x{}, b {}",
                x.rows,
                x.cols,
                w.rows,
                w.cols,
                b.len()
            ),
        ));
    }
    let mut y = Matrix::zeros(x.rows, w.rows);
    for r in 0..x.rows {
        y.row_mut(r).copy_from_slice(b);
    }
    gemm(x, false, w, true, F::one(), &mut y)?;
    Ok(y)
}

/// Gradients of a linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads<F> {
    pub grad_x: Matrix<F>,
    pub grad_w: Matrix<F>,
    pub grad_b: Vec<F>,
}

/// Full backward pass: `grad_x = grad_y W`, `grad_W = grad_y^T x`,
/// `grad_b = column sums of grad_y`.
pub fn linear_backward<F: Real>(
    grad_y: MatRef<'_, F>,
    x: MatRef<'_, F>,
    w: MatRef<'_, F>,
) -> Result<LinearGrads<F>> {
    let (grad_w, grad_b) = linear_param_grads(grad_y, x)?;
    if grad_w.shape() != (w.rows, w.cols) {
        return Err(Error::shape(
            "linear_backward",
            format!(
                "grad_W is {:?} but W is {}x{}",
                grad_w.shape(),
                w.rows,
                w.cols
            ),
        ));
    }
    let grad_x = linear_input_grad(grad_y, w)?;
    Ok(LinearGrads {
        grad_x,
        grad_w,
        grad_b,
    })
}

/// Weight and bias gradients only.
pub fn linear_param_grads<F: Real>(
    grad_y: MatRef<'_, F>,
    x: MatRef<'_, F>,
) -> Result<(Matrix<F>, Vec<F>)> {
    if grad_y.rows != x.rows {
        return Err(Error::shape(
            "linear_backward",
            format!("grad_y has {} rows, x has {}", grad_y.rows, x.rows),
        ));
    }
    let mut grad_w = Matrix::zeros(grad_y.cols, x.cols);
    gemm(grad_y, true, x, false, F::zero(), &mut grad_w)?;
    let mut grad_b = vec![F::zero(); grad_y.cols];
    for r in 0..grad_y.rows {
        for (acc, &g) in grad_b.iter_mut().zip(grad_y.row(r)) {
            *acc = *acc + g;
        }
    }
    Ok((grad_w, grad_b))
}

/// Input gradient only: `grad_y W`.
pub fn linear_input_grad<F: Real>(grad_y: MatRef<'_, F>, w: MatRef<'_, F>) -> Result<Matrix<F>> {
    if grad_y.cols != w.rows {
        return Err(Error::shape(
            "linear_backward",
            format!("grad_y has {} cols, W has {} rows", grad_y.cols, w.rows),
        ));
    }
    let mut grad_x = Matrix::zeros(grad_y.rows, w.cols);
    gemm(grad_y, false, w, false, F::zero(), &mut grad_x)?;
    Ok(grad_x)
}

pub fn relu<F: Real>(x: &Matrix<F>) -> Matrix<F> {
    x.map(|v| if v > F::zero() { v } else { F::zero() })
}

/// Passes the gradient where the pre-activation was strictly positive. The
/// subgradient at exactly 0 is 0.
pub fn relu_backward<F: Real>(grad_y: &Matrix<F>, x: &Matrix<F>) -> Result<Matrix<F>> {
    if !grad_y.same_shape(x) {
        return Err(Error::shape(
            "relu_backward",
            format!("grad {:?} vs input {:?}", grad_y.shape(), x.shape()),
        ));
    }
    let data = grad_y
        .data()
        .iter()
        .zip(x.data())
        .map(|(&g, &v)| if v > F::zero() { g } else { F::zero() })
        .collect();
    Matrix::from_vec(x.rows(), x.cols(), data)
}

/// Keep-mask of one dropout application.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    rate: f64,
    keep: Vec<bool>,
}

impl DropoutMask {
    pub fn all_ones(len: usize, rate: f64) -> Self {
        Self {
            rate,
            keep: vec![true; len],
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn is_all_ones(&self) -> bool {
        self.keep.iter().all(|&k| k)
    }

    /// Multiplier applied to kept elements, `1 / (1 - rate)`.
    pub fn scale<F: Real>(&self) -> F {
        F::from_f64_lossy(1.0 / (1.0 - self.rate))
    }
}

/// Inverted dropout. In train mode each element survives with probability
/// `1 - rate` and is scaled by `1 / (1 - rate)`; eval mode is the identity.
pub fn dropout_forward<F: Real>(
    x: &Matrix<F>,
    rate: f64,
    mode: Mode,
    rng_key: u64,
) -> Result<(Matrix<F>, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), DropoutMask::all_ones(x.data().len(), rate)));
    }
    let mut rng = rng::stream(rng_key);
    let keep: Vec<bool> = (0..x.data().len())
        .map(|_| rng.random::<f64>() >= rate)
        .collect();
    let mask = DropoutMask { rate, keep };
    let y = apply_mask(x, &mask);
    Ok((y, mask))
}

pub fn dropout_backward<F: Real>(grad_y: &Matrix<F>, mask: &DropoutMask) -> Result<Matrix<F>> {
    if grad_y.data().len() != mask.keep.len() {
        return Err(Error::shape(
            "dropout_backward",
            format!(
                "grad has {} elements, mask has {}",
                grad_y.data().len(),
                mask.keep.len()
            ),
        ));
    }
    Ok(apply_mask(grad_y, mask))
}

fn apply_mask<F: Real>(x: &Matrix<F>, mask: &DropoutMask) -> Matrix<F> {
    if mask.is_all_ones() {
        return x.clone();
    }
    let scale: F = mask.scale();
    let data = x
        .data()
        .iter()
        .zip(&mask.keep)
        .map(|(&v, &k)| if k { v * scale } else { F::zero() })
        .collect();
    Matrix::from_vec(x.rows(), x.cols(), data).expect("mask length matches")
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}
