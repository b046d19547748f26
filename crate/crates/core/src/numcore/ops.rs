//! Forward kernels and their hand-derived backward rules.

use super::matrix::Matrix;
use super::param::Param;
use crate::error::{Error, Result};

/// Floor applied to the second KL argument before taking logs.
pub const KL_CLAMP: f64 = 1e-12;

const DISTRIBUTION_TOL: f64 = 1e-9;

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient of ReLU given the pre-activation; the subgradient at 0 is 0.
pub fn relu_backward(pre: &Matrix, upstream: &Matrix) -> Matrix {
    let mut g = upstream.clone();
    for (gv, &p) in g.data_mut().iter_mut().zip(pre.data()) {
        if p <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// Smallest |x| over a pre-activation matrix; used to keep gradient checks away from kinks.
pub fn min_abs(x: &Matrix) -> f64 {
    x.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// Row-wise `softmax(z / temperature)` with max subtraction.
pub fn softmax_rows(z: &Matrix, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Parameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut out = z.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i), temperature);
    }
    Ok(out)
}

fn softmax_in_place(row: &mut [f64], temperature: f64) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = ((*v - max) / temperature).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Row-wise log-softmax of `z / temperature`.
pub fn log_softmax_rows(z: &Matrix, temperature: f64) -> Matrix {
    let mut out = z.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = row
            .iter()
            .map(|&v| ((v - max) / temperature).exp())
            .sum::<f64>()
            .ln();
        for v in row.iter_mut() {
            *v = (*v - max) / temperature - lse;
        }
    }
    out
}

fn check_distribution_rows(m: &Matrix, which: &str) -> Result<()> {
    for i in 0..m.rows() {
        let row = m.row(i);
        let total: f64 = row.iter().sum();
        if row.iter().any(|&v| v < 0.0 || !v.is_finite()) || (total - 1.0).abs() > DISTRIBUTION_TOL
        {
            return Err(Error::Validation(format!(
                "row {i} of {which} is not a distribution (sum {total})"
            )));
        }
    }
    Ok(())
}

/// Mean over rows of `Σ p·ln(p/q)`, with `0·ln(0/q) = 0` and `q` floored at [`KL_CLAMP`].
pub fn kl_rows(p: &Matrix, q: &Matrix) -> Result<f64> {
    if p.shape() != q.shape() {
        return Err(Error::dim("kl_rows", p.shape(), q.shape()));
    }
    check_distribution_rows(p, "p")?;
    check_distribution_rows(q, "q")?;
    Ok(kl_rows_unchecked(p, q))
}

pub(crate) fn kl_rows_unchecked(p: &Matrix, q: &Matrix) -> f64 {
    if p.rows() == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..p.rows() {
        for (&pv, &qv) in p.row(i).iter().zip(q.row(i)) {
            if pv > 0.0 {
                total += pv * (pv / qv.max(KL_CLAMP)).ln();
            }
        }
    }
    total / p.rows() as f64
}

/// `ln Σ exp(v)`, accurate when one term dominates.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let (max, tail) = log_sum_exp_split(row);
    max + tail
}

/// `(max, ln Σ exp(v − max))`, keeping the two parts apart so callers can
/// subtract a logit from `max` without cancellation.
pub fn log_sum_exp_split(row: &[f64]) -> (f64, f64) {
    let mut top = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[top] {
            top = k;
        }
    }
    let max = row[top];
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != top)
        .map(|(_, &v)| (v - max).exp())
        .sum();
    (max, rest.ln_1p())
}

/// Masked mean cross-entropy of `softmax(logits)` against integer labels.
///
/// Returns the loss and its gradient with respect to `logits`; rows outside
/// `mask` get zero gradient.
pub fn cross_entropy(logits: &Matrix, labels: &[usize], mask: &[usize]) -> Result<(f64, Matrix)> {
    if mask.is_empty() {
        return Err(Error::Parameter("cross-entropy mask is empty".into()));
    }
    let classes = logits.cols();
    let mut grad = Matrix::zeros(logits.rows(), classes);
    let scale = 1.0 / mask.len() as f64;
    let mut loss = 0.0;
    for &i in mask {
        if i >= logits.rows() || i >= labels.len() {
            return Err(Error::Parameter(format!(
                "mask index {i} outside {} rows",
                logits.rows()
            )));
        }
        let y = labels[i];
        if y >= classes {
            return Err(Error::Validation(format!(
                "label {y} at row {i} outside {classes} classes"
            )));
        }
        let row = logits.row(i);
        let (max, tail) = log_sum_exp_split(row);
        loss += (max - row[y]) + tail;
        let g = grad.row_mut(i);
        for (k, gv) in g.iter_mut().enumerate() {
            let p = ((row[k] - max) - tail).exp();
            *gv = scale * (p - if k == y { 1.0 } else { 0.0 });
        }
    }
    Ok((loss * scale, grad))
}

/// Affine layer `x·W + b` applied row-wise.
pub fn linear(x: &Matrix, w: &Param, b: &Param) -> Result<Matrix> {
    let mut out = x.matmul(&w.value)?;
    out.add_row_broadcast(&b.value)?;
    Ok(out)
}

/// Backward of [`linear`]: accumulates into `w.grad`/`b.grad`, returns `∂L/∂x`.
pub fn linear_backward(x: &Matrix, w: &mut Param, b: &mut Param, upstream: &Matrix) -> Result<Matrix> {
    w.grad.add_assign(&x.t_matmul(upstream)?)?;
    b.grad.add_assign(&upstream.col_sums())?;
    upstream.matmul_t(&w.value)
}

/// Same as [`linear_backward`] when the input gradient is not needed.
pub fn linear_backward_params(x: &Matrix, w: &mut Param, b: &mut Param, upstream: &Matrix) -> Result<()> {
    w.grad.add_assign(&x.t_matmul(upstream)?)?;
    b.grad.add_assign(&upstream.col_sums())?;
    Ok(())
}
