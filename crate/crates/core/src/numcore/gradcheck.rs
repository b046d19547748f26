//! Central finite-difference verification of analytic gradients.

use super::matrix::Matrix;
use super::param::Parameterized;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Central-difference gradient of a scalar function of one matrix.
pub fn numeric_gradient(x: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut probe = x.clone();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for k in 0..x.data().len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[k] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[k] = orig;
        out.data_mut()[k] = (plus - minus) / (2.0 * h);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamError {
    pub name: String,
    pub coords: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_coord: usize,
    pub coords_checked: usize,
    pub per_param: Vec<ParamError>,
}

/// Compares the analytic gradient produced by `loss_and_grad` against central
/// differences for every coordinate of every parameter of `model`.
///
/// `loss_and_grad` must return the loss and accumulate `∂loss/∂θ` into the
/// (already zeroed) gradient buffers.
pub fn grad_check<M, F>(model: &mut M, h: f64, mut loss_and_grad: F) -> Result<GradCheckReport>
where
    M: Parameterized,
    F: FnMut(&mut M) -> Result<f64>,
{
    model.zero_grads();
    loss_and_grad(model)?;
    let analytic: Vec<Matrix> = model.params().iter().map(|p| p.grad.clone()).collect();
    model.zero_grads();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_coord: 0,
        coords_checked: 0,
        per_param: Vec::new(),
    };
    for (pi, grad) in analytic.iter().enumerate() {
        let name = model.params()[pi].name.clone();
        let mut param_max = 0.0f64;
        for k in 0..grad.data().len() {
            let orig = model.params()[pi].value.data()[k];
            model.params_mut()[pi].value.data_mut()[k] = orig + h;
            let plus = loss_and_grad(model)?;
            model.params_mut()[pi].value.data_mut()[k] = orig - h;
            let minus = loss_and_grad(model)?;
            model.params_mut()[pi].value.data_mut()[k] = orig;
            model.zero_grads();

            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grad.data()[k], numeric);
            param_max = param_max.max(err);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = name.clone();
                report.worst_coord = k;
            }
        }
        report.coords_checked += grad.data().len();
        report.per_param.push(ParamError {
            name,
            coords: grad.data().len(),
            max_rel_err: param_max,
        });
    }
    Ok(report)
}
