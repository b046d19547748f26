//! Two-channel distillation objective and the student training loop.
//!
//! Per teacher, a supervision term (tempered-softmax KL on logits) and a
//! guidance term (contrastive alignment of hidden vectors of the same news
//! against the other news in the batch). The student objective is
//!
//! ```text
//! L = CE + λ·sup_pt + β·tar_pt + (1−λ)·sup_ct + (1−β)·tar_ct
//! ```
//!
//! with teacher outputs held constant.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::metrics::evaluate_subset;
use crate::numcore::ops::{cross_entropy, kl_rows_unchecked, log_softmax_rows, log_sum_exp_split, softmax_rows, KL_CLAMP};
use crate::numcore::{Adam, Matrix, Parameterized};
use crate::student::{StudentInputs, StudentModel};
use crate::teachers::{TeacherOutput, TrainOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MkdConfig {
    pub lambda: f64,
    pub beta: f64,
    pub rho: f64,
    pub use_ct: bool,
    pub use_pt: bool,
    pub use_sup: bool,
    pub use_tar: bool,
    pub use_lgpi: bool,
    /// Teacher-first KL instead of the student-first order.
    pub kd_reverse_kl: bool,
}

impl Default for MkdConfig {
    fn default() -> Self {
        MkdConfig {
            lambda: 0.5,
            beta: 0.5,
            rho: 2.0,
            use_ct: true,
            use_pt: true,
            use_sup: true,
            use_tar: true,
            use_lgpi: true,
            kd_reverse_kl: false,
        }
    }
}

impl MkdConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("lambda", self.lambda), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("`{key}` must lie in [0, 1], got {v}")));
            }
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::Config(format!("`rho` must be positive, got {}", self.rho)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub sup_pt: f64,
    pub tar_pt: f64,
    pub sup_ct: f64,
    pub tar_ct: f64,
    pub total: f64,
}

/// `KL(softmax(z_s/ρ) ‖ softmax(z_t/ρ))`, mean over rows.
pub fn sup_loss(z_s: &Matrix, z_t: &Matrix, rho: f64) -> Result<f64> {
    Ok(sup_loss_grad(z_s, z_t, rho, false)?.0)
}

/// Supervision loss and its gradient with respect to the student logits.
/// With `reverse`, computes `KL(teacher ‖ student)` instead.
pub fn sup_loss_grad(z_s: &Matrix, z_t: &Matrix, rho: f64, reverse: bool) -> Result<(f64, Matrix)> {
    if z_s.shape() != z_t.shape() {
        return Err(Error::dim("sup_loss", z_s.shape(), z_t.shape()));
    }
    let p = softmax_rows(z_s, rho)?;
    let q = softmax_rows(z_t, rho)?;
    let n = z_s.rows();
    let mut grad = Matrix::zeros(n, z_s.cols());
    if n == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / (n as f64 * rho);
    if !reverse {
        let loss = kl_rows_unchecked(&p, &q);
        for i in 0..n {
            let (pr, qr) = (p.row(i), q.row(i));
            let g: Vec<f64> = pr
                .iter()
                .zip(qr)
                .map(|(&pv, &qv)| if pv > 0.0 { (pv / qv.max(KL_CLAMP)).ln() } else { 0.0 })
                .collect();
            let mean: f64 = pr.iter().zip(&g).map(|(a, b)| a * b).sum();
            for (k, out) in grad.row_mut(i).iter_mut().enumerate() {
                *out = scale * pr[k] * (g[k] - mean);
            }
        }
        Ok((loss, grad))
    } else {
        let log_p = log_softmax_rows(z_s, rho);
        let mut loss = 0.0;
        for i in 0..n {
            for (k, &qv) in q.row(i).iter().enumerate() {
                if qv > 0.0 {
                    loss += qv * (qv.ln() - log_p[(i, k)]);
                }
                grad[(i, k)] = scale * (p[(i, k)] - qv);
            }
        }
        Ok((loss / n as f64, grad))
    }
}

/// Contrastive alignment loss: mean over rows `i` of
/// `−ln[exp⟨s_i,t_i⟩ / Σ_j exp⟨s_i,t_j⟩]`.
pub fn tar_loss(h_s: &Matrix, h_t: &Matrix) -> Result<f64> {
    Ok(tar_loss_grad(h_s, h_t)?.0)
}

/// Guidance loss and its gradient with respect to `h_s`.
pub fn tar_loss_grad(h_s: &Matrix, h_t: &Matrix) -> Result<(f64, Matrix)> {
    if h_s.shape() != h_t.shape() {
        return Err(Error::dim("tar_loss", h_s.shape(), h_t.shape()));
    }
    let n = h_s.rows();
    if n == 0 {
        return Err(Error::Parameter("tar_loss needs at least one row".into()));
    }
    let sims = h_s.matmul_t(h_t)?;
    let mut g_sims = Matrix::zeros(n, n);
    let mut loss = 0.0;
    let scale = 1.0 / n as f64;
    for i in 0..n {
        let row = sims.row(i);
        let (max, tail) = log_sum_exp_split(row);
        loss += (max - row[i]) + tail;
        for (j, g) in g_sims.row_mut(i).iter_mut().enumerate() {
            let p = ((row[j] - max) - tail).exp();
            *g = scale * (p - if i == j { 1.0 } else { 0.0 });
        }
    }
    Ok((loss * scale, g_sims.matmul(h_t)?))
}

/// Everything the objective reads, for all `N` news.
pub struct MkdInputs<'a> {
    pub student_logits: &'a Matrix,
    pub student_hidden: &'a Matrix,
    pub labels: &'a [usize],
    /// Rows that contribute to every term (the training indices).
    pub mask: &'a [usize],
    pub content: Option<&'a TeacherOutput>,
    pub propagation: Option<&'a TeacherOutput>,
}

pub struct MkdGradients {
    pub logits: Matrix,
    pub hidden: Matrix,
}

fn scatter_rows(into: &mut Matrix, rows: &[usize], src: &Matrix, alpha: f64) {
    for (r, &i) in rows.iter().enumerate() {
        for (o, &v) in into.row_mut(i).iter_mut().zip(src.row(r)) {
            *o += alpha * v;
        }
    }
}

fn enabled_teacher<'a>(enabled: bool, out: Option<&'a TeacherOutput>, name: &str) -> Result<Option<&'a TeacherOutput>> {
    match (enabled, out) {
        (true, None) => Err(Error::Config(format!("{name} teacher enabled but its outputs are missing"))),
        (true, Some(o)) => Ok(Some(o)),
        (false, _) => Ok(None),
    }
}

/// Loss breakdown plus gradients with respect to the student logits and hidden rows.
pub fn mkd_loss_and_grad(inp: &MkdInputs<'_>, cfg: &MkdConfig) -> Result<(LossBreakdown, MkdGradients)> {
    cfg.validate()?;
    let pt = enabled_teacher(cfg.use_pt, inp.propagation, "propagation")?;
    let ct = enabled_teacher(cfg.use_ct, inp.content, "content")?;

    let (cls, mut g_logits) = cross_entropy(inp.student_logits, inp.labels, inp.mask)?;
    let mut g_hidden = Matrix::zeros(inp.student_hidden.rows(), inp.student_hidden.cols());
    let mut b = LossBreakdown {
        cls,
        ..Default::default()
    };
    let mut total = cls;

    let z_s = inp.student_logits.select_rows(inp.mask);
    let h_s = inp.student_hidden.select_rows(inp.mask);
    // Zero-weight terms are still reported but never touch the total or the
    // gradients, so λ = 1 retraces a run without the content term exactly.
    for (which, out, w_sup, w_tar) in [
        ("pt", pt, cfg.lambda, cfg.beta),
        ("ct", ct, 1.0 - cfg.lambda, 1.0 - cfg.beta),
    ] {
        let Some(out) = out else { continue };
        if cfg.use_sup {
            let z_t = out.logits.select_rows(inp.mask);
            let (v, g) = sup_loss_grad(&z_s, &z_t, cfg.rho, cfg.kd_reverse_kl)?;
            if w_sup != 0.0 {
                total += w_sup * v;
                scatter_rows(&mut g_logits, inp.mask, &g, w_sup);
            }
            if which == "pt" { b.sup_pt = v } else { b.sup_ct = v }
        }
        if cfg.use_tar {
            let h_t = out.hidden.select_rows(inp.mask);
            let (v, g) = tar_loss_grad(&h_s, &h_t)?;
            if w_tar != 0.0 {
                total += w_tar * v;
                scatter_rows(&mut g_hidden, inp.mask, &g, w_tar);
            }
            if which == "pt" { b.tar_pt = v } else { b.tar_ct = v }
        }
    }
    b.total = total;
    Ok((
        b,
        MkdGradients {
            logits: g_logits,
            hidden: g_hidden,
        },
    ))
}

/// Value-only form of [`mkd_loss_and_grad`].
pub fn mkd_total(inp: &MkdInputs<'_>, cfg: &MkdConfig) -> Result<LossBreakdown> {
    Ok(mkd_loss_and_grad(inp, cfg)?.0)
}

/// Frozen teacher outputs over all news.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TeacherSignals {
    pub content: Option<TeacherOutput>,
    pub propagation: Option<TeacherOutput>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentEpoch {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub val_acc: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StudentHistory {
    pub epochs: Vec<StudentEpoch>,
    pub best_epoch: usize,
    pub best_val_macro_f1: Option<f64>,
}

pub const HISTORY_HEADER: &str = "epoch,cls,sup_pt,tar_pt,sup_ct,tar_ct,total,val_acc,val_macro_f1";

impl StudentHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for e in &self.epochs {
            let l = &e.loss;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                e.epoch, l.cls, l.sup_pt, l.tar_pt, l.sup_ct, l.tar_ct, l.total, e.val_acc, e.val_macro_f1
            );
        }
        out
    }
}

/// Student loss and parameter gradients for one full-batch pass.
pub fn student_loss_and_grad(
    sm: &mut StudentModel,
    inputs: &StudentInputs,
    teachers: &TeacherSignals,
    labels: &[usize],
    mask: &[usize],
    cfg: &MkdConfig,
) -> Result<LossBreakdown> {
    let (out, cache) = sm.forward(inputs)?;
    let mk = MkdInputs {
        student_logits: &out.logits,
        student_hidden: &out.h_s,
        labels,
        mask,
        content: teachers.content.as_ref(),
        propagation: teachers.propagation.as_ref(),
    };
    let (breakdown, grads) = mkd_loss_and_grad(&mk, cfg)?;
    sm.backward(inputs, &cache, &grads.logits, Some(&grads.hidden))?;
    Ok(breakdown)
}

/// Full-batch Adam on the distillation objective with early stopping on
/// validation macro-F1. Teachers enter only through their fixed outputs.
pub fn train_student(
    sm: StudentModel,
    teachers: &TeacherSignals,
    inputs: &StudentInputs,
    labels: &[usize],
    split: &Split,
    cfg: &MkdConfig,
    opts: &TrainOptions,
) -> Result<(StudentModel, StudentHistory)> {
    cfg.validate()?;
    let mut model = sm;
    model.opts.use_lgpi = cfg.use_lgpi;
    let mut best = model.clone();
    let mut history = StudentHistory::default();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut since_best = 0;
    let mut adam = Adam::new(opts.lr);

    for epoch in 1..=opts.max_epochs {
        model.zero_grads();
        let loss = student_loss_and_grad(&mut model, inputs, teachers, labels, &split.train, cfg)?;
        if !loss.total.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("{loss:?}"),
            });
        }
        adam.step(model.params_mut())?;

        let preds = model.forward(inputs)?.0.predictions();
        let (val_acc, val_f1) = evaluate_subset(&preds, labels, &split.val)?;
        history.epochs.push(StudentEpoch {
            epoch,
            loss,
            val_acc,
            val_macro_f1: val_f1,
        });
        if val_f1 >= best_f1 {
            best_f1 = val_f1;
            best = model.clone();
            history.best_epoch = epoch;
            history.best_val_macro_f1 = Some(val_f1);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= opts.patience {
                break;
            }
        }
    }
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{numeric_gradient, relative_error, Rng};

    fn random(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform(-scale, scale)).collect()).unwrap()
    }

    #[test]
    fn sup_loss_examples() {
        let z = Matrix::from_rows(&[[0.3, -1.2], [2.0, 2.5]]);
        assert_eq!(sup_loss(&z, &z, 1.0).unwrap(), 0.0);
        let zs = Matrix::row_vector(&[2f64.ln(), 0.0]);
        let zt = Matrix::row_vector(&[0.0, 0.0]);
        let expected = (2.0 / 3.0) * (4.0f64 / 3.0).ln() + (1.0 / 3.0) * (2.0f64 / 3.0).ln();
        assert!((sup_loss(&zs, &zt, 1.0).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.0566).abs() < 1e-4);
        let far = Matrix::from_rows(&[[3.0, -2.0], [0.0, 4.0]]);
        let other = Matrix::from_rows(&[[-1.0, 1.0], [2.0, 0.0]]);
        assert!(sup_loss(&far, &other, 100.0).unwrap() <= 1e-3);
        assert!(sup_loss(&far, &Matrix::zeros(3, 2), 1.0).is_err());
    }

    #[test]
    fn sup_loss_gradients() {
        let mut rng = Rng::new(3);
        let zs = random(5, 2, 2.0, &mut rng);
        let zt = random(5, 2, 2.0, &mut rng);
        for reverse in [false, true] {
            for rho in [1.0, 2.0, 7.0] {
                let (_, g) = sup_loss_grad(&zs, &zt, rho, reverse).unwrap();
                let num = numeric_gradient(&zs, 1e-5, |z| sup_loss_grad(z, &zt, rho, reverse).unwrap().0);
                for (a, n) in g.data().iter().zip(num.data()) {
                    assert!(relative_error(*a, *n) <= 1e-6, "{reverse} {rho}: {a} vs {n}");
                }
            }
        }
    }

    #[test]
    fn tar_loss_examples() {
        let h = Matrix::row_vector(&[0.5, -2.0, 1.0]);
        assert_eq!(tar_loss(&h, &Matrix::row_vector(&[3.0, 1.0, 0.0])).unwrap(), 0.0);
        for n in [2usize, 4, 8] {
            let ones = Matrix::filled(n, 3, 1.0);
            let v = tar_loss(&ones, &ones).unwrap();
            assert!((v - (n as f64).ln()).abs() < 1e-12);
        }
        assert!(tar_loss(&Matrix::zeros(0, 2), &Matrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn tar_loss_gradient() {
        let mut rng = Rng::new(5);
        let hs = random(6, 4, 1.5, &mut rng);
        let ht = random(6, 4, 1.5, &mut rng);
        let (_, g) = tar_loss_grad(&hs, &ht).unwrap();
        let num = numeric_gradient(&hs, 1e-5, |h| tar_loss(h, &ht).unwrap());
        for (a, n) in g.data().iter().zip(num.data()) {
            assert!(relative_error(*a, *n) <= 1e-6, "{a} vs {n}");
        }
    }

    #[test]
    fn tar_loss_survives_large_dot_products() {
        let hs = Matrix::filled(3, 64, 10.0);
        let v = tar_loss(&hs, &hs).unwrap();
        assert!((v - 3f64.ln()).abs() < 1e-12);
    }

    fn outputs(rng: &mut Rng, n: usize, h: usize) -> TeacherOutput {
        TeacherOutput {
            hidden: random(n, h, 1.0, rng),
            logits: random(n, 2, 2.0, rng),
        }
    }

    #[test]
    fn total_recomputes_from_terms() {
        let mut rng = Rng::new(9);
        let (n, h) = (8, 5);
        let zs = random(n, 2, 2.0, &mut rng);
        let hs = random(n, h, 1.0, &mut rng);
        let ct = outputs(&mut rng, n, h);
        let pt = outputs(&mut rng, n, h);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let mask = [0, 2, 3, 5, 7];
        let inp = MkdInputs {
            student_logits: &zs,
            student_hidden: &hs,
            labels: &labels,
            mask: &mask,
            content: Some(&ct),
            propagation: Some(&pt),
        };
        let cfg = MkdConfig { lambda: 0.3, beta: 0.8, rho: 5.0, ..Default::default() };
        let b = mkd_total(&inp, &cfg).unwrap();

        let zs_m = zs.select_rows(&mask);
        let hs_m = hs.select_rows(&mask);
        let cls = cross_entropy(&zs, &labels, &mask).unwrap().0;
        let sup_pt = sup_loss(&zs_m, &pt.logits.select_rows(&mask), 5.0).unwrap();
        let tar_pt = tar_loss(&hs_m, &pt.hidden.select_rows(&mask)).unwrap();
        let sup_ct = sup_loss(&zs_m, &ct.logits.select_rows(&mask), 5.0).unwrap();
        let tar_ct = tar_loss(&hs_m, &ct.hidden.select_rows(&mask)).unwrap();
        for (got, want) in [(b.cls, cls), (b.sup_pt, sup_pt), (b.tar_pt, tar_pt), (b.sup_ct, sup_ct), (b.tar_ct, tar_ct)] {
            assert!((got - want).abs() <= 1e-12);
        }
        let total = cls + 0.3 * sup_pt + 0.8 * tar_pt + 0.7 * sup_ct + 0.2 * tar_ct;
        assert!((b.total - total).abs() <= 1e-12);
    }

    #[test]
    fn cls_only_total() {
        let mut rng = Rng::new(2);
        let zs = random(4, 2, 1.0, &mut rng);
        let hs = random(4, 3, 1.0, &mut rng);
        let labels = [0, 1, 1, 0];
        let inp = MkdInputs {
            student_logits: &zs,
            student_hidden: &hs,
            labels: &labels,
            mask: &[0, 1, 2],
            content: None,
            propagation: None,
        };
        let cfg = MkdConfig { use_ct: false, use_pt: false, use_sup: false, use_tar: false, ..Default::default() };
        let b = mkd_total(&inp, &cfg).unwrap();
        assert_eq!(b.total, b.cls);
        assert_eq!(b.cls, cross_entropy(&zs, &labels, &[0, 1, 2]).unwrap().0);
    }

    #[test]
    fn missing_teacher_is_configuration_error() {
        let zs = Matrix::zeros(2, 2);
        let hs = Matrix::zeros(2, 2);
        let inp = MkdInputs {
            student_logits: &zs,
            student_hidden: &hs,
            labels: &[0, 1],
            mask: &[0, 1],
            content: None,
            propagation: None,
        };
        assert!(matches!(mkd_total(&inp, &MkdConfig::default()), Err(Error::Config(_))));
        let bad = MkdConfig { lambda: 1.5, ..Default::default() };
        assert!(matches!(mkd_total(&inp, &bad), Err(Error::Config(m)) if m.contains("lambda")));
    }

    #[test]
    fn history_csv_header() {
        let h = StudentHistory::default();
        assert_eq!(h.to_csv(), format!("{HISTORY_HEADER}\n"));
    }
}
