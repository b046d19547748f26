//! Finite-difference verification of every trainable model on a small dataset.

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::distill::{student_loss_and_grad, TeacherSignals};
use crate::error::{Error, Result};
use crate::numcore::{grad_check, GradCheckReport, Rng};
use crate::student::{StudentInputs, StudentModel};
use crate::teachers::{ContentTeacher, GraphInputs, PropagationTeacher, Teacher};

/// Six news, three users, trees of at most four nodes, `d = 4`.
pub const TOY6: &str = include_str!("../fixtures/toy6.jsonl");

pub fn toy6() -> Dataset {
    Dataset::from_jsonl(TOY6).expect("bundled fixture is valid")
}

/// Smallest `|pre-activation|` accepted at a checked point. Closer to a ReLU
/// kink, a central difference can straddle it.
pub const KINK_MARGIN: f64 = 1e-3;

const MAX_DRAWS: u64 = 200;

#[derive(Debug, Clone)]
pub struct ModelCheck {
    pub model: &'static str,
    /// Which initialization draw cleared the kink margin.
    pub draw: u64,
    pub report: GradCheckReport,
}

fn draw_away_from_kinks<M>(
    what: &str,
    seed: u64,
    mut build: impl FnMut(&mut Rng) -> M,
    mut margin: impl FnMut(&M) -> Result<f64>,
) -> Result<(u64, M)> {
    for draw in 0..MAX_DRAWS {
        let mut rng = Rng::derive(seed, &format!("gradcheck/{what}/{draw}"));
        let m = build(&mut rng);
        if margin(&m)? > KINK_MARGIN {
            return Ok((draw, m));
        }
    }
    Err(Error::Validation(format!(
        "no {what} initialization within {MAX_DRAWS} draws keeps pre-activations {KINK_MARGIN} away from zero"
    )))
}

/// Checks the content teacher and the propagation teacher under their own
/// cross-entropy, and the student under the full distillation objective
/// with the teachers' outputs held fixed. All news are labelled rows.
pub fn pipeline_grad_check(ds: &Dataset, cfg: &RunConfig, h: f64) -> Result<Vec<ModelCheck>> {
    cfg.validate()?;
    let labels = ds.labels();
    let mask: Vec<usize> = (0..ds.len()).collect();
    let x = ds.news_features();
    let graph = GraphInputs::from_dataset(ds)?;
    let inputs = StudentInputs::from_dataset(ds)?;
    let mut out = Vec::new();

    let (draw, mut ct) = draw_away_from_kinks(
        "content",
        cfg.seed,
        |rng| ContentTeacher::new(ds.feature_dim, cfg.hidden_dim, cfg.final_relu, rng),
        |m| Ok(m.forward(&x)?.1.min_abs_preactivation(cfg.final_relu)),
    )?;
    let report = grad_check(&mut ct, h, |m| m.ce_loss_and_grad(&x, &labels, &mask))?;
    out.push(ModelCheck { model: "content teacher", draw, report });

    let (draw, mut pt) = draw_away_from_kinks(
        "propagation",
        cfg.seed,
        |rng| PropagationTeacher::new(ds.len(), cfg.pe_dim, cfg.hidden_dim, cfg.refiner_hidden, cfg.final_relu, rng),
        |m| Ok(m.forward(&graph)?.1.min_abs_preactivation(cfg.final_relu)),
    )?;
    let report = grad_check(&mut pt, h, |m| m.ce_loss_and_grad(&graph, &labels, &mask))?;
    out.push(ModelCheck { model: "propagation teacher", draw, report });

    let teachers = TeacherSignals {
        content: cfg.use_ct.then(|| ct.output(&x)).transpose()?,
        propagation: cfg.use_pt.then(|| pt.output(&graph)).transpose()?,
    };
    let mkd = cfg.mkd();
    let (draw, mut sm) = draw_away_from_kinks(
        "student",
        cfg.seed,
        |rng| StudentModel::new(ds.feature_dim, cfg.hidden_dim, cfg.student_options(), rng),
        |m| Ok(m.forward(&inputs)?.1.min_abs_preactivation(cfg.final_relu)),
    )?;
    let report = grad_check(&mut sm, h, |m| student_loss_and_grad(m, &inputs, &teachers, &labels, &mask, &mkd).map(|b| b.total))?;
    out.push(ModelCheck { model: "student", draw, report });
    Ok(out)
}
