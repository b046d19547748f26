//! End-to-end runs: noise, teachers, student, test metrics, persistence.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{split_dataset, Dataset, Split};
use crate::distill::{train_student, StudentHistory, TeacherSignals};
use crate::error::{Error, Result};
use crate::graph::{build_engagement_matrix, build_global_graph};
use crate::metrics::evaluate_subset;
use crate::noise::apply_noise;
use crate::numcore::{Matrix, Parameterized, Rng};
use crate::student::{StudentInputs, StudentModel};
use crate::teachers::{
    train_teacher, ContentTeacher, GraphInputs, PropagationTeacher, Teacher, TeacherHistory,
};

/// Model inputs derived once per (dataset, noise, seed).
pub struct Prepared {
    pub dataset: Dataset,
    pub split: Split,
    pub labels: Vec<usize>,
    pub x_news: Matrix,
    pub graph: GraphInputs,
    pub student_inputs: StudentInputs,
}

/// Split on the clean data, then perturb according to the noise settings.
pub fn prepare(ds: &Dataset, cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let split = split_dataset(ds, cfg.seed)?;
    let dataset = apply_noise(ds, &cfg.noise_spec(), &split)?;
    let a_news = build_global_graph(&build_engagement_matrix(&dataset)?);
    Ok(Prepared {
        labels: dataset.labels(),
        x_news: dataset.news_features(),
        student_inputs: StudentInputs::new(&dataset, &a_news)?,
        graph: GraphInputs::from_adjacency(a_news)?,
        split,
        dataset,
    })
}

#[derive(Debug, Clone, Default)]
pub struct TrainedTeachers {
    pub content: Option<(ContentTeacher, TeacherHistory)>,
    pub propagation: Option<(PropagationTeacher, TeacherHistory)>,
}

impl TrainedTeachers {
    /// Outputs over all news of the teachers `cfg` enables.
    pub fn signals(&self, p: &Prepared, cfg: &RunConfig) -> Result<TeacherSignals> {
        let missing = |name: &str| Error::Config(format!("{name} teacher enabled but not trained"));
        let content = match (cfg.use_ct, &self.content) {
            (true, Some((t, _))) => Some(t.output(&p.x_news)?),
            (true, None) => return Err(missing("content")),
            (false, _) => None,
        };
        let propagation = match (cfg.use_pt, &self.propagation) {
            (true, Some((t, _))) => Some(t.output(&p.graph)?),
            (true, None) => return Err(missing("propagation")),
            (false, _) => None,
        };
        Ok(TeacherSignals { content, propagation })
    }
}

pub fn new_content_teacher(p: &Prepared, cfg: &RunConfig) -> ContentTeacher {
    let mut rng = Rng::derive(cfg.seed, "init/content");
    ContentTeacher::new(p.dataset.feature_dim, cfg.hidden_dim, cfg.final_relu, &mut rng)
}

pub fn new_propagation_teacher(p: &Prepared, cfg: &RunConfig) -> PropagationTeacher {
    let mut rng = Rng::derive(cfg.seed, "init/propagation");
    PropagationTeacher::new(
        p.graph.n(),
        cfg.pe_dim,
        cfg.hidden_dim,
        cfg.refiner_hidden,
        cfg.final_relu,
        &mut rng,
    )
}

pub fn new_student(p: &Prepared, cfg: &RunConfig) -> StudentModel {
    let mut rng = Rng::derive(cfg.seed, "init/student");
    StudentModel::new(p.dataset.feature_dim, cfg.hidden_dim, cfg.student_options(), &mut rng)
}

/// Train the teachers `cfg` enables, or both with `all`.
pub fn train_teachers(p: &Prepared, cfg: &RunConfig, all: bool) -> Result<TrainedTeachers> {
    let mut out = TrainedTeachers::default();
    if all || cfg.use_ct {
        let ct = new_content_teacher(p, cfg);
        out.content = Some(train_teacher(ct, &p.x_news, &p.labels, &p.split, &cfg.train_options(cfg.lr_ct))?);
    }
    if all || cfg.use_pt {
        let pt = new_propagation_teacher(p, cfg);
        out.propagation = Some(train_teacher(pt, &p.graph, &p.labels, &p.split, &cfg.train_options(cfg.lr_pt))?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct StudentRun {
    pub config_hash: String,
    pub student: StudentModel,
    pub history: StudentHistory,
    pub val_macro_f1: f64,
    pub test_accuracy: f64,
    pub test_macro_f1: f64,
}

/// Distil into a fresh student and score it on the test split.
pub fn run_student(p: &Prepared, teachers: &TrainedTeachers, cfg: &RunConfig) -> Result<StudentRun> {
    let signals = teachers.signals(p, cfg)?;
    let student = new_student(p, cfg);
    let (student, history) = train_student(
        student,
        &signals,
        &p.student_inputs,
        &p.labels,
        &p.split,
        &cfg.mkd(),
        &cfg.train_options(cfg.lr_student),
    )?;
    let preds = student.forward(&p.student_inputs)?.0.predictions();
    let (_, val_macro_f1) = evaluate_subset(&preds, &p.labels, &p.split.val)?;
    let (test_accuracy, test_macro_f1) = evaluate_subset(&preds, &p.labels, &p.split.test)?;
    Ok(StudentRun {
        config_hash: cfg.config_hash(),
        student,
        history,
        val_macro_f1,
        test_accuracy,
        test_macro_f1,
    })
}

pub struct PipelineRun {
    pub teachers: TrainedTeachers,
    pub student: StudentRun,
}

pub fn run_pipeline(ds: &Dataset, cfg: &RunConfig) -> Result<PipelineRun> {
    let p = prepare(ds, cfg)?;
    let teachers = train_teachers(&p, cfg, false)?;
    let student = run_student(&p, &teachers, cfg)?;
    Ok(PipelineRun { teachers, student })
}

pub const CHECKPOINT_FORMAT: &str = "propkd-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub model: String,
    pub config_hash: String,
    pub params: Vec<SavedParam>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SavedParam {
    pub name: String,
    pub value: Matrix,
}

impl Checkpoint {
    pub fn capture(model: &impl Parameterized, kind: &str, config_hash: &str) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            model: kind.into(),
            config_hash: config_hash.into(),
            params: model
                .params()
                .into_iter()
                .map(|p| SavedParam {
                    name: p.name.clone(),
                    value: p.value.clone(),
                })
                .collect(),
        }
    }

    /// Copy the saved values into `model`, checking names and shapes.
    pub fn restore(&self, model: &mut impl Parameterized) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Validation(format!("unknown checkpoint format `{}`", self.format)));
        }
        let mut targets = model.params_mut();
        if targets.len() != self.params.len() {
            return Err(Error::Validation(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                targets.len()
            )));
        }
        for (t, s) in targets.iter_mut().zip(&self.params) {
            let v = &s.value;
            if t.name != s.name || t.value.shape() != v.shape() || v.data().len() != v.rows() * v.cols() {
                return Err(Error::Validation(format!(
                    "checkpoint parameter `{}` {:?} does not fit `{}` {:?}",
                    s.name,
                    v.shape(),
                    t.name,
                    t.value.shape()
                )));
            }
            t.value = v.clone();
            t.zero_grad();
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Test metrics of a saved student on the dataset and config it was trained with.
pub fn evaluate_checkpoint(ds: &Dataset, cfg: &RunConfig, ckpt: &Checkpoint) -> Result<(f64, f64)> {
    let p = prepare(ds, cfg)?;
    let mut student = new_student(&p, cfg);
    ckpt.restore(&mut student)?;
    let preds = student.forward(&p.student_inputs)?.0.predictions();
    evaluate_subset(&preds, &p.labels, &p.split.test)
}
