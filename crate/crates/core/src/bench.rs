//! Experiment harnesses: noise robustness, ablations, and the λ/β/ρ sweep.
//!
//! Rows come out in a fixed nested-loop order (documented per harness), so
//! `metrics.csv` is reproducible byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::noise::NoiseKind;
use crate::pipeline::{prepare, run_student, train_teachers, StudentRun};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub seed: u64,
    pub config_hash: String,
    pub noise_kind: NoiseKind,
    pub noise_ratio: f64,
    pub lambda: f64,
    pub beta: f64,
    pub rho: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
}

impl MetricRow {
    pub fn from_run(run_id: impl Into<String>, cfg: &RunConfig, run: &StudentRun) -> Self {
        MetricRow {
            run_id: run_id.into(),
            seed: cfg.seed,
            config_hash: run.config_hash.clone(),
            noise_kind: cfg.noise_kind,
            noise_ratio: cfg.noise_ratio,
            lambda: cfg.lambda,
            beta: cfg.beta,
            rho: cfg.rho,
            accuracy: run.test_accuracy,
            macro_f1: run.test_macro_f1,
        }
    }
}

pub const METRICS_HEADER: &str = "run_id,seed,config_hash,noise_kind,noise_ratio,lambda,beta,rho,accuracy,macro_f1";

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.run_id, r.seed, r.config_hash, r.noise_kind, r.noise_ratio, r.lambda, r.beta, r.rho, r.accuracy, r.macro_f1
        );
    }
    out
}

pub fn write_metrics_csv(rows: &[MetricRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// One row per (kind, ratio, seed), in that nesting order. Each cell applies
/// its noise, trains both stages from scratch and scores the test split.
pub fn robustness_sweep(
    ds: &Dataset,
    base: &RunConfig,
    ratios: &[f64],
    kinds: &[NoiseKind],
    seeds: &[u64],
) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::with_capacity(kinds.len() * ratios.len() * seeds.len());
    for &kind in kinds {
        for &ratio in ratios {
            for &seed in seeds {
                let cfg = RunConfig {
                    noise_kind: kind,
                    noise_ratio: ratio,
                    seed,
                    ..base.clone()
                };
                let p = prepare(ds, &cfg)?;
                let teachers = train_teachers(&p, &cfg, false)?;
                let run = run_student(&p, &teachers, &cfg)?;
                rows.push(MetricRow::from_run(format!("noise:{kind}:{ratio}"), &cfg, &run));
            }
        }
    }
    Ok(rows)
}

pub const FULL: &str = "full";

/// The six ablation configurations: the full model plus one per removed part.
pub fn ablation_configs(base: &RunConfig) -> Vec<(&'static str, RunConfig)> {
    let full = RunConfig {
        use_ct: true,
        use_pt: true,
        use_sup: true,
        use_tar: true,
        use_lgpi: true,
        ..base.clone()
    };
    vec![
        (FULL, full.clone()),
        ("w/o Content Teacher", RunConfig { use_ct: false, ..full.clone() }),
        ("w/o Propagation Teacher", RunConfig { use_pt: false, ..full.clone() }),
        ("w/o L_tar", RunConfig { use_tar: false, ..full.clone() }),
        ("w/o L_sup", RunConfig { use_sup: false, ..full.clone() }),
        ("w/o LGPI", RunConfig { use_lgpi: false, ..full }),
    ]
}

/// Rows ordered by seed, then by the order of [`ablation_configs`].
/// Teachers are trained once per seed and shared by the six students.
pub fn ablation_suite(ds: &Dataset, base: &RunConfig, seeds: &[u64]) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::with_capacity(6 * seeds.len());
    for &seed in seeds {
        let seeded = RunConfig { seed, ..base.clone() };
        let p = prepare(ds, &seeded)?;
        let teachers = train_teachers(&p, &seeded, true)?;
        for (label, cfg) in ablation_configs(&seeded) {
            let run = run_student(&p, &teachers, &cfg)?;
            rows.push(MetricRow::from_run(label, &cfg, &run));
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSweep {
    /// Grid rows (λ-major, then β, then seed) followed by ρ rows (ρ, then seed).
    pub rows: Vec<MetricRow>,
    /// Validation macro-F1 of each row, aligned with `rows`.
    pub val_macro_f1: Vec<f64>,
    pub best_lambda: f64,
    pub best_beta: f64,
}

/// Full (λ, β) grid at the base ρ, then a ρ sweep at the best pair. The best
/// pair maximizes mean validation macro-F1 over seeds; ties go to the
/// smaller λ, then the smaller β.
pub fn param_sweep(
    ds: &Dataset,
    base: &RunConfig,
    lambdas: &[f64],
    betas: &[f64],
    rhos: &[f64],
    seeds: &[u64],
) -> Result<ParamSweep> {
    if lambdas.is_empty() || betas.is_empty() || rhos.is_empty() || seeds.is_empty() {
        return Err(Error::Config("parameter sweep grids and seed list must be nonempty".into()));
    }
    let mut prepared = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = RunConfig { seed, ..base.clone() };
        let p = prepare(ds, &cfg)?;
        let teachers = train_teachers(&p, &cfg, false)?;
        prepared.push((cfg, p, teachers));
    }
    let mut sweep = ParamSweep {
        rows: Vec::new(),
        val_macro_f1: Vec::new(),
        best_lambda: lambdas[0],
        best_beta: betas[0],
    };
    let run_cell = |label: String, adjust: &dyn Fn(&RunConfig) -> RunConfig, sweep: &mut ParamSweep| -> Result<f64> {
        let mut vals = Vec::with_capacity(seeds.len());
        for (seeded, p, teachers) in &prepared {
            let cfg = adjust(seeded);
            cfg.validate()?;
            let run = run_student(p, teachers, &cfg)?;
            sweep.rows.push(MetricRow::from_run(label.clone(), &cfg, &run));
            sweep.val_macro_f1.push(run.val_macro_f1);
            vals.push(run.val_macro_f1);
        }
        Ok(mean(vals))
    };

    let mut best: Option<(f64, f64, f64)> = None;
    let mut sorted_l = lambdas.to_vec();
    sorted_l.sort_by(f64::total_cmp);
    let mut sorted_b = betas.to_vec();
    sorted_b.sort_by(f64::total_cmp);
    for &l in &sorted_l {
        for &b in &sorted_b {
            let score = run_cell(
                format!("grid:{l}:{b}"),
                &|c| RunConfig { lambda: l, beta: b, ..c.clone() },
                &mut sweep,
            )?;
            // ascending iteration plus strict improvement keeps the smaller pair on ties
            if best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, l, b));
            }
        }
    }
    let (_, bl, bb) = best.expect("nonempty grid");
    sweep.best_lambda = bl;
    sweep.best_beta = bb;
    for &r in rhos {
        run_cell(
            format!("rho:{r}"),
            &|c| RunConfig { lambda: bl, beta: bb, rho: r, ..c.clone() },
            &mut sweep,
        )?;
    }
    Ok(sweep)
}
