//! `propkd`: generate data, train, evaluate and sweep from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use propkd::bench::{ablation_suite, mean, param_sweep, robustness_sweep, write_metrics_csv, MetricRow, FULL};
use propkd::checks::{pipeline_grad_check, toy6};
use propkd::config::RunConfig;
use propkd::data::{load_dataset, save_dataset, validate_dataset, Dataset};
use propkd::noise::{NoiseKind, NoiseScope};
use propkd::pipeline::{evaluate_checkpoint, run_pipeline, Checkpoint};
use propkd::student::Pooling;
use propkd::synth::{generate_synthetic, SynthParams};

mod exit {
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const IO: u8 = 4;
    pub const DATA: u8 = 5;
    pub const NUMERIC: u8 = 6;
    pub const DIVERGED: u8 = 7;
    pub const GRAD_CHECK: u8 = 8;
    pub const MISMATCH: u8 = 9;
}

#[derive(Parser)]
#[command(name = "propkd", version, about = "Dual-teacher distillation for fake-news detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Gen(GenArgs),
    /// Check a dataset file against the schema rules.
    Validate { path: PathBuf },
    /// Train teachers and student once; write checkpoints and metrics.
    Train(RunArgs),
    /// Recompute test metrics from a run directory.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// Dataset to use instead of the one recorded in the run config.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Metrics over noise kinds, ratios and seeds.
    NoiseSweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.3,0.5,0.9")]
        ratios: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "semantic,structural,mixed")]
        kinds: Vec<NoiseKind>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
    },
    /// The full model and its five ablations.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
    },
    /// (λ, β) grid, then a ρ sweep at the best pair.
    ParamSweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        betas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,7,10")]
        rhos: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
    /// Finite-difference check of every model (bundled fixture by default).
    GradCheck {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 200)]
    news: usize,
    #[arg(long, default_value_t = 500)]
    users: usize,
    #[arg(long, default_value_t = 0.05)]
    q_in: f64,
    #[arg(long, default_value_t = 0.005)]
    q_out: f64,
    #[arg(long, default_value_t = 4)]
    tree_min: usize,
    #[arg(long, default_value_t = 16)]
    tree_max: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Config file plus per-key overrides. Precedence: flags, then `PSS_SEED`,
/// then the file, then defaults.
#[derive(Args, Default)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    pe_dim: Option<usize>,
    #[arg(long)]
    refiner_hidden: Option<usize>,
    #[arg(long)]
    lr_ct: Option<f64>,
    #[arg(long)]
    lr_pt: Option<f64>,
    #[arg(long)]
    lr_student: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    final_relu: Option<bool>,
    #[arg(long)]
    kd_reverse_kl: Option<bool>,
    #[arg(long)]
    pooling: Option<Pooling>,
    #[arg(long)]
    use_ct: Option<bool>,
    #[arg(long)]
    use_pt: Option<bool>,
    #[arg(long)]
    use_sup: Option<bool>,
    #[arg(long)]
    use_tar: Option<bool>,
    #[arg(long)]
    use_lgpi: Option<bool>,
    #[arg(long)]
    noise_kind: Option<NoiseKind>,
    #[arg(long)]
    noise_ratio: Option<f64>,
    #[arg(long)]
    noise_scope: Option<NoiseScope>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

macro_rules! override_fields {
    ($cfg:ident, $args:ident; $($field:ident),* $(,)?) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$field = v; })*
    };
}

impl RunArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.apply_env()?;
        let args = self;
        override_fields!(cfg, args;
            seed, hidden_dim, pe_dim, refiner_hidden, lr_ct, lr_pt, lr_student, lambda, beta, rho,
            final_relu, kd_reverse_kl, pooling, use_ct, use_pt, use_sup, use_tar, use_lgpi,
            noise_kind, noise_ratio, noise_scope, max_epochs, patience);
        if self.data.is_some() {
            cfg.data = self.data.clone();
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_dir(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = cfg.out.clone().ok_or_else(|| propkd::Error::Config("missing output directory (--out)".into()))?;
    fs::create_dir_all(&dir).map_err(|e| propkd::Error::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).map_err(|e| propkd::Error::io(path, e))?;
    Ok(())
}

fn write_config(dir: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    write(&dir.join("config.json"), &(serde_json::to_string_pretty(cfg)? + "\n"))
}

fn load_data(cfg: &RunConfig) -> anyhow::Result<Dataset> {
    let path = cfg.data_path()?;
    let ds = load_dataset(path)?;
    if let Some(v) = validate_dataset(&ds).first() {
        return Err(propkd::Error::Validation(format!("{}: {v}", path.display())).into());
    }
    Ok(ds)
}

fn summarize(rows: &[MetricRow], group: impl Fn(&MetricRow) -> String) {
    let mut keys: Vec<String> = Vec::new();
    for r in rows {
        let k = group(r);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for k in keys {
        let sel: Vec<&MetricRow> = rows.iter().filter(|r| group(r) == k).collect();
        println!(
            "{k:<28} n={} accuracy={:.6} macro_f1={:.6}",
            sel.len(),
            mean(sel.iter().map(|r| r.accuracy)),
            mean(sel.iter().map(|r| r.macro_f1))
        );
    }
}

fn cmd_gen(a: &GenArgs) -> anyhow::Result<()> {
    let params = SynthParams {
        n_news: a.news,
        n_users: a.users,
        q_in: a.q_in,
        q_out: a.q_out,
        tree_size_min: a.tree_min,
        tree_size_max: a.tree_max,
        feature_dim: a.dim,
        feature_noise_std: a.sigma,
        seed: a.seed,
    };
    let ds = generate_synthetic(&params)?;
    save_dataset(&ds, &a.out)?;
    println!("wrote {} news, {} users to {}", ds.len(), ds.n_users(), a.out.display());
    Ok(())
}

fn cmd_validate(path: &Path) -> anyhow::Result<()> {
    let ds = load_dataset(path)?;
    let violations = validate_dataset(&ds);
    if violations.is_empty() {
        println!("{}: {} news, {} users, ok", path.display(), ds.len(), ds.n_users());
        return Ok(());
    }
    for v in &violations {
        eprintln!("{v}");
    }
    Err(propkd::Error::Validation(format!("{} rule violations", violations.len())).into())
}

fn cmd_train(args: &RunArgs) -> anyhow::Result<()> {
    let cfg = args.resolve()?;
    let ds = load_data(&cfg)?;
    let dir = out_dir(&cfg)?;
    let run = run_pipeline(&ds, &cfg)?;
    let hash = &run.student.config_hash;

    write_config(&dir, &cfg)?;
    write(&dir.join("history.csv"), &run.student.history.to_csv())?;
    Checkpoint::capture(&run.student.student, "student", hash).save(dir.join("student.json"))?;
    if let Some((ct, _)) = &run.teachers.content {
        Checkpoint::capture(ct, "content_teacher", hash).save(dir.join("content_teacher.json"))?;
    }
    if let Some((pt, _)) = &run.teachers.propagation {
        Checkpoint::capture(pt, "propagation_teacher", hash).save(dir.join("propagation_teacher.json"))?;
    }
    let row = MetricRow::from_run("train", &cfg, &run.student);
    write_metrics_csv(std::slice::from_ref(&row), dir.join("metrics.csv"))?;
    println!(
        "config {hash}: best epoch {} of {}, test accuracy={:.6} macro_f1={:.6}",
        run.student.history.best_epoch,
        run.student.history.epochs.len(),
        row.accuracy,
        row.macro_f1
    );
    Ok(())
}

fn recorded_metrics(dir: &Path) -> anyhow::Result<Option<(String, String)>> {
    let path = dir.join("metrics.csv");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| propkd::Error::io(&path, e))?;
    let line = text.lines().nth(1).ok_or_else(|| anyhow!("{} has no data row", path.display()))?;
    let cols: Vec<&str> = line.split(',').collect();
    match cols.as_slice() {
        [.., acc, f1] => Ok(Some((acc.to_string(), f1.to_string()))),
        _ => bail!("malformed row in {}", path.display()),
    }
}

fn cmd_eval(run: &Path, data: Option<&PathBuf>) -> anyhow::Result<u8> {
    let mut cfg = RunConfig::load(run.join("config.json"))?;
    if let Some(d) = data {
        cfg.data = Some(d.clone());
    }
    let ds = load_data(&cfg)?;
    let ckpt = Checkpoint::load(run.join("student.json"))?;
    if ckpt.config_hash != cfg.config_hash() {
        return Err(propkd::Error::Validation(format!(
            "checkpoint was trained with config {}, run config hashes to {}",
            ckpt.config_hash,
            cfg.config_hash()
        ))
        .into());
    }
    let (acc, f1) = evaluate_checkpoint(&ds, &cfg, &ckpt)?;
    let (acc_s, f1_s) = (format!("{acc:.6}"), format!("{f1:.6}"));
    println!("test accuracy={acc_s} macro_f1={f1_s}");
    if let Some((rec_acc, rec_f1)) = recorded_metrics(run)? {
        if rec_acc != acc_s || rec_f1 != f1_s {
            eprintln!("recorded metrics differ: accuracy={rec_acc} macro_f1={rec_f1}");
            return Ok(exit::MISMATCH);
        }
        println!("matches recorded metrics");
    }
    Ok(0)
}

fn cmd_noise_sweep(args: &RunArgs, ratios: &[f64], kinds: &[NoiseKind], seeds: &[u64]) -> anyhow::Result<()> {
    let cfg = args.resolve()?;
    let ds = load_data(&cfg)?;
    let dir = out_dir(&cfg)?;
    let rows = robustness_sweep(&ds, &cfg, ratios, kinds, seeds)?;
    write_config(&dir, &cfg)?;
    write_metrics_csv(&rows, dir.join("metrics.csv"))?;
    summarize(&rows, |r| format!("{} {:.2}", r.noise_kind, r.noise_ratio));
    Ok(())
}

fn cmd_ablate(args: &RunArgs, seeds: &[u64]) -> anyhow::Result<()> {
    let cfg = args.resolve()?;
    let ds = load_data(&cfg)?;
    let dir = out_dir(&cfg)?;
    let rows = ablation_suite(&ds, &cfg, seeds)?;
    write_config(&dir, &cfg)?;
    write_metrics_csv(&rows, dir.join("metrics.csv"))?;
    summarize(&rows, |r| r.run_id.clone());
    let full: Vec<f64> = rows.iter().filter(|r| r.run_id == FULL).map(|r| r.macro_f1).collect();
    println!("full model mean macro_f1={:.6}", mean(full));
    Ok(())
}

fn cmd_param_sweep(args: &RunArgs, l: &[f64], b: &[f64], r: &[f64], seeds: &[u64]) -> anyhow::Result<()> {
    let cfg = args.resolve()?;
    let ds = load_data(&cfg)?;
    let dir = out_dir(&cfg)?;
    let sweep = param_sweep(&ds, &cfg, l, b, r, seeds)?;
    write_config(&dir, &cfg)?;
    write_metrics_csv(&sweep.rows, dir.join("metrics.csv"))?;
    println!(
        "{} rows; best by validation macro-F1: lambda={} beta={}",
        sweep.rows.len(),
        sweep.best_lambda,
        sweep.best_beta
    );
    summarize(&sweep.rows[sweep.rows.len() - r.len() * seeds.len()..], |row| row.run_id.clone());
    Ok(())
}

fn cmd_grad_check(args: &RunArgs, step: f64, tolerance: f64) -> anyhow::Result<u8> {
    let cfg = args.resolve()?;
    let ds = match &cfg.data {
        Some(_) => load_data(&cfg)?,
        None => toy6(),
    };
    let started = std::time::Instant::now();
    let checks = pipeline_grad_check(&ds, &cfg, step)?;
    let mut worst = 0.0f64;
    for c in &checks {
        let r = &c.report;
        println!(
            "{:<20} coords={:<6} max_rel_err={:.3e} worst={}[{}]",
            c.model, r.coords_checked, r.max_rel_err, r.worst_param, r.worst_coord
        );
        worst = worst.max(r.max_rel_err);
    }
    let params: usize = checks.iter().map(|c| c.report.coords_checked).sum();
    println!("checked {params} coordinates in {:.2?}; max rel-err {worst:.3e} (tolerance {tolerance:e})", started.elapsed());
    Ok(if worst <= tolerance { 0 } else { exit::GRAD_CHECK })
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use propkd::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::Config(_)) => exit::CONFIG,
        Some(E::Io { .. }) => exit::IO,
        Some(E::Parse { .. } | E::Validation(_)) => exit::DATA,
        Some(E::Dimension { .. } | E::Parameter(_)) => exit::NUMERIC,
        Some(E::NonFiniteGradient(_) | E::Divergence { .. }) => exit::DIVERGED,
        None if err.downcast_ref::<serde_json::Error>().is_some() => exit::DATA,
        None => exit::USAGE,
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a).map(|_| 0),
        Command::Validate { path } => cmd_validate(&path).map(|_| 0),
        Command::Train(a) => cmd_train(&a).map(|_| 0),
        Command::Eval { run, data } => cmd_eval(&run, data.as_ref()),
        Command::NoiseSweep { run, ratios, kinds, seeds } => cmd_noise_sweep(&run, &ratios, &kinds, &seeds).map(|_| 0),
        Command::Ablate { run, seeds } => cmd_ablate(&run, &seeds).map(|_| 0),
        Command::ParamSweep { run, lambdas, betas, rhos, seeds } => {
            cmd_param_sweep(&run, &lambdas, &betas, &rhos, &seeds).map(|_| 0)
        }
        Command::GradCheck { run, step, tolerance } => cmd_grad_check(&run, step, tolerance),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli).context("propkd failed") {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
