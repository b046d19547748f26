//! Acceptance suite. Prints one PASS/FAIL line per criterion, then checks
//! that every criterion outside `KNOWN_RED` passed and that the synthetic
//! benchmark still reproduces its recorded per-seed numbers.

use std::process::ExitCode;
use std::time::Instant;

use propkd::bench::{ablation_configs, ablation_suite, mean, metrics_csv, robustness_sweep, MetricRow, FULL};
use propkd::checks::{pipeline_grad_check, toy6};
use propkd::config::RunConfig;
use propkd::data::{load_dataset, save_dataset, split_indices, Dataset};
use propkd::distill::{mkd_total, sup_loss, tar_loss, MkdInputs};
use propkd::graph::{build_engagement_matrix, build_global_graph, edge_retention, node_degrees, refine, EdgeRefiner, EngagementMatrix};
use propkd::metrics::{accuracy, macro_f1};
use propkd::noise::{apply_noise, masked_count, NoiseKind, NoiseScope, NoiseSpec};
use propkd::numcore::ops::{cross_entropy, kl_rows};
use propkd::numcore::{Matrix, Rng};
use propkd::pipeline::{prepare, run_pipeline, run_student, train_teachers, Checkpoint};
use propkd::synth::{generate_synthetic, SynthParams};

/// Criteria expected to print FAIL; the reasons are in the README.
const KNOWN_RED: &[&str] = &["AC5", "AC6"];

/// Test macro-F1 per seed (full, no-teacher) from the first benchmark run.
const BENCH_BASELINE: [(&str, &str); 5] = [
    ("1.000000", "0.322034"),
    ("0.310345", "0.310345"),
    ("0.269777", "0.474672"),
    ("0.298246", "0.333333"),
    ("0.333333", "0.333333"),
];

struct Report {
    lines: Vec<(String, bool)>,
    regressions: Vec<String>,
}

impl Report {
    fn record(&mut self, id: &str, pass: bool, detail: String) {
        println!("{id} {} {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((id.to_string(), pass));
    }
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform(-scale, scale)).collect()).unwrap()
}

fn benchmark_data() -> Dataset {
    generate_synthetic(&SynthParams {
        n_news: 200,
        n_users: 500,
        q_in: 0.05,
        q_out: 0.005,
        feature_dim: 16,
        feature_noise_std: 1.0,
        seed: 0,
        ..Default::default()
    })
    .unwrap()
}

fn benchmark_config() -> RunConfig {
    RunConfig {
        noise_kind: NoiseKind::Mixed,
        noise_ratio: 0.5,
        noise_scope: NoiseScope::All,
        ..Default::default()
    }
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn ac1(r: &mut Report) {
    let start = Instant::now();
    let checks = pipeline_grad_check(&toy6(), &RunConfig::default(), 1e-5).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = checks.iter().map(|c| c.report.max_rel_err).fold(0.0, f64::max);
    let coords: usize = checks.iter().map(|c| c.report.coords_checked).sum();
    r.record(
        "AC1",
        worst <= 1e-4 && secs <= 5.0,
        format!("max rel-err {worst:.3e} over {coords} coordinates of 3 models in {secs:.2}s"),
    );
}

fn ac2(r: &mut Report) {
    let ds = generate_synthetic(&SynthParams { n_news: 40, n_users: 60, seed: 8, ..Default::default() }).unwrap();
    let cfg = RunConfig { hidden_dim: 16, pe_dim: 16, max_epochs: 30, lambda: 0.5, beta: 0.5, rho: 2.0, ..Default::default() };
    let p = prepare(&ds, &cfg).unwrap();
    let teachers = train_teachers(&p, &cfg, true).unwrap();
    let signals = teachers.signals(&p, &cfg).unwrap();
    let student = run_student(&p, &teachers, &cfg).unwrap().student;
    let out = student.forward(&p.student_inputs).unwrap().0;
    let mask = &p.split.train;
    let b = mkd_total(
        &MkdInputs {
            student_logits: &out.logits,
            student_hidden: &out.h_s,
            labels: &p.labels,
            mask,
            content: signals.content.as_ref(),
            propagation: signals.propagation.as_ref(),
        },
        &cfg.mkd(),
    )
    .unwrap();
    let (ct, pt) = (signals.content.unwrap(), signals.propagation.unwrap());
    let zs = out.logits.select_rows(mask);
    let hs = out.h_s.select_rows(mask);
    let recomputed = cross_entropy(&out.logits, &p.labels, mask).unwrap().0
        + 0.5 * sup_loss(&zs, &pt.logits.select_rows(mask), 2.0).unwrap()
        + 0.5 * tar_loss(&hs, &pt.hidden.select_rows(mask)).unwrap()
        + 0.5 * sup_loss(&zs, &ct.logits.select_rows(mask), 2.0).unwrap()
        + 0.5 * tar_loss(&hs, &ct.hidden.select_rows(mask)).unwrap();
    let diff = (b.total - recomputed).abs();

    let one = RunConfig { lambda: 1.0, beta: 1.0, ..cfg.clone() };
    let no_ct = RunConfig { use_ct: false, ..one.clone() };
    let a = run_student(&p, &teachers, &one).unwrap();
    let c = run_student(&p, &teachers, &no_ct).unwrap();
    let totals = |h: &propkd::distill::StudentHistory| h.epochs.iter().map(|e| e.loss.total.to_bits()).collect::<Vec<_>>();
    let same = totals(&a.history) == totals(&c.history) && a.student == c.student;
    r.record(
        "AC2",
        diff <= 1e-12 && same,
        format!(
            "|total − recomputed| = {diff:.1e}; λ=β=1 vs content teacher off: {} epochs, trajectories {}",
            a.history.epochs.len(),
            if same { "bitwise identical" } else { "differ" }
        ),
    );
}

fn ac3(r: &mut Report) {
    let mut rng = Rng::new(33);
    let mut worst_sup = 0.0f64;
    for rho in [1.0, 2.0, 5.0, 7.0, 10.0] {
        let z = random_matrix(6, 2, 4.0, &mut rng);
        worst_sup = worst_sup.max(sup_loss(&z, &z, rho).unwrap().abs());
    }
    let mut worst_tar = 0.0f64;
    for n in [2usize, 4, 8] {
        let h = Matrix::filled(n, 5, 0.3);
        worst_tar = worst_tar.max((tar_loss(&h, &h).unwrap() - (n as f64).ln()).abs());
    }
    let kl = kl_rows(&Matrix::row_vector(&[1.0, 0.0]), &Matrix::row_vector(&[0.5, 0.5])).unwrap();
    let kl_err = (kl - 2f64.ln()).abs();
    r.record(
        "AC3",
        worst_sup == 0.0 && worst_tar <= 1e-9 && kl_err <= 1e-9,
        format!("sup(z,z) max {worst_sup:e}; |tar − ln N| max {worst_tar:.1e}; |KL − ln 2| {kl_err:.1e}"),
    );
}

fn ac4(r: &mut Report) {
    let mut rng = Rng::new(44);
    let refiner = EdgeRefiner::new(16, &mut Rng::new(45));
    let mut failures = Vec::new();
    let mut min_quad = f64::INFINITY;
    for trial in 0..20 {
        let (n, u) = (rng.range_inclusive(2, 30), rng.range_inclusive(1, 40));
        let data = (0..n * u)
            .map(|_| if rng.bernoulli(0.2) { rng.range_inclusive(1, 5) as f64 } else { 0.0 })
            .collect();
        let e = EngagementMatrix(Matrix::from_vec(n, u, data).unwrap());
        let a = build_global_graph(&e);
        if a != a.transpose() {
            failures.push(format!("#{trial} asymmetric"));
        }
        for _ in 0..30 {
            let x = random_matrix(n, 1, 1.0, &mut rng);
            let quad = x.t_matmul(&a.matmul(&x).unwrap()).unwrap()[(0, 0)];
            let scale = a.max_abs().max(1.0) * n as f64;
            min_quad = min_quad.min(quad / scale);
            if quad < -1e-9 * scale {
                failures.push(format!("#{trial} xᵀAx = {quad}"));
            }
        }
        let d = node_degrees(&a).unwrap();
        let m = edge_retention(&a, &d, &refiner).unwrap();
        let a_hat = refine(&a, &m).unwrap();
        for i in 0..n {
            for j in 0..n {
                let (mv, av) = (m[(i, j)], a[(i, j)]);
                let on_support = i != j && av != 0.0;
                if !(0.0..=1.0).contains(&mv) || (mv > 0.0) != on_support {
                    failures.push(format!("#{trial} M[{i},{j}] = {mv} with A = {av}"));
                }
            }
            if a_hat[(i, i)] != a[(i, i)] * m[(i, i)] + 1.0 || a_hat[(i, i)] < 1.0 {
                failures.push(format!("#{trial} Â[{i},{i}] = {}", a_hat[(i, i)]));
            }
        }
    }
    let ds = generate_synthetic(&SynthParams { q_out: 0.0, seed: 4, ..Default::default() }).unwrap();
    let a = build_global_graph(&build_engagement_matrix(&ds).unwrap());
    let labels = ds.labels();
    let mut cross = 0usize;
    for i in 0..ds.len() {
        for j in 0..ds.len() {
            if labels[i] != labels[j] && a[(i, j)] != 0.0 {
                cross += 1;
            }
        }
    }
    if cross > 0 {
        failures.push(format!("{cross} cross-class entries with q_out = 0"));
    }
    r.record(
        "AC4",
        failures.is_empty(),
        if failures.is_empty() {
            format!("20 graphs symmetric, min scaled xᵀAx {min_quad:.2e}, M supported on A's off-diagonal, diag Â ≥ 1; q_out=0 block-diagonal")
        } else {
            failures.join("; ")
        },
    );
}

/// Per-seed (full, no-teacher) test rows on the benchmark dataset.
fn ac5(r: &mut Report, ds: &Dataset) {
    let start = Instant::now();
    let mut pairs = Vec::new();
    for &seed in &SEEDS {
        let cfg = RunConfig { seed, ..benchmark_config() };
        let p = prepare(ds, &cfg).unwrap();
        let teachers = train_teachers(&p, &cfg, false).unwrap();
        let full = run_student(&p, &teachers, &cfg).unwrap();
        let base = run_student(&p, &teachers, &RunConfig { use_ct: false, use_pt: false, ..cfg.clone() }).unwrap();
        pairs.push((full.test_macro_f1, base.test_macro_f1));
    }
    let secs = start.elapsed().as_secs_f64();
    let wins = pairs.iter().filter(|(f, b)| f > b).count();
    let (mf, mb) = (mean(pairs.iter().map(|p| p.0)), mean(pairs.iter().map(|p| p.1)));
    r.record(
        "AC5",
        mf > mb && wins >= 4 && secs <= 300.0,
        format!("mean test macro-F1 full {mf:.4} vs no-teacher {mb:.4}; full wins {wins}/5 seeds; {secs:.1}s"),
    );
    for (seed, ((f, b), (ef, eb))) in pairs.iter().zip(BENCH_BASELINE).enumerate() {
        let (f, b) = (format!("{f:.6}"), format!("{b:.6}"));
        if f != ef || b != eb {
            r.regressions.push(format!("benchmark seed {seed}: got ({f}, {b}), recorded ({ef}, {eb})"));
        }
    }
}

fn ac6(r: &mut Report, ds: &Dataset) {
    let rows = ablation_suite(ds, &benchmark_config(), &SEEDS).unwrap();
    let labels: Vec<&str> = ablation_configs(&RunConfig::default()).iter().map(|(l, _)| *l).collect();
    let count_ok = rows.len() == 6 * SEEDS.len()
        && rows.chunks(6).all(|c| c.iter().map(|r| r.run_id.as_str()).eq(labels.iter().copied()));
    let by = |label: &str| -> Vec<f64> { rows.iter().filter(|r| r.run_id == label).map(|r| r.macro_f1).collect() };
    let full = by(FULL);
    let mut detail = vec![format!("{} rows; full mean {:.4}", rows.len(), mean(full.iter().copied()))];
    let mut all_ok = count_ok;
    for label in &labels[1..] {
        let ab = by(label);
        let at_least = full.iter().zip(&ab).filter(|(f, a)| f >= a).count();
        all_ok &= at_least >= 3;
        detail.push(format!("{label} mean {:.4} (full ≥ in {at_least}/5)", mean(ab.iter().copied())));
    }
    r.record("AC6", all_ok, detail.join("; "));
}

fn ac7(r: &mut Report, bench: &Dataset) {
    let ds = generate_synthetic(&SynthParams { n_news: 30, n_users: 40, seed: 7, ..Default::default() }).unwrap();
    let cfg = RunConfig { hidden_dim: 8, pe_dim: 8, refiner_hidden: 4, max_epochs: 5, ..Default::default() };
    let ratios = [0.0, 0.1, 0.3, 0.5, 0.9];
    let rows = robustness_sweep(&ds, &cfg, &ratios, &NoiseKind::ALL, &SEEDS).unwrap();

    let mut zero_ok = true;
    for &seed in &SEEDS {
        let clean = run_pipeline(&ds, &RunConfig { seed, ..cfg.clone() }).unwrap().student;
        for row in rows.iter().filter(|x| x.seed == seed && x.noise_ratio == 0.0) {
            zero_ok &= row.macro_f1.to_bits() == clean.test_macro_f1.to_bits()
                && row.accuracy.to_bits() == clean.test_accuracy.to_bits();
        }
    }

    let mut count_ok = true;
    let split = split_indices(bench.len(), 0).unwrap();
    for ratio in ratios {
        let spec = NoiseSpec { kind: NoiseKind::Mixed, ratio, scope: NoiseScope::All, seed: 3 };
        let noisy = apply_noise(bench, &spec, &split).unwrap();
        for (a, b) in bench.samples.iter().zip(&noisy.samples) {
            let zeroed = b.node_features.iter().filter(|f| f.iter().all(|&v| v == 0.0)).count();
            let was_zero = a.node_features.iter().filter(|f| f.iter().all(|&v| v == 0.0)).count();
            count_ok &= zeroed - was_zero == masked_count(ratio, a.n_nodes());
            count_ok &= a.edges.len() - b.edges.len() == masked_count(ratio, a.edges.len());
        }
    }
    r.record(
        "AC7",
        zero_ok && count_ok && rows.len() == 75,
        format!(
            "ratio 0 reproduces clean metrics bitwise: {zero_ok}; masked counts exact: {count_ok}; {} rows",
            rows.len()
        ),
    );
}

fn ac8(r: &mut Report) {
    let ds = generate_synthetic(&SynthParams { n_news: 40, n_users: 60, seed: 9, ..Default::default() }).unwrap();
    let cfg = RunConfig { hidden_dim: 16, pe_dim: 16, max_epochs: 25, seed: 2, ..Default::default() };
    let artifacts = || {
        let run = run_pipeline(&ds, &cfg).unwrap();
        let csv = metrics_csv(&[MetricRow::from_run("train", &cfg, &run.student)]);
        let ckpt = serde_json::to_string(&Checkpoint::capture(&run.student.student, "student", &run.student.config_hash)).unwrap();
        (csv, ckpt)
    };
    let same_run = artifacts() == artifacts();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    save_dataset(&ds, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    let bits = |d: &Dataset| -> Vec<u64> {
        d.samples.iter().flat_map(|s| s.node_features.iter().flatten().chain(&s.news_feature)).map(|v| v.to_bits()).collect()
    };
    let round_trip = back == ds && bits(&back) == bits(&ds);
    let s = split_indices(314, 0).unwrap();
    let sizes = (s.train.len(), s.val.len(), s.test.len());
    r.record(
        "AC8",
        same_run && round_trip && sizes == (219, 31, 64),
        format!("repeat run byte-identical: {same_run}; dataset round trip bit-exact: {round_trip}; split(314) = {sizes:?}"),
    );
}

fn ac9(r: &mut Report) {
    let (preds, labels) = ([1, 0, 1, 1], [1, 0, 0, 1]);
    let acc = format!("{:.6}", accuracy(&preds, &labels).unwrap());
    let f1 = format!("{:.6}", macro_f1(&preds, &labels).unwrap());
    r.record("AC9", acc == "0.750000" && f1 == "0.733333", format!("accuracy {acc}, macro-F1 {f1}"));
}

fn main() -> ExitCode {
    let mut r = Report { lines: Vec::new(), regressions: Vec::new() };
    let bench = benchmark_data();
    ac1(&mut r);
    ac2(&mut r);
    ac3(&mut r);
    ac4(&mut r);
    ac5(&mut r, &bench);
    ac6(&mut r, &bench);
    ac7(&mut r, &bench);
    ac8(&mut r);
    ac9(&mut r);

    let passed = r.lines.iter().filter(|(_, p)| *p).count();
    println!("{passed}/{} criteria pass", r.lines.len());
    let unexpected: Vec<&str> = r
        .lines
        .iter()
        .filter(|(id, p)| !*p && !KNOWN_RED.contains(&id.as_str()))
        .map(|(id, _)| id.as_str())
        .collect();
    for reg in &r.regressions {
        println!("regression: {reg}");
    }
    if unexpected.is_empty() && r.regressions.is_empty() {
        ExitCode::SUCCESS
    } else {
        if !unexpected.is_empty() {
            println!("unexpected failures: {}", unexpected.join(", "));
        }
        ExitCode::FAILURE
    }
}
