//! wasm-bindgen exports for `www/index.html`. Every export returns JSON
//! text, or an `{"error": ...}` object when the inputs are rejected.

use propkd::data::split_indices;
use propkd::distill::{mkd_total, MkdConfig, MkdInputs};
use propkd::graph::{build_engagement_matrix, build_global_graph, EdgeRefiner, GlobalGraph};
use propkd::noise::{apply_noise, NoiseKind, NoiseScope, NoiseSpec};
use propkd::numcore::{Matrix, Rng};
use propkd::synth::{generate_synthetic, SynthParams};
use propkd::teachers::TeacherOutput;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_json<T: Serialize>(r: propkd::Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).expect("plain data serializes"),
        Err(e) => serde_json::json!({ "error": e.to_string() }).to_string(),
    }
}

#[derive(Serialize)]
struct GraphView {
    n: usize,
    labels: Vec<usize>,
    a_news: Vec<f64>,
    retention: Vec<f64>,
    a_norm: Vec<f64>,
    edges: usize,
    cross_class_weight: f64,
}

fn graph_view(n_news: usize, q_in: f64, q_out: f64, seed: u64) -> propkd::Result<GraphView> {
    let ds = generate_synthetic(&SynthParams {
        n_news,
        n_users: (n_news * 3).max(4),
        q_in,
        q_out,
        tree_size_min: 2,
        tree_size_max: 6,
        feature_dim: 4,
        seed,
        ..Default::default()
    })?;
    let a = build_global_graph(&build_engagement_matrix(&ds)?);
    let g = GlobalGraph::build(a, &EdgeRefiner::new(16, &mut Rng::derive(seed, "demo/refiner")))?;
    let labels = ds.labels();
    let (mut total, mut cross, mut edges) = (0.0, 0.0, 0);
    for i in 0..g.a_news.rows() {
        for j in 0..g.a_news.cols() {
            let w = g.a_news[(i, j)];
            if i != j && w != 0.0 {
                edges += 1;
                total += w;
                if labels[i] != labels[j] {
                    cross += w;
                }
            }
        }
    }
    Ok(GraphView {
        n: ds.len(),
        labels,
        a_news: g.a_news.data().to_vec(),
        retention: g.m.data().to_vec(),
        a_norm: g.a_norm.data().to_vec(),
        edges: edges / 2,
        cross_class_weight: if total > 0.0 { cross / total } else { 0.0 },
    })
}

/// Synthetic news graph `A = E Eᵀ`, the retention mask of an untrained
/// refiner and the normalized propagation matrix, all row-major.
#[wasm_bindgen]
pub fn global_graph(n_news: usize, q_in: f64, q_out: f64, seed: u64) -> String {
    to_json(graph_view(n_news.clamp(2, 80), q_in, q_out, seed))
}

fn noisy_copy(target: &Matrix, agreement: f64, rng: &mut Rng) -> Matrix {
    let data = target.data().iter().map(|&v| agreement * v + (1.0 - agreement) * 2.0 * rng.normal()).collect();
    Matrix::from_vec(target.rows(), target.cols(), data).expect("same shape")
}

fn teacher(n: usize, dim: usize, labels: &[usize], rng: &mut Rng) -> TeacherOutput {
    let mut logits = Matrix::zeros(n, 2);
    for (i, &y) in labels.iter().enumerate() {
        logits[(i, y)] = 2.0 + rng.normal();
        logits[(i, 1 - y)] = rng.normal();
    }
    let hidden = Matrix::from_vec(n, dim, (0..n * dim).map(|_| rng.normal()).collect()).expect("shape");
    TeacherOutput { hidden, logits }
}

/// Loss breakdown for 32 random news when the student's outputs are a blend
/// of the propagation teacher's (weight `agreement`) and Gaussian noise.
#[wasm_bindgen]
pub fn loss_terms(lambda: f64, beta: f64, rho: f64, agreement: f64, seed: u64) -> String {
    let (n, dim) = (32, 8);
    let mut rng = Rng::derive(seed, "demo/loss");
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let pt = teacher(n, dim, &labels, &mut rng);
    let ct = teacher(n, dim, &labels, &mut rng);
    let logits = noisy_copy(&pt.logits, agreement, &mut rng);
    let hidden = noisy_copy(&pt.hidden, agreement, &mut rng);
    let mask: Vec<usize> = (0..n).collect();
    let cfg = MkdConfig { lambda, beta, rho, ..Default::default() };
    to_json(mkd_total(
        &MkdInputs {
            student_logits: &logits,
            student_hidden: &hidden,
            labels: &labels,
            mask: &mask,
            content: Some(&ct),
            propagation: Some(&pt),
        },
        &cfg,
    ))
}

#[derive(Serialize)]
struct TreeView {
    id: String,
    label: u8,
    nodes: usize,
    masked_nodes: Vec<usize>,
    kept_edges: Vec<(usize, usize)>,
    dropped_edges: Vec<(usize, usize)>,
}

fn noise_view(kind: &str, ratio: f64, seed: u64) -> propkd::Result<Vec<TreeView>> {
    let kind: NoiseKind = kind.parse()?;
    let ds = generate_synthetic(&SynthParams {
        n_news: 10,
        n_users: 20,
        tree_size_min: 5,
        tree_size_max: 12,
        feature_dim: 4,
        seed,
        ..Default::default()
    })?;
    let spec = NoiseSpec { kind, ratio, scope: NoiseScope::All, seed };
    let noisy = apply_noise(&ds, &spec, &split_indices(ds.len(), seed)?)?;
    Ok(ds
        .samples
        .iter()
        .zip(&noisy.samples)
        .map(|(a, b)| TreeView {
            id: a.id.clone(),
            label: a.label,
            nodes: a.n_nodes(),
            masked_nodes: (0..b.n_nodes())
                .filter(|&i| b.node_features[i].iter().all(|&v| v == 0.0) && a.node_features[i].iter().any(|&v| v != 0.0))
                .collect(),
            kept_edges: b.edges.clone(),
            dropped_edges: a.edges.iter().filter(|e| !b.edges.contains(e)).copied().collect(),
        })
        .collect())
}

/// Ten small propagation trees before and after noise injection.
#[wasm_bindgen]
pub fn noise_preview(kind: &str, ratio: f64, seed: u64) -> String {
    to_json(noise_view(kind, ratio, seed))
}
