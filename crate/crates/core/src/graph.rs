//! Global news–news graph from shared users, its learned edge-retention
//! refinement, and the one-hot positional encoder.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numcore::ops::{linear, linear_backward_params, relu, relu_backward, softmax_rows};
use crate::numcore::{Matrix, Param, Parameterized, Rng};

const SYMMETRY_TOL: f64 = 1e-9;

/// `N x |U|` interaction counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EngagementMatrix(pub Matrix);

pub fn build_engagement_matrix(ds: &Dataset) -> Result<EngagementMatrix> {
    let mut e = Matrix::zeros(ds.len(), ds.n_users());
    for (i, s) in ds.samples.iter().enumerate() {
        for (u, count) in &s.engagements {
            let j = *ds.user_index.get(u).ok_or_else(|| {
                Error::Validation(format!("user `{u}` of sample `{}` missing from user index", s.id))
            })?;
            e[(i, j)] += *count as f64;
        }
    }
    Ok(EngagementMatrix(e))
}

/// `A = E·Eᵀ`; entry `(i, j)` counts shared-user interaction mass.
pub fn build_global_graph(e: &EngagementMatrix) -> Matrix {
    e.0.matmul_t(&e.0).expect("E·Eᵀ is always well-shaped")
}

/// Weighted degree with the diagonal excluded.
pub fn node_degrees(a: &Matrix) -> Result<Vec<f64>> {
    if a.rows() != a.cols() {
        return Err(Error::dim("node_degrees", a.shape(), a.shape()));
    }
    let n = a.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::Validation(format!(
                    "adjacency not symmetric at ({i}, {j}): {} vs {}",
                    a[(i, j)],
                    a[(j, i)]
                )));
            }
        }
    }
    Ok((0..n)
        .map(|i| a.row(i).iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum())
        .collect())
}

/// Learnable per-news vectors: row `i` of the encoding is `w[i] + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoder {
    pub w: Param,
    pub b: Param,
}

impl PositionalEncoder {
    pub fn new(n: usize, dim: usize, rng: &mut Rng) -> Self {
        PositionalEncoder {
            w: Param::glorot("pe.w", n, dim, rng),
            b: Param::zeros("pe.b", 1, dim),
        }
    }

    pub fn len(&self) -> usize {
        self.w.value.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn positional_encoding(pe: &PositionalEncoder, indices: &[usize]) -> Result<Matrix> {
    let n = pe.len();
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(Error::Parameter(format!("positional index {bad} outside {n} news")));
    }
    let mut x = pe.w.value.select_rows(indices);
    x.add_row_broadcast(&pe.b.value)?;
    Ok(x)
}

/// Scatters `upstream` back onto the touched rows of `w` and onto `b`.
pub fn positional_encoding_backward(pe: &mut PositionalEncoder, indices: &[usize], upstream: &Matrix) {
    for (r, &i) in indices.iter().enumerate() {
        for (g, &u) in pe.w.grad.row_mut(i).iter_mut().zip(upstream.row(r)) {
            *g += u;
        }
    }
    pe.b.grad.add_assign(&upstream.col_sums()).expect("bias shape");
}

/// Keep/drop classifier over edge descriptors `[ln(1+a_ij), ln(1+d_i), ln(1+d_j)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRefiner {
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
}

pub const EDGE_FEATURES: usize = 3;

impl EdgeRefiner {
    pub fn new(hidden: usize, rng: &mut Rng) -> Self {
        EdgeRefiner {
            w1: Param::glorot("refiner.w1", EDGE_FEATURES, hidden, rng),
            b1: Param::zeros("refiner.b1", 1, hidden),
            w2: Param::glorot("refiner.w2", hidden, 2, rng),
            b2: Param::zeros("refiner.b2", 1, 2),
        }
    }
}

impl Parameterized for EdgeRefiner {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// The nonzero off-diagonal entries of `A` with their refiner inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    pub n: usize,
    /// Ordered pairs `(i, j)`, `i ≠ j`, row-major.
    pub pairs: Vec<(usize, usize)>,
    pub features: Matrix,
}

impl EdgeSet {
    pub fn from_graph(a: &Matrix, degrees: &[f64]) -> Self {
        let n = a.rows();
        let mut pairs = Vec::new();
        let mut feats = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let v = a[(i, j)];
                if i != j && v != 0.0 {
                    pairs.push((i, j));
                    feats.extend_from_slice(&[v.ln_1p(), degrees[i].ln_1p(), degrees[j].ln_1p()]);
                }
            }
        }
        let features = Matrix::from_vec(pairs.len(), EDGE_FEATURES, feats).expect("edge features");
        EdgeSet { n, pairs, features }
    }
}

#[derive(Debug, Clone)]
pub struct RetentionCache {
    pre: Matrix,
    hidden: Matrix,
    keep: Vec<f64>,
}

impl RetentionCache {
    pub fn min_abs_preactivation(&self) -> f64 {
        crate::numcore::ops::min_abs(&self.pre)
    }
}

/// Symmetric retention weights `M`; `m_ij` is the averaged keep-probability of
/// both orientations, zero off the support of `A` and on the diagonal.
pub fn edge_retention_forward(edges: &EdgeSet, refiner: &EdgeRefiner) -> Result<(Matrix, RetentionCache)> {
    let n = edges.n;
    let pre = linear(&edges.features, &refiner.w1, &refiner.b1)?;
    let hidden = relu(&pre);
    let logits = linear(&hidden, &refiner.w2, &refiner.b2)?;
    let probs = softmax_rows(&logits, 1.0)?;
    let keep: Vec<f64> = (0..probs.rows()).map(|e| probs[(e, 0)]).collect();

    let mut raw = Matrix::zeros(n, n);
    for (&(i, j), &k) in edges.pairs.iter().zip(&keep) {
        raw[(i, j)] = k;
    }
    let mut m = Matrix::zeros(n, n);
    for &(i, j) in &edges.pairs {
        m[(i, j)] = 0.5 * (raw[(i, j)] + raw[(j, i)]);
    }
    Ok((m, RetentionCache { pre, hidden, keep }))
}

/// Convenience wrapper returning only `M`.
pub fn edge_retention(a: &Matrix, degrees: &[f64], refiner: &EdgeRefiner) -> Result<Matrix> {
    Ok(edge_retention_forward(&EdgeSet::from_graph(a, degrees), refiner)?.0)
}

/// Accumulates refiner gradients given `∂L/∂M`.
pub fn edge_retention_backward(
    edges: &EdgeSet,
    refiner: &mut EdgeRefiner,
    cache: &RetentionCache,
    grad_m: &Matrix,
) -> Result<()> {
    // m_ij = (k_ij + k_ji)/2, so each orientation receives (g_ij + g_ji)/2.
    // keep = softmax(z)[0] → ∂keep/∂z = (p0·p1, −p0·p1).
    let mut grad_logits = Matrix::zeros(edges.pairs.len(), 2);
    for (e, &(i, j)) in edges.pairs.iter().enumerate() {
        let g_keep = 0.5 * (grad_m[(i, j)] + grad_m[(j, i)]);
        let p0 = cache.keep[e];
        let s = p0 * (1.0 - p0);
        grad_logits[(e, 0)] = g_keep * s;
        grad_logits[(e, 1)] = -g_keep * s;
    }
    linear_backward_params(&cache.hidden, &mut refiner.w2, &mut refiner.b2, &grad_logits)?;
    let grad_hidden = grad_logits.matmul_t(&refiner.w2.value)?;
    let grad_pre = relu_backward(&cache.pre, &grad_hidden);
    linear_backward_params(&edges.features, &mut refiner.w1, &mut refiner.b1, &grad_pre)?;
    Ok(())
}

/// `Â = A∘M + I`.
pub fn refine(a: &Matrix, m: &Matrix) -> Result<Matrix> {
    let mut out = a.hadamard(m)?;
    for i in 0..out.rows().min(out.cols()) {
        out[(i, i)] += 1.0;
    }
    Ok(out)
}

/// `D^(−1/2)·Â·D^(−1/2)` with `D` the row sums of `Â`. Also returns the row sums.
pub fn gcn_normalize(a_hat: &Matrix) -> (Matrix, Vec<f64>) {
    let sums = a_hat.row_sums();
    assert!(
        sums.iter().all(|&s| s > 0.0),
        "gcn_normalize needs positive row sums"
    );
    let mut out = a_hat.clone();
    for i in 0..out.rows() {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v /= (sums[i] * sums[j]).sqrt();
        }
    }
    (out, sums)
}

/// Gradient of [`gcn_normalize`] with respect to `Â`, treating every entry
/// (including the ones feeding the row sums) as independent.
pub fn gcn_normalize_backward(normalized: &Matrix, sums: &[f64], upstream: &Matrix) -> Matrix {
    let n = normalized.rows();
    let inv: Vec<f64> = sums.iter().map(|s| 1.0 / s.sqrt()).collect();
    let mut grad_sum = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let t = upstream[(i, j)] * normalized[(i, j)];
            grad_sum[i] += t;
            grad_sum[j] += t;
        }
    }
    for (g, s) in grad_sum.iter_mut().zip(sums) {
        *g *= -0.5 / s;
    }
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = upstream[(i, j)] * inv[i] * inv[j] + grad_sum[i];
        }
    }
    out
}

/// Row-stochastic version of `a`; all-zero rows become the identity row.
pub fn row_normalize(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for i in 0..out.rows() {
        let s: f64 = out.row(i).iter().sum();
        if s != 0.0 {
            out.row_mut(i).iter_mut().for_each(|v| *v /= s);
        } else if i < out.cols() {
            out[(i, i)] = 1.0;
        }
    }
    out
}

/// Snapshot of the refined global graph for one refiner state.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalGraph {
    pub a_news: Matrix,
    pub degrees: Vec<f64>,
    pub m: Matrix,
    pub a_refined: Matrix,
    pub a_norm: Matrix,
}

impl GlobalGraph {
    pub fn build(a_news: Matrix, refiner: &EdgeRefiner) -> Result<Self> {
        let degrees = node_degrees(&a_news)?;
        let edges = EdgeSet::from_graph(&a_news, &degrees);
        let (m, _) = edge_retention_forward(&edges, refiner)?;
        let a_refined = refine(&a_news, &m)?;
        let (a_norm, _) = gcn_normalize(&a_refined);
        Ok(GlobalGraph {
            a_news,
            degrees,
            m,
            a_refined,
            a_norm,
        })
    }
}

pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, matrix_to_csv(m)).map_err(|e| Error::io(path, e))
}
