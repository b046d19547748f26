//! Student network: one GCN layer per propagation tree, pooling to one row
//! per news, spreading over the row-normalized shared-user graph (LGPI), and
//! a two-class head.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NewsSample};
use crate::error::{Error, Result};
use crate::graph::{build_engagement_matrix, build_global_graph, row_normalize};
use crate::numcore::ops::{linear, linear_backward, linear_backward_params, min_abs, relu, relu_backward};
use crate::numcore::{Matrix, Param, Parameterized, Rng};
use crate::teachers::N_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Root,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "root" => Ok(Pooling::Root),
            other => Err(Error::Config(format!("unknown pooling `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StudentOptions {
    pub final_relu: bool,
    pub pooling: Pooling,
    /// When off, `h_s = H_loc·W₁ + b₁` (no spreading over the global graph).
    pub use_lgpi: bool,
}

impl Default for StudentOptions {
    fn default() -> Self {
        StudentOptions {
            final_relu: true,
            pooling: Pooling::Mean,
            use_lgpi: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    pub gcn_w: Param,
    pub gcn_b: Param,
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
    pub opts: StudentOptions,
}

impl StudentModel {
    pub fn new(input_dim: usize, hidden: usize, opts: StudentOptions, rng: &mut Rng) -> Self {
        StudentModel {
            gcn_w: Param::glorot("student.gcn.w", input_dim, hidden, rng),
            gcn_b: Param::zeros("student.gcn.b", 1, hidden),
            w1: Param::glorot("student.lgpi.w", hidden, hidden, rng),
            b1: Param::zeros("student.lgpi.b", 1, hidden),
            w2: Param::glorot("student.head.w", hidden, N_CLASSES, rng),
            b2: Param::zeros("student.head.b", 1, N_CLASSES),
            opts,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.value.rows()
    }
}

impl Parameterized for StudentModel {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gcn_w, &self.gcn_b, &self.w1, &self.b1, &self.w2, &self.b2]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.gcn_w,
            &mut self.gcn_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

/// `Ã·X` for one tree, where `Ã` is the symmetric-normalized undirected
/// adjacency with self-loops. Neighbours are visited in ascending index order.
pub fn propagate_tree(sample: &NewsSample) -> Result<Matrix> {
    let n = sample.n_nodes();
    if n == 0 {
        return Err(Error::Validation(format!("sample `{}` has no nodes", sample.id)));
    }
    let d = sample.node_features[0].len();
    let mut neighbours: Vec<Vec<usize>> = (0..n).map(|k| vec![k]).collect();
    for &(p, c) in &sample.edges {
        if p >= n || c >= n {
            return Err(Error::Validation(format!(
                "sample `{}` edge ({p}, {c}) outside {n} nodes",
                sample.id
            )));
        }
        neighbours[p].push(c);
        neighbours[c].push(p);
    }
    for list in &mut neighbours {
        list.sort_unstable();
        list.dedup();
    }
    let deg: Vec<f64> = neighbours.iter().map(|l| l.len() as f64).collect();
    let mut out = Matrix::zeros(n, d);
    for k in 0..n {
        let row = out.row_mut(k);
        for &l in &neighbours[k] {
            let w = 1.0 / (deg[k] * deg[l]).sqrt();
            for (o, &x) in row.iter_mut().zip(&sample.node_features[l]) {
                *o += w * x;
            }
        }
    }
    Ok(out)
}

/// Node embeddings `ReLU(Ã·X·W + b)` of one propagation tree.
pub fn local_gcn_forward(sm: &StudentModel, sample: &NewsSample) -> Result<Matrix> {
    let ax = propagate_tree(sample)?;
    Ok(relu(&linear(&ax, &sm.gcn_w, &sm.gcn_b)?))
}

/// Mean over node embeddings, summed in ascending node order.
pub fn pool_local(embeddings: &Matrix) -> Vec<f64> {
    let n = embeddings.rows();
    let mut out = vec![0.0; embeddings.cols()];
    for k in 0..n {
        for (o, &v) in out.iter_mut().zip(embeddings.row(k)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= n as f64);
    out
}

/// `h_s = (Â_row·H_loc)·W₁ + b₁` where `a_rownorm` is the row-normalized raw graph.
pub fn lgpi_forward(sm: &StudentModel, h_loc: &Matrix, a_rownorm: &Matrix) -> Result<Matrix> {
    if a_rownorm.cols() != h_loc.rows() {
        return Err(Error::dim("lgpi", a_rownorm.shape(), h_loc.shape()));
    }
    linear(&a_rownorm.matmul(h_loc)?, &sm.w1, &sm.b1)
}

/// `logits = ReLU(h_s·W₂ + b₂)`, or affine when `final_relu` is off.
pub fn student_head(sm: &StudentModel, h_s: &Matrix) -> Result<Matrix> {
    let pre = linear(h_s, &sm.w2, &sm.b2)?;
    Ok(if sm.opts.final_relu { relu(&pre) } else { pre })
}

/// Per-dataset constants of the student: propagated tree features stacked
/// over all samples and the row-normalized shared-user graph.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentInputs {
    pub propagated: Matrix,
    /// `offsets[i]..offsets[i+1]` are the rows of sample `i`.
    pub offsets: Vec<usize>,
    pub a_rownorm: Matrix,
}

impl StudentInputs {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let e = build_engagement_matrix(ds)?;
        StudentInputs::new(ds, &build_global_graph(&e))
    }

    /// `a_news` must be the raw (unrefined) shared-user graph.
    pub fn new(ds: &Dataset, a_news: &Matrix) -> Result<Self> {
        if a_news.rows() != ds.len() || a_news.cols() != ds.len() {
            return Err(Error::dim("student graph", a_news.shape(), (ds.len(), ds.len())));
        }
        let total: usize = ds.samples.iter().map(|s| s.n_nodes()).sum();
        let mut propagated = Matrix::zeros(total, ds.feature_dim);
        let mut offsets = Vec::with_capacity(ds.len() + 1);
        let mut row = 0;
        offsets.push(0);
        for s in &ds.samples {
            let ax = propagate_tree(s)?;
            if ax.cols() != ds.feature_dim {
                return Err(Error::dim("tree features", ax.shape(), (ax.rows(), ds.feature_dim)));
            }
            for k in 0..ax.rows() {
                propagated.row_mut(row).copy_from_slice(ax.row(k));
                row += 1;
            }
            offsets.push(row);
        }
        Ok(StudentInputs {
            propagated,
            offsets,
            a_rownorm: row_normalize(a_news),
        })
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentOutput {
    pub h_loc: Matrix,
    pub h_s: Matrix,
    pub logits: Matrix,
}

impl StudentOutput {
    pub fn predictions(&self) -> Vec<usize> {
        self.logits.argmax_rows()
    }
}

#[derive(Debug, Clone)]
pub struct StudentCache {
    node_pre: Matrix,
    node_emb: Matrix,
    spread: Matrix,
    h_s: Matrix,
    head_pre: Matrix,
}

impl StudentCache {
    pub fn min_abs_preactivation(&self, final_relu: bool) -> f64 {
        let m = min_abs(&self.node_pre);
        if final_relu {
            m.min(min_abs(&self.head_pre))
        } else {
            m
        }
    }
}

impl StudentModel {
    pub fn forward(&self, inputs: &StudentInputs) -> Result<(StudentOutput, StudentCache)> {
        let n = inputs.n();
        let node_pre = linear(&inputs.propagated, &self.gcn_w, &self.gcn_b)?;
        let node_emb = relu(&node_pre);

        let h = self.hidden_dim();
        let mut h_loc = Matrix::zeros(n, h);
        for i in 0..n {
            let (start, end) = (inputs.offsets[i], inputs.offsets[i + 1]);
            let pooled = match self.opts.pooling {
                Pooling::Mean => {
                    let mut acc = vec![0.0; h];
                    for k in start..end {
                        for (a, &v) in acc.iter_mut().zip(node_emb.row(k)) {
                            *a += v;
                        }
                    }
                    let count = (end - start) as f64;
                    acc.iter_mut().for_each(|v| *v /= count);
                    acc
                }
                Pooling::Root => node_emb.row(start).to_vec(),
            };
            h_loc.row_mut(i).copy_from_slice(&pooled);
        }

        let spread = if self.opts.use_lgpi {
            inputs.a_rownorm.matmul(&h_loc)?
        } else {
            h_loc.clone()
        };
        let h_s = linear(&spread, &self.w1, &self.b1)?;
        let head_pre = linear(&h_s, &self.w2, &self.b2)?;
        let logits = if self.opts.final_relu {
            relu(&head_pre)
        } else {
            head_pre.clone()
        };
        Ok((
            StudentOutput {
                h_loc,
                h_s: h_s.clone(),
                logits,
            },
            StudentCache {
                node_pre,
                node_emb,
                spread,
                h_s,
                head_pre,
            },
        ))
    }

    /// Accumulates parameter gradients from `∂L/∂logits` and `∂L/∂h_s`.
    pub fn backward(
        &mut self,
        inputs: &StudentInputs,
        cache: &StudentCache,
        grad_logits: &Matrix,
        grad_h_s: Option<&Matrix>,
    ) -> Result<()> {
        let g_head = if self.opts.final_relu {
            relu_backward(&cache.head_pre, grad_logits)
        } else {
            grad_logits.clone()
        };
        let mut g_hs = linear_backward(&cache.h_s, &mut self.w2, &mut self.b2, &g_head)?;
        if let Some(extra) = grad_h_s {
            g_hs.add_assign(extra)?;
        }
        let g_spread = linear_backward(&cache.spread, &mut self.w1, &mut self.b1, &g_hs)?;
        let g_hloc = if self.opts.use_lgpi {
            inputs.a_rownorm.t_matmul(&g_spread)?
        } else {
            g_spread
        };

        let mut g_emb = Matrix::zeros(cache.node_emb.rows(), cache.node_emb.cols());
        for i in 0..inputs.n() {
            let (start, end) = (inputs.offsets[i], inputs.offsets[i + 1]);
            match self.opts.pooling {
                Pooling::Mean => {
                    let scale = 1.0 / (end - start) as f64;
                    for k in start..end {
                        for (g, &u) in g_emb.row_mut(k).iter_mut().zip(g_hloc.row(i)) {
                            *g = u * scale;
                        }
                    }
                }
                Pooling::Root => g_emb.row_mut(start).copy_from_slice(g_hloc.row(i)),
            }
        }
        let g_pre = relu_backward(&cache.node_pre, &g_emb);
        linear_backward_params(&inputs.propagated, &mut self.gcn_w, &mut self.gcn_b, &g_pre)
    }
}

pub fn student_forward(sm: &StudentModel, inputs: &StudentInputs) -> Result<StudentOutput> {
    Ok(sm.forward(inputs)?.0)
}
