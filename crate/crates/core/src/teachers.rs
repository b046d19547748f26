//! Content teacher (MLP over root content) and propagation teacher (GCN over
//! the refined global graph with positional encodings), plus supervised
//! training with early stopping.

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::graph::{
    build_engagement_matrix, build_global_graph, edge_retention_backward, edge_retention_forward,
    gcn_normalize, gcn_normalize_backward, node_degrees, positional_encoding,
    positional_encoding_backward, refine, EdgeRefiner, EdgeSet, PositionalEncoder, RetentionCache,
};
use crate::metrics::evaluate_subset;
use crate::numcore::ops::{cross_entropy, linear, linear_backward, linear_backward_params, min_abs, relu, relu_backward};
use crate::numcore::{Adam, Matrix, Param, Parameterized, Rng};

pub const N_CLASSES: usize = 2;

/// Hidden representation and logits for every news item.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherOutput {
    pub hidden: Matrix,
    pub logits: Matrix,
}

impl TeacherOutput {
    pub fn predictions(&self) -> Vec<usize> {
        self.logits.argmax_rows()
    }
}

fn head(pre: &Matrix, final_relu: bool) -> Matrix {
    if final_relu {
        relu(pre)
    } else {
        pre.clone()
    }
}

fn head_backward(pre: &Matrix, upstream: &Matrix, final_relu: bool) -> Matrix {
    if final_relu {
        relu_backward(pre, upstream)
    } else {
        upstream.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContentTeacher {
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
    pub final_relu: bool,
}

#[derive(Debug, Clone)]
pub struct ContentCache {
    x: Matrix,
    pre1: Matrix,
    hidden: Matrix,
    pre2: Matrix,
}

impl ContentCache {
    pub fn min_abs_preactivation(&self, final_relu: bool) -> f64 {
        let m = min_abs(&self.pre1);
        if final_relu {
            m.min(min_abs(&self.pre2))
        } else {
            m
        }
    }
}

impl ContentTeacher {
    pub fn new(input_dim: usize, hidden: usize, final_relu: bool, rng: &mut Rng) -> Self {
        ContentTeacher {
            w1: Param::glorot("ct.w1", input_dim, hidden, rng),
            b1: Param::zeros("ct.b1", 1, hidden),
            w2: Param::glorot("ct.w2", hidden, N_CLASSES, rng),
            b2: Param::zeros("ct.b2", 1, N_CLASSES),
            final_relu,
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(TeacherOutput, ContentCache)> {
        if x.cols() != self.w1.value.rows() {
            return Err(Error::dim("content teacher input", x.shape(), self.w1.value.shape()));
        }
        let pre1 = linear(x, &self.w1, &self.b1)?;
        let hidden = relu(&pre1);
        let pre2 = linear(&hidden, &self.w2, &self.b2)?;
        let logits = head(&pre2, self.final_relu);
        Ok((
            TeacherOutput {
                hidden: hidden.clone(),
                logits,
            },
            ContentCache {
                x: x.clone(),
                pre1,
                hidden,
                pre2,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ContentCache, grad_logits: &Matrix) -> Result<()> {
        let g2 = head_backward(&cache.pre2, grad_logits, self.final_relu);
        let g_hidden = linear_backward(&cache.hidden, &mut self.w2, &mut self.b2, &g2)?;
        let g1 = relu_backward(&cache.pre1, &g_hidden);
        linear_backward_params(&cache.x, &mut self.w1, &mut self.b1, &g1)
    }
}

/// `hidden = ReLU(MLP₁(x))`, `logits = ReLU(MLP₂(hidden))` (final ReLU optional).
pub fn content_teacher_forward(ct: &ContentTeacher, x_news: &Matrix) -> Result<TeacherOutput> {
    Ok(ct.forward(x_news)?.0)
}

impl Parameterized for ContentTeacher {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Fixed structural inputs of the propagation teacher: the raw shared-user
/// graph, its degrees and the edge descriptors fed to the refiner.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInputs {
    pub a_news: Matrix,
    pub degrees: Vec<f64>,
    pub edges: EdgeSet,
}

impl GraphInputs {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let e = build_engagement_matrix(ds)?;
        GraphInputs::from_adjacency(build_global_graph(&e))
    }

    pub fn from_adjacency(a_news: Matrix) -> Result<Self> {
        let degrees = node_degrees(&a_news)?;
        let edges = EdgeSet::from_graph(&a_news, &degrees);
        Ok(GraphInputs {
            a_news,
            degrees,
            edges,
        })
    }

    pub fn n(&self) -> usize {
        self.a_news.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationTeacher {
    pub encoder: PositionalEncoder,
    pub refiner: EdgeRefiner,
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
    pub final_relu: bool,
}

#[derive(Debug, Clone)]
pub struct PropagationCache {
    x_pe: Matrix,
    retention: RetentionCache,
    pub m: Matrix,
    pub a_norm: Matrix,
    sums: Vec<f64>,
    ax: Matrix,
    pre1: Matrix,
    hidden: Matrix,
    hw: Matrix,
    pre2: Matrix,
}

impl PropagationCache {
    pub fn min_abs_preactivation(&self, final_relu: bool) -> f64 {
        let m = min_abs(&self.pre1).min(self.retention.min_abs_preactivation());
        if final_relu {
            m.min(min_abs(&self.pre2))
        } else {
            m
        }
    }
}

impl PropagationTeacher {
    pub fn new(n: usize, pe_dim: usize, hidden: usize, refiner_hidden: usize, final_relu: bool, rng: &mut Rng) -> Self {
        PropagationTeacher {
            encoder: PositionalEncoder::new(n, pe_dim, rng),
            refiner: EdgeRefiner::new(refiner_hidden, rng),
            w1: Param::glorot("pt.gcn1.w", pe_dim, hidden, rng),
            b1: Param::zeros("pt.gcn1.b", 1, hidden),
            w2: Param::glorot("pt.gcn2.w", hidden, N_CLASSES, rng),
            b2: Param::zeros("pt.gcn2.b", 1, N_CLASSES),
            final_relu,
        }
    }

    /// Two-layer GCN over `D^(−1/2)(A∘M + I)D^(−1/2)`; `M` is recomputed from
    /// the current refiner on every call.
    pub fn forward(&self, g: &GraphInputs) -> Result<(TeacherOutput, PropagationCache)> {
        let n = g.n();
        if self.encoder.len() != n {
            return Err(Error::Parameter(format!(
                "positional encoder sized for {} news, graph has {n}",
                self.encoder.len()
            )));
        }
        let indices: Vec<usize> = (0..n).collect();
        let x_pe = positional_encoding(&self.encoder, &indices)?;
        let (m, retention) = edge_retention_forward(&g.edges, &self.refiner)?;
        let a_hat = refine(&g.a_news, &m)?;
        let (a_norm, sums) = gcn_normalize(&a_hat);
        let ax = a_norm.matmul(&x_pe)?;
        let pre1 = linear(&ax, &self.w1, &self.b1)?;
        let hidden = relu(&pre1);
        // Â(HW₂) rather than (ÂH)W₂: the class dimension is the narrow one
        let hw = hidden.matmul(&self.w2.value)?;
        let mut pre2 = a_norm.matmul(&hw)?;
        pre2.add_row_broadcast(&self.b2.value)?;
        let logits = head(&pre2, self.final_relu);
        Ok((
            TeacherOutput {
                hidden: hidden.clone(),
                logits,
            },
            PropagationCache {
                x_pe,
                retention,
                m,
                a_norm,
                sums,
                ax,
                pre1,
                hidden,
                hw,
                pre2,
            },
        ))
    }

    pub fn backward(&mut self, g: &GraphInputs, cache: &PropagationCache, grad_logits: &Matrix) -> Result<()> {
        let g2 = head_backward(&cache.pre2, grad_logits, self.final_relu);
        self.b2.grad.add_assign(&g2.col_sums())?;
        let g_hw = cache.a_norm.t_matmul(&g2)?;
        self.w2.grad.add_assign(&cache.hidden.t_matmul(&g_hw)?)?;
        let g_hidden = g_hw.matmul_t(&self.w2.value)?;
        let g1 = relu_backward(&cache.pre1, &g_hidden);
        let g_ax = linear_backward(&cache.ax, &mut self.w1, &mut self.b1, &g1)?;
        // only entries on the support of Â_norm reach the refiner
        let mut g_anorm = g2.matmul_t_masked(&cache.hw, &cache.a_norm)?;
        g_anorm.add_assign(&g_ax.matmul_t_masked(&cache.x_pe, &cache.a_norm)?)?;
        let g_xpe = cache.a_norm.t_matmul(&g_ax)?;
        let indices: Vec<usize> = (0..g.n()).collect();
        positional_encoding_backward(&mut self.encoder, &indices, &g_xpe);

        let g_ahat = gcn_normalize_backward(&cache.a_norm, &cache.sums, &g_anorm);
        let mut g_m = g_ahat.hadamard(&g.a_news)?;
        for i in 0..g.n() {
            g_m[(i, i)] = 0.0;
        }
        edge_retention_backward(&g.edges, &mut self.refiner, &cache.retention, &g_m)
    }
}

pub fn propagation_teacher_forward(pt: &PropagationTeacher, g: &GraphInputs) -> Result<TeacherOutput> {
    Ok(pt.forward(g)?.0)
}

impl Parameterized for PropagationTeacher {
    fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.encoder.w, &self.encoder.b];
        out.extend(self.refiner.params());
        out.extend([&self.w1, &self.b1, &self.w2, &self.b2]);
        out
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.encoder.w, &mut self.encoder.b];
        out.extend(self.refiner.params_mut());
        out.extend([&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]);
        out
    }
}

/// A teacher that can be trained with cross-entropy on its own input.
pub trait Teacher: Parameterized + Clone {
    type Input;

    fn output(&self, input: &Self::Input) -> Result<TeacherOutput>;

    /// Masked cross-entropy; accumulates gradients into the parameters.
    fn ce_loss_and_grad(&mut self, input: &Self::Input, labels: &[usize], mask: &[usize]) -> Result<f64>;
}

impl Teacher for ContentTeacher {
    type Input = Matrix;

    fn output(&self, x: &Matrix) -> Result<TeacherOutput> {
        content_teacher_forward(self, x)
    }

    fn ce_loss_and_grad(&mut self, x: &Matrix, labels: &[usize], mask: &[usize]) -> Result<f64> {
        let (out, cache) = self.forward(x)?;
        let (loss, grad) = cross_entropy(&out.logits, labels, mask)?;
        self.backward(&cache, &grad)?;
        Ok(loss)
    }
}

impl Teacher for PropagationTeacher {
    type Input = GraphInputs;

    fn output(&self, g: &GraphInputs) -> Result<TeacherOutput> {
        propagation_teacher_forward(self, g)
    }

    fn ce_loss_and_grad(&mut self, g: &GraphInputs, labels: &[usize], mask: &[usize]) -> Result<f64> {
        let (out, cache) = self.forward(g)?;
        let (loss, grad) = cross_entropy(&out.logits, labels, mask)?;
        self.backward(g, &cache, &grad)?;
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TeacherHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (0 = initial parameters).
    pub best_epoch: usize,
    pub best_val_macro_f1: Option<f64>,
}

/// Full-batch Adam on train-masked cross-entropy with early stopping on
/// validation macro-F1. Returns the best-validation parameters.
pub fn train_teacher<T: Teacher>(
    model: T,
    input: &T::Input,
    labels: &[usize],
    split: &Split,
    opts: &TrainOptions,
) -> Result<(T, TeacherHistory)> {
    let mut model = model;
    let mut best = model.clone();
    let mut history = TeacherHistory::default();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut since_best = 0;
    let mut adam = Adam::new(opts.lr);

    for epoch in 1..=opts.max_epochs {
        model.zero_grads();
        let loss = model.ce_loss_and_grad(input, labels, &split.train)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("teacher loss {loss}"),
            });
        }
        adam.step(model.params_mut())?;

        let preds = model.output(input)?.predictions();
        let (val_acc, val_f1) = evaluate_subset(&preds, labels, &split.val)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss,
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
