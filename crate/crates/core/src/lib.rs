//! Dual-teacher knowledge distillation for fake-news detection on
//! propagation graphs.
//!
//! A content teacher (MLP over news content) and a propagation teacher (GCN
//! over a learned refinement of the news–news shared-user graph) are trained
//! first, then frozen. A student GCN over each propagation tree, spread over
//! the global graph, is trained against labels plus a two-channel
//! distillation objective from both teachers.

pub mod error;
pub mod numcore;

pub use error::{Error, Result};
pub mod data;
pub mod graph;
pub mod synth;
pub mod metrics;
pub mod teachers;
pub mod student;
pub mod distill;
pub mod noise;
pub mod config;
pub mod pipeline;
pub mod bench;
pub mod checks;
