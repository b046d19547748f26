//! Random masking of node features and propagation edges.
//!
//! Every perturbed sample draws from its own stream keyed by the noise seed,
//! the injector and the sample id, so a selection does not depend on which
//! other samples are present or perturbed.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NewsSample, Split};
use crate::error::{Error, Result};
use crate::numcore::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Semantic,
    Structural,
    Mixed,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::Semantic, NoiseKind::Structural, NoiseKind::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Semantic => "semantic",
            NoiseKind::Structural => "structural",
            NoiseKind::Mixed => "mixed",
        }
    }

    pub fn masks_features(self) -> bool {
        matches!(self, NoiseKind::Semantic | NoiseKind::Mixed)
    }

    pub fn masks_edges(self) -> bool {
        matches!(self, NoiseKind::Structural | NoiseKind::Mixed)
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semantic" => Ok(NoiseKind::Semantic),
            "structural" => Ok(NoiseKind::Structural),
            "mixed" => Ok(NoiseKind::Mixed),
            other => Err(Error::Config(format!("unknown noise kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseScope {
    /// Perturb every sample before training.
    #[default]
    All,
    /// Perturb only the test samples.
    Test,
}

impl std::str::FromStr for NoiseScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(NoiseScope::All),
            "test" => Ok(NoiseScope::Test),
            other => Err(Error::Config(format!("unknown noise scope `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub ratio: f64,
    pub scope: NoiseScope,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::Config(format!("noise ratio must lie in [0, 1], got {}", self.ratio)));
        }
        Ok(())
    }
}

/// `floor(ratio · n)`, the exact number of items an injector masks.
pub fn masked_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64).floor() as usize).min(n)
}

fn sample_rng(seed: u64, what: &str, id: &str) -> Rng {
    Rng::derive(seed, &format!("noise/{what}/{id}"))
}

/// Node indices [`inject_semantic`] would zero for this sample.
pub fn semantic_selection(sample: &NewsSample, ratio: f64, seed: u64) -> Vec<usize> {
    let n = sample.n_nodes();
    let k = masked_count(ratio, n);
    if k == 0 {
        return Vec::new();
    }
    sample_rng(seed, "features", &sample.id).sample_without_replacement(n, k)
}

/// Edge positions [`inject_structural`] would drop for this sample.
pub fn structural_selection(sample: &NewsSample, ratio: f64, seed: u64) -> Vec<usize> {
    let n = sample.edges.len();
    let k = masked_count(ratio, n);
    if k == 0 {
        return Vec::new();
    }
    sample_rng(seed, "edges", &sample.id).sample_without_replacement(n, k)
}

fn mask_features(sample: &mut NewsSample, ratio: f64, seed: u64) {
    for node in semantic_selection(sample, ratio, seed) {
        sample.node_features[node].fill(0.0);
        if node == 0 {
            sample.news_feature.fill(0.0);
        }
    }
}

fn mask_edges(sample: &mut NewsSample, ratio: f64, seed: u64) {
    let drop = structural_selection(sample, ratio, seed);
    if drop.is_empty() {
        return;
    }
    let mut keep = vec![true; sample.edges.len()];
    for e in drop {
        keep[e] = false;
    }
    let mut flags = keep.into_iter();
    sample.edges.retain(|_| flags.next().unwrap_or(true));
}

/// Zero the features of `floor(ratio · n_nodes)` nodes in every sample.
/// Masking the root also zeroes the news feature.
pub fn inject_semantic(ds: &Dataset, spec: &NoiseSpec) -> Dataset {
    let mut out = ds.clone();
    for s in &mut out.samples {
        mask_features(s, spec.ratio, spec.seed);
    }
    out
}

/// Remove `floor(ratio · n_edges)` propagation edges from every sample.
pub fn inject_structural(ds: &Dataset, spec: &NoiseSpec) -> Dataset {
    let mut out = ds.clone();
    for s in &mut out.samples {
        mask_edges(s, spec.ratio, spec.seed);
    }
    out
}

/// Apply `spec.kind` to the samples selected by `spec.scope`.
pub fn apply_noise(ds: &Dataset, spec: &NoiseSpec, split: &Split) -> Result<Dataset> {
    spec.validate()?;
    let mut selected = vec![spec.scope == NoiseScope::All; ds.len()];
    if spec.scope == NoiseScope::Test {
        for &i in &split.test {
            *selected.get_mut(i).ok_or_else(|| Error::Parameter(format!("test index {i} out of range")))? = true;
        }
    }
    let mut out = ds.clone();
    for (s, _) in out.samples.iter_mut().zip(&selected).filter(|(_, &sel)| sel) {
        if spec.kind.masks_features() {
            mask_features(s, spec.ratio, spec.seed);
        }
        if spec.kind.masks_edges() {
            mask_edges(s, spec.ratio, spec.seed);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_dataset, validate_dataset};
    use crate::synth::{generate_synthetic, SynthParams};

    fn small() -> Dataset {
        generate_synthetic(&SynthParams {
            n_news: 20,
            n_users: 30,
            seed: 4,
            ..Default::default()
        })
        .unwrap()
    }

    fn spec(kind: NoiseKind, ratio: f64) -> NoiseSpec {
        NoiseSpec {
            kind,
            ratio,
            scope: NoiseScope::All,
            seed: 11,
        }
    }

    #[test]
    fn zero_ratio_is_identity() {
        let ds = small();
        let split = split_dataset(&ds, 0).unwrap();
        for kind in NoiseKind::ALL {
            let out = apply_noise(&ds, &spec(kind, 0.0), &split).unwrap();
            assert_eq!(out.to_jsonl(), ds.to_jsonl());
        }
    }

    #[test]
    fn full_ratio_masks_everything() {
        let ds = small();
        let feats = inject_semantic(&ds, &spec(NoiseKind::Semantic, 1.0));
        for s in &feats.samples {
            assert!(s.node_features.iter().flatten().all(|&v| v == 0.0));
            assert!(s.news_feature.iter().all(|&v| v == 0.0));
        }
        let edges = inject_structural(&ds, &spec(NoiseKind::Structural, 1.0));
        assert!(edges.samples.iter().all(|s| s.edges.is_empty()));
        assert!(validate_dataset(&feats).is_empty());
        assert!(validate_dataset(&edges).is_empty());
    }

    #[test]
    fn exact_counts() {
        assert_eq!(masked_count(0.5, 10), 5);
        assert_eq!(masked_count(0.3, 7), 2);
        assert_eq!(masked_count(1.0, 7), 7);
        let ds = small();
        for ratio in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let out = inject_structural(&ds, &spec(NoiseKind::Structural, ratio));
            for (a, b) in ds.samples.iter().zip(&out.samples) {
                assert_eq!(a.edges.len() - b.edges.len(), masked_count(ratio, a.edges.len()));
            }
            for s in &ds.samples {
                let sel = semantic_selection(s, ratio, 11);
                assert_eq!(sel.len(), masked_count(ratio, s.n_nodes()));
                let mut uniq = sel.clone();
                uniq.sort_unstable();
                uniq.dedup();
                assert_eq!(uniq.len(), sel.len());
            }
        }
    }

    #[test]
    fn selection_depends_only_on_seed_and_id() {
        let ds = small();
        let s = &ds.samples[3];
        assert_eq!(semantic_selection(s, 0.5, 7), semantic_selection(s, 0.5, 7));
        let mut renamed = s.clone();
        renamed.id.push('x');
        let differs = (0..20).any(|seed| semantic_selection(s, 0.5, seed) != semantic_selection(&renamed, 0.5, seed));
        assert!(differs);
    }

    #[test]
    fn test_scope_leaves_training_samples_alone() {
        let ds = small();
        let split = split_dataset(&ds, 2).unwrap();
        let sp = NoiseSpec {
            scope: NoiseScope::Test,
            ..spec(NoiseKind::Mixed, 0.5)
        };
        let out = apply_noise(&ds, &sp, &split).unwrap();
        for &i in split.train.iter().chain(&split.val) {
            assert_eq!(out.samples[i], ds.samples[i]);
        }
        assert!(split.test.iter().any(|&i| out.samples[i] != ds.samples[i]));
    }

    #[test]
    fn rejects_out_of_range_ratio() {
        let ds = small();
        let split = split_dataset(&ds, 0).unwrap();
        assert!(apply_noise(&ds, &spec(NoiseKind::Mixed, 1.5), &split).is_err());
    }
}
