//! Planted two-community benchmark generator.
//!
//! Users split into two communities aligned with the news labels. A news
//! item of class `c` is engaged by each community-`c` user with probability
//! `q_in` and by each other user with probability `q_out`, so shared-user
//! counts carry the label signal. Content features are Gaussian around
//! `±𝟙/√d`, with comments pulled halfway toward their root.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NewsSample};
use crate::error::{Error, Result};
use crate::numcore::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub n_news: usize,
    pub n_users: usize,
    pub q_in: f64,
    pub q_out: f64,
    pub tree_size_min: usize,
    pub tree_size_max: usize,
    pub feature_dim: usize,
    pub feature_noise_std: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_news: 200,
            n_users: 500,
            q_in: 0.05,
            q_out: 0.005,
            tree_size_min: 4,
            tree_size_max: 16,
            feature_dim: 16,
            feature_noise_std: 1.0,
            seed: 0,
        }
    }
}

const MAX_COUNT: u32 = 5;

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Parameter(m));
        if self.n_news == 0 {
            return fail("n_news must be positive".into());
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be positive".into());
        }
        if !(0.0 <= self.q_out && self.q_out <= self.q_in && self.q_in <= 1.0) {
            return fail(format!(
                "need 0 ≤ q_out ≤ q_in ≤ 1, got q_in={} q_out={}",
                self.q_in, self.q_out
            ));
        }
        if self.tree_size_min < 1 || self.tree_size_min > self.tree_size_max {
            return fail(format!(
                "need 1 ≤ tree_size_min ≤ tree_size_max, got {}..{}",
                self.tree_size_min, self.tree_size_max
            ));
        }
        if !(self.feature_noise_std >= 0.0) || !self.feature_noise_std.is_finite() {
            return fail(format!("feature_noise_std must be ≥ 0, got {}", self.feature_noise_std));
        }
        Ok(())
    }

    /// Community (= aligned class) of user `j`; the first `⌊n_users/2⌋` users form community 0.
    pub fn user_community(&self, j: usize) -> u8 {
        if j < self.n_users / 2 {
            0
        } else {
            1
        }
    }
}

/// Class labels before the final shuffle: `⌈n/2⌉` zeros then `⌊n/2⌋` ones.
pub fn balanced_labels(n: usize) -> Vec<u8> {
    let zeros = n.div_ceil(2);
    (0..n).map(|i| if i < zeros { 0 } else { 1 }).collect()
}

fn engagement_count(rng: &mut Rng) -> u32 {
    // 1 + Geometric(0.5) failures, capped
    let mut count = 1;
    while count < MAX_COUNT && !rng.bernoulli(0.5) {
        count += 1;
    }
    count
}

pub fn generate_synthetic(p: &SynthParams) -> Result<Dataset> {
    p.validate()?;
    let mut rng = Rng::derive(p.seed, "synth");
    let d = p.feature_dim;
    let mean = 1.0 / (d as f64).sqrt();
    let sigma = p.feature_noise_std;

    let mut samples: Vec<NewsSample> = balanced_labels(p.n_news)
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let engagements = (0..p.n_users)
                .filter_map(|j| {
                    let q = if p.user_community(j) == label { p.q_in } else { p.q_out };
                    rng.bernoulli(q).then(|| (format!("u{j}"), engagement_count(&mut rng)))
                })
                .collect();

            let size = rng.range_inclusive(p.tree_size_min, p.tree_size_max);
            let edges = (1..size).map(|k| (rng.below(k), k)).collect();

            let sign = if label == 0 { 1.0 } else { -1.0 };
            let root: Vec<f64> = (0..d).map(|_| sign * mean + sigma * rng.normal()).collect();
            let mut node_features = Vec::with_capacity(size);
            node_features.push(root.clone());
            for _ in 1..size {
                node_features.push(root.iter().map(|r| 0.5 * r + 0.5 * sigma * rng.normal()).collect());
            }
            NewsSample {
                id: format!("news-{i}"),
                label,
                news_feature: root,
                node_features,
                edges,
                engagements,
            }
        })
        .collect();
    rng.shuffle(&mut samples);
    Ok(Dataset::new(d, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_dataset;

    fn small(n_news: usize, seed: u64) -> SynthParams {
        SynthParams {
            n_news,
            n_users: 40,
            q_in: 0.3,
            q_out: 0.05,
            tree_size_min: 1,
            tree_size_max: 8,
            feature_dim: 4,
            feature_noise_std: 0.5,
            seed,
        }
    }

    #[test]
    fn labels_are_balanced() {
        assert_eq!(balanced_labels(4), vec![0, 0, 1, 1]);
        assert_eq!(balanced_labels(5), vec![0, 0, 0, 1, 1]);
        let ds = generate_synthetic(&small(4, 1)).unwrap();
        let mut labels = ds.labels();
        labels.sort_unstable();
        assert_eq!(labels, vec![0, 0, 1, 1]);
        assert!(validate_dataset(&ds).is_empty());
    }

    #[test]
    fn generated_samples_are_valid() {
        for seed in 0..5 {
            let ds = generate_synthetic(&small(30, seed)).unwrap();
            assert!(validate_dataset(&ds).is_empty());
            for s in &ds.samples {
                assert!((1..=8).contains(&s.n_nodes()));
                assert_eq!(s.edges.len(), s.n_nodes() - 1);
                assert!(s.engagements.iter().all(|(_, c)| (1..=5).contains(c)));
            }
        }
    }

    #[test]
    fn same_params_same_bytes() {
        let a = generate_synthetic(&small(20, 9)).unwrap().to_jsonl();
        let b = generate_synthetic(&small(20, 9)).unwrap().to_jsonl();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(20, 10)).unwrap().to_jsonl();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_noise_features_sit_on_class_means() {
        let mut p = small(6, 2);
        p.feature_noise_std = 0.0;
        let ds = generate_synthetic(&p).unwrap();
        for s in &ds.samples {
            let expected = if s.label == 0 { 0.5 } else { -0.5 };
            assert!(s.news_feature.iter().all(|&v| v == expected));
        }
    }

    #[test]
    fn parameter_violations() {
        let mut p = small(10, 0);
        p.q_out = 0.5;
        assert!(generate_synthetic(&p).is_err());
        let mut p = small(10, 0);
        p.tree_size_min = 0;
        assert!(generate_synthetic(&p).is_err());
        let mut p = small(10, 0);
        p.feature_noise_std = -1.0;
        assert!(generate_synthetic(&p).is_err());
    }
}
