//! Dataset schema, `pssd-v1` JSONL persistence, validation and splitting.
//!
//! File layout: a header line `{"format":"pssd-v1","feature_dim":D}` followed
//! by one [`NewsSample`] object per line. Node 0 of every sample is the news
//! root; its feature vector must equal `news_feature`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

pub const FORMAT_TAG: &str = "pssd-v1";

/// Label convention: 0 = true news, 1 = fake news.
pub const LABEL_TRUE: u8 = 0;
pub const LABEL_FAKE: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewsSample {
    pub id: String,
    pub label: u8,
    pub news_feature: Vec<f64>,
    pub node_features: Vec<Vec<f64>>,
    /// `(parent, child)` node indices.
    pub edges: Vec<(usize, usize)>,
    /// `(user id, interaction count)`.
    pub engagements: Vec<(String, u32)>,
}

impl NewsSample {
    pub fn n_nodes(&self) -> usize {
        self.node_features.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_dim: usize,
    pub samples: Vec<NewsSample>,
    /// User id → engagement-matrix column, in order of first appearance.
    pub user_index: IndexMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(feature_dim: usize, samples: Vec<NewsSample>) -> Self {
        let user_index = build_user_index(&samples);
        Dataset {
            feature_dim,
            samples,
            user_index,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.user_index.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label as usize).collect()
    }

    /// Root content features stacked as an `N x d` matrix.
    pub fn news_features(&self) -> Matrix {
        let mut m = Matrix::zeros(self.len(), self.feature_dim);
        for (i, s) in self.samples.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&s.news_feature);
        }
        m
    }

    /// Recomputes `user_index` after samples were edited in place.
    pub fn reindex_users(&mut self) {
        self.user_index = build_user_index(&self.samples);
    }

    /// Serializes to the `pssd-v1` text form.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&Header {
            format: FORMAT_TAG.to_string(),
            feature_dim: self.feature_dim,
        })
        .expect("header serializes");
        out.push('\n');
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("sample serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses and validates `pssd-v1` text.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let header: Header = serde_json::from_str(first).map_err(|e| Error::Parse {
            line: 1,
            message: format!("bad header: {e}"),
        })?;
        if header.format != FORMAT_TAG {
            return Err(Error::Parse {
                line: 1,
                message: format!("unsupported format `{}`", header.format),
            });
        }
        let mut samples = Vec::new();
        for (idx, line) in lines {
            let sample: NewsSample = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            samples.push(sample);
        }
        let ds = Dataset::new(header.feature_dim, samples);
        if let Some(v) = validate_dataset(&ds).into_iter().next() {
            return Err(Error::Validation(v.to_string()));
        }
        Ok(ds)
    }
}

fn build_user_index(samples: &[NewsSample]) -> IndexMap<String, usize> {
    let mut index = IndexMap::new();
    for s in samples {
        for (u, _) in &s.engagements {
            if !index.contains_key(u) {
                let next = index.len();
                index.insert(u.clone(), next);
            }
        }
    }
    index
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_jsonl(&text)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(ds.to_jsonl().as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    EmptyNodes,
    FeatureDim,
    NonFinite,
    RootMismatch,
    EdgeRange,
    Forest,
    Count,
    DuplicateUser,
    Label,
    DuplicateId,
    UserIndex,
}

impl Rule {
    pub fn describe(self) -> &'static str {
        match self {
            Rule::EmptyNodes => "node list must be nonempty",
            Rule::FeatureDim => "feature dimension violated",
            Rule::NonFinite => "features must be finite",
            Rule::RootMismatch => "node_features[0] must equal news_feature",
            Rule::EdgeRange => "edge index out of range",
            Rule::Forest => "forest violated",
            Rule::Count => "count ≥ 1 violated",
            Rule::DuplicateUser => "duplicate engagement user",
            Rule::Label => "label must be 0 or 1",
            Rule::DuplicateId => "duplicate sample id",
            Rule::UserIndex => "user index does not match engagements",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub sample_id: String,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sample `{}`: {}", self.sample_id, self.rule.describe())?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

/// Every schema violation in `ds`; empty when the dataset is well formed.
pub fn validate_dataset(ds: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for s in &ds.samples {
        let mut push = |rule: Rule, detail: String| {
            out.push(Violation {
                sample_id: s.id.clone(),
                rule,
                detail,
            })
        };
        if !ids.insert(s.id.as_str()) {
            push(Rule::DuplicateId, String::new());
        }
        if s.label > 1 {
            push(Rule::Label, format!("got {}", s.label));
        }
        if s.news_feature.len() != ds.feature_dim {
            push(
                Rule::FeatureDim,
                format!("news_feature has {} entries, expected {}", s.news_feature.len(), ds.feature_dim),
            );
        }
        if s.node_features.is_empty() {
            push(Rule::EmptyNodes, String::new());
        }
        for (k, f) in s.node_features.iter().enumerate() {
            if f.len() != ds.feature_dim {
                push(
                    Rule::FeatureDim,
                    format!("node {k} has {} entries, expected {}", f.len(), ds.feature_dim),
                );
            }
        }
        if s.news_feature.iter().chain(s.node_features.iter().flatten()).any(|v| !v.is_finite()) {
            push(Rule::NonFinite, String::new());
        }
        if let Some(root) = s.node_features.first() {
            let same = root.len() == s.news_feature.len()
                && root.iter().zip(&s.news_feature).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                push(Rule::RootMismatch, String::new());
            }
        }
        check_forest(s, &mut push);
        let mut seen = HashSet::new();
        for (u, c) in &s.engagements {
            if *c < 1 {
                push(Rule::Count, format!("user `{u}` has count {c}"));
            }
            if !seen.insert(u.as_str()) {
                push(Rule::DuplicateUser, format!("user `{u}`"));
            }
        }
    }
    if ds.user_index != build_user_index(&ds.samples) {
        out.push(Violation {
            sample_id: String::from("*"),
            rule: Rule::UserIndex,
            detail: String::new(),
        });
    }
    out
}

fn check_forest(s: &NewsSample, push: &mut impl FnMut(Rule, String)) {
    let n = s.n_nodes();
    let mut parent: Vec<Option<usize>> = vec![None; n];
    for &(p, c) in &s.edges {
        if p >= n || c >= n {
            push(Rule::EdgeRange, format!("edge ({p}, {c}) with {n} nodes"));
            return;
        }
        if p == c {
            push(Rule::Forest, format!("self-loop on node {p}"));
            return;
        }
        if c == 0 {
            push(Rule::Forest, "root has a parent".into());
            return;
        }
        if parent[c].replace(p).is_some() {
            push(Rule::Forest, format!("node {c} has two parents"));
            return;
        }
    }
    // With at most one parent per node, a cycle shows up as a walk longer than n.
    for start in 0..n {
        let mut cur = start;
        let mut steps = 0;
        while let Some(p) = parent[cur] {
            cur = p;
            steps += 1;
            if steps > n {
                push(Rule::Forest, format!("cycle through node {start}"));
                return;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded 7:1:2 split: `floor(0.7N)` train, `floor(0.1N)` val, rest test.
pub fn split_dataset(ds: &Dataset, seed: u64) -> Result<Split> {
    split_indices(ds.len(), seed)
}

pub fn split_indices(n: usize, seed: u64) -> Result<Split> {
    if n < 10 {
        return Err(Error::Parameter(format!(
            "splitting needs at least 10 samples, got {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::derive(seed, "split").shuffle(&mut idx);
    let n_train = 7 * n / 10;
    let n_val = n / 10;
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(Split {
        train: idx,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, label: u8) -> NewsSample {
        let root = vec![0.5, -1.0, 0.25, 2.0];
        NewsSample {
            id: id.into(),
            label,
            news_feature: root.clone(),
            node_features: vec![root, vec![0.1, 0.2, 0.3, 0.4], vec![1.0, 0.0, -1.0, 0.0]],
            edges: vec![(0, 1), (1, 2)],
            engagements: vec![("u1".into(), 1), ("u2".into(), 3)],
        }
    }

    #[test]
    fn loads_minimal_file() {
        let s = sample("n0", 0);
        let text = format!(
            "{{\"format\":\"pssd-v1\",\"feature_dim\":4}}\n{}\n",
            serde_json::to_string(&s).unwrap()
        );
        let ds = Dataset::from_jsonl(&text).unwrap();
        assert_eq!(ds.feature_dim, 4);
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.samples[0].n_nodes(), 3);
        assert_eq!(ds.n_users(), 2);
    }

    #[test]
    fn root_mismatch_is_rejected() {
        let mut s = sample("bad-root", 1);
        s.node_features[0][0] = 9.0;
        let text = Dataset::new(4, vec![s]).to_jsonl();
        let err = Dataset::from_jsonl(&text).unwrap_err().to_string();
        assert!(err.contains("bad-root") && err.contains("news_feature"), "{err}");
    }

    #[test]
    fn parse_error_reports_line() {
        let text = format!(
            "{{\"format\":\"pssd-v1\",\"feature_dim\":4}}\n{}\n{{not json\n",
            serde_json::to_string(&sample("a", 0)).unwrap()
        );
        match Dataset::from_jsonl(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "{\"format\":\"pssd-v1\",\"feature_dim\":1}\n{\"id\":\"x\",\"label\":0,\"news_feature\":[1.0],\"node_features\":[[1.0]],\"edges\":[],\"engagements\":[],\"extra\":1}\n";
        assert!(matches!(Dataset::from_jsonl(text), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let ds = Dataset::new(16, vec![]);
        assert_eq!(ds.to_jsonl(), "{\"format\":\"pssd-v1\",\"feature_dim\":16}\n");
    }

    #[test]
    fn well_formed_has_empty_report() {
        let ds = Dataset::new(4, vec![sample("a", 0), sample("b", 1)]);
        assert!(validate_dataset(&ds).is_empty());
    }

    #[test]
    fn cycle_reports_forest_violation() {
        let mut s = sample("cyc", 0);
        s.node_features.push(vec![0.0; 4]);
        s.edges = vec![(1, 2), (2, 3), (3, 1)];
        let report = validate_dataset(&Dataset::new(4, vec![s]));
        assert!(report.iter().any(|v| v.rule == Rule::Forest && v.sample_id == "cyc"));
        assert!(report[0].to_string().contains("forest violated"));
    }

    #[test]
    fn zero_count_is_reported() {
        let mut s = sample("z", 0);
        s.engagements[0].1 = 0;
        let report = validate_dataset(&Dataset::new(4, vec![s]));
        assert_eq!(report.len(), 1);
        assert!(report[0].to_string().contains("count ≥ 1 violated"));
    }

    #[test]
    fn other_rules() {
        let mut s = sample("x", 2);
        s.edges.push((0, 7));
        let report = validate_dataset(&Dataset::new(4, vec![s]));
        let rules: Vec<Rule> = report.iter().map(|v| v.rule).collect();
        assert!(rules.contains(&Rule::Label));
        assert!(rules.contains(&Rule::EdgeRange));

        let mut two_parents = sample("p", 0);
        two_parents.edges = vec![(0, 2), (1, 2)];
        let report = validate_dataset(&Dataset::new(4, vec![two_parents]));
        assert_eq!(report[0].rule, Rule::Forest);

        let dup = Dataset::new(4, vec![sample("same", 0), sample("same", 1)]);
        assert_eq!(validate_dataset(&dup)[0].rule, Rule::DuplicateId);
    }

    #[test]
    fn disconnected_forest_is_allowed() {
        let mut s = sample("f", 0);
        s.edges.clear();
        assert!(validate_dataset(&Dataset::new(4, vec![s])).is_empty());
    }

    #[test]
    fn validation_is_pure() {
        let mut s = sample("z", 0);
        s.engagements[1].1 = 0;
        let ds = Dataset::new(4, vec![s]);
        assert_eq!(validate_dataset(&ds), validate_dataset(&ds));
    }

    #[test]
    fn split_sizes() {
        let s = split_indices(314, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (219, 31, 64));
        let s = split_indices(10, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
        assert!(split_indices(9, 1).is_err());
    }

    #[test]
    fn split_is_seeded() {
        assert_eq!(split_indices(50, 3).unwrap(), split_indices(50, 3).unwrap());
        let (a, b) = (split_indices(50, 3).unwrap(), split_indices(50, 4).unwrap());
        assert_ne!(a, b);
        assert_eq!(a.train.len(), b.train.len());
        assert_eq!(a.test.len(), b.test.len());
    }
}
