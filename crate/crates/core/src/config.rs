//! Run configuration: JSON loading with range checks and a stable hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distill::MkdConfig;
use crate::error::{Error, Result};
use crate::noise::{NoiseKind, NoiseScope, NoiseSpec};
use crate::student::{Pooling, StudentOptions};
use crate::teachers::TrainOptions;

pub const SEED_ENV: &str = "PSS_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub hidden_dim: usize,
    pub pe_dim: usize,
    pub refiner_hidden: usize,
    pub lr_ct: f64,
    pub lr_pt: f64,
    pub lr_student: f64,
    pub lambda: f64,
    pub beta: f64,
    pub rho: f64,
    pub final_relu: bool,
    pub kd_reverse_kl: bool,
    pub pooling: Pooling,
    pub use_ct: bool,
    pub use_pt: bool,
    pub use_sup: bool,
    pub use_tar: bool,
    pub use_lgpi: bool,
    pub noise_kind: NoiseKind,
    pub noise_ratio: f64,
    pub noise_scope: NoiseScope,
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Output directory. Not part of the hash.
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mkd = MkdConfig::default();
        RunConfig {
            data: None,
            hidden_dim: 64,
            pe_dim: 64,
            refiner_hidden: 16,
            lr_ct: 5e-5,
            lr_pt: 5e-4,
            lr_student: 5e-4,
            lambda: mkd.lambda,
            beta: mkd.beta,
            rho: mkd.rho,
            final_relu: true,
            kd_reverse_kl: false,
            pooling: Pooling::Mean,
            use_ct: true,
            use_pt: true,
            use_sup: true,
            use_tar: true,
            use_lgpi: true,
            noise_kind: NoiseKind::Mixed,
            noise_ratio: 0.0,
            noise_scope: NoiseScope::All,
            seed: 0,
            max_epochs: 200,
            patience: 10,
            out: None,
        }
    }
}

fn positive(key: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Config(format!("`{key}` must be at least 1")));
    }
    Ok(())
}

fn positive_f(key: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("`{key}` must be a positive number, got {v}")));
    }
    Ok(())
}

fn unit(key: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config(format!("`{key}` must lie in [0, 1], got {v}")));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        positive("hidden_dim", self.hidden_dim)?;
        positive("pe_dim", self.pe_dim)?;
        positive("refiner_hidden", self.refiner_hidden)?;
        positive("max_epochs", self.max_epochs)?;
        positive("patience", self.patience)?;
        positive_f("lr_ct", self.lr_ct)?;
        positive_f("lr_pt", self.lr_pt)?;
        positive_f("lr_student", self.lr_student)?;
        positive_f("rho", self.rho)?;
        unit("lambda", self.lambda)?;
        unit("beta", self.beta)?;
        unit("noise_ratio", self.noise_ratio)?;
        Ok(())
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Config("missing data path (`data` key or --data)".into()))
    }

    /// Replace the seed with `PSS_SEED` when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    /// Sorted-key compact JSON of every field except `out`.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let serde_json::Value::Object(map) = &mut v {
            map.remove("out");
        }
        // serde_json's default map is ordered by key
        v.to_string()
    }

    /// First 16 hex digits of the SHA-256 of [`canonical_json`](Self::canonical_json).
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn mkd(&self) -> MkdConfig {
        MkdConfig {
            lambda: self.lambda,
            beta: self.beta,
            rho: self.rho,
            use_ct: self.use_ct,
            use_pt: self.use_pt,
            use_sup: self.use_sup,
            use_tar: self.use_tar,
            use_lgpi: self.use_lgpi,
            kd_reverse_kl: self.kd_reverse_kl,
        }
    }

    pub fn student_options(&self) -> StudentOptions {
        StudentOptions {
            final_relu: self.final_relu,
            pooling: self.pooling,
            use_lgpi: self.use_lgpi,
        }
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec {
            kind: self.noise_kind,
            ratio: self.noise_ratio,
            scope: self.noise_scope,
            seed: self.seed,
        }
    }

    pub fn train_options(&self, lr: f64) -> TrainOptions {
        TrainOptions {
            lr,
            max_epochs: self.max_epochs,
            patience: self.patience,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = RunConfig::from_json_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.hidden_dim, 64);
        assert_eq!(cfg.lr_ct, 5e-5);
        assert!(cfg.data_path().is_err());
    }

    #[test]
    fn out_of_range_names_key() {
        let err = RunConfig::from_json_str(r#"{"lambda": 1.5}"#).unwrap_err();
        assert!(err.to_string().contains("lambda"), "{err}");
        let err = RunConfig::from_json_str(r#"{"rho": 0}"#).unwrap_err();
        assert!(err.to_string().contains("rho"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::from_json_str(r#"{"lamda": 0.5}"#).unwrap_err();
        assert!(err.to_string().contains("lamda"), "{err}");
    }

    #[test]
    fn hash_ignores_key_order_and_out_dir() {
        let a = RunConfig::from_json_str(r#"{"lambda": 0.3, "seed": 4, "out": "x"}"#).unwrap();
        let b = RunConfig::from_json_str(r#"{"seed": 4, "lambda": 0.3}"#).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 16);
        let c = RunConfig { seed: 5, ..b.clone() };
        assert_ne!(c.config_hash(), b.config_hash());
    }

    #[test]
    fn canonical_json_is_sorted_and_round_trips() {
        let cfg = RunConfig {
            lr_student: 0.1 + 0.2,
            ..Default::default()
        };
        let text = cfg.canonical_json();
        let keys: Vec<String> = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&text)
            .unwrap()
            .keys()
            .cloned()
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
