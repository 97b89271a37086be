//! Experiment configuration: one JSON document, schema version 1, unknown
//! keys rejected.

use std::path::{Path, PathBuf};

use blockspin::recovery::RecoverOptions;
use blockspin::{Error, ModelParams, Result, SeedSpec};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Bin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub n_sites: Option<usize>,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NSearch {
    pub n_lo: usize,
    pub n_hi: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SamplerSpec {
    Exact,
    Glauber { sweeps: usize },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: Option<ModelSpec>,
    /// System sizes for `fluct`, `gap` and `sweep`.
    pub n_sites_grid: Vec<usize>,
    /// Observations per batch for `sample`, and Monte Carlo size for
    /// `fluct`/`gap` (0 skips the Monte Carlo columns).
    pub observations: usize,
    pub trials: usize,
    pub delta: f64,
    pub n_search: NSearch,
    pub seed: SeedSpec,
    pub sampler: SamplerSpec,
    /// Partition file for `sample`; contiguous blocks when absent.
    pub partition: Option<PathBuf>,
    pub recovery: RecoverOptions,
    /// Run `sweep` at both `(alpha, 2 - |alpha|)` and `(-alpha, 2 - |alpha|)`.
    pub paired: bool,
    pub output: OutputSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model: None,
            n_sites_grid: Vec::new(),
            observations: 1000,
            trials: 50,
            delta: 0.1,
            n_search: NSearch { n_lo: 16, n_hi: 1 << 20 },
            seed: SeedSpec::new(0, 0),
            sampler: SamplerSpec::Exact,
            partition: None,
            recovery: RecoverOptions { refine: true, ..RecoverOptions::default() },
            paired: false,
            output: OutputSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Malformed(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Malformed(format!("config: {msg}")));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.n_search.n_lo == 0 || self.n_search.n_lo >= self.n_search.n_hi {
            return bad(format!("n_search needs 0 < n_lo < n_hi, got {:?}", self.n_search));
        }
        if let Some(&n) = self.n_sites_grid.iter().find(|&&n| n < 2 || n % 2 == 1) {
            return bad(format!("n_sites_grid entries must be even and at least 2, got {n}"));
        }
        if let SamplerSpec::Glauber { sweeps: 0 } = self.sampler {
            return bad("glauber sweeps must be at least 1".into());
        }
        if let Some(m) = &self.model {
            ModelParams::new(m.n_sites.unwrap_or(4), m.alpha, m.beta)
                .map_err(|e| Error::Malformed(format!("config: model: {e}")))?;
        }
        Ok(())
    }

    pub fn model(&self) -> Result<&ModelSpec> {
        self.model.as_ref().ok_or_else(|| Error::Malformed("config: model section is required".into()))
    }

    /// Parameters at the configured `model.n_sites`.
    pub fn params(&self) -> Result<ModelParams> {
        let m = self.model()?;
        let n = m.n_sites.ok_or_else(|| Error::Malformed("config: model.n_sites is required".into()))?;
        ModelParams::new(n, m.alpha, m.beta)
    }

    /// `n_sites_grid`, or the single `model.n_sites` when the grid is empty.
    pub fn grid(&self) -> Result<Vec<usize>> {
        if !self.n_sites_grid.is_empty() {
            return Ok(self.n_sites_grid.clone());
        }
        match self.model()?.n_sites {
            Some(n) => Ok(vec![n]),
            None => Err(Error::Malformed("config: n_sites_grid or model.n_sites is required".into())),
        }
    }
}
