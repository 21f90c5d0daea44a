//! TOML run configuration. Command-line flags override file values.

use std::path::Path;

use gfte_core::ingest::GenSpec;
use gfte_core::nn::gradcheck::MAX_SAMPLES;
use gfte_core::train::{GraphMode, TrainConfig};
use gfte_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Settings for `eval`, `predict` and `recover`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub graph: GraphMode,
    /// Neighbours per node; defaults to the checkpoint's own `k`.
    pub k: Option<usize>,
    /// Probability at or above which an edge is labeled positive.
    pub threshold: f64,
    /// Store every edge prediction in the JSON report.
    pub keep_edges: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            graph: GraphMode::Knn,
            k: None,
            threshold: 0.5,
            keep_edges: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Coordinates sampled per parameter tensor.
    pub samples: usize,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            samples: MAX_SAMPLES,
            tolerance: 1e-4,
        }
    }
}

/// Whole configuration file. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides every section's seed when set.
    pub seed: Option<u64>,
    /// Worker threads for per-table stages; 0 uses every core.
    pub jobs: Option<usize>,
    pub gen: GenSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub gradcheck: GradcheckConfig,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies the global `--seed` and `--jobs` flags, then propagates the
    /// top-level seed into every section.
    pub fn with_globals(mut self, seed: Option<u64>, jobs: Option<usize>) -> Self {
        if seed.is_some() {
            self.seed = seed;
        }
        if jobs.is_some() {
            self.jobs = jobs;
        }
        if let Some(s) = self.seed {
            self.gen.seed = s;
            self.train.seed = s;
            self.gradcheck.seed = s;
        }
        self
    }

    pub fn jobs(&self) -> usize {
        self.jobs.unwrap_or(1)
    }

    /// Default file contents, with every key spelled out.
    pub fn template() -> String {
        toml::to_string_pretty(&Self::default()).expect("default config serializes")
    }
}
