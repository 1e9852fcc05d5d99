//! Pipeline configuration, read from TOML and overridable from the command line.

use std::fmt;
use std::path::{Path, PathBuf};

use cwmtsne::covariance::CovModelId;
use cwmtsne::cwm::{FitConfig, InitStrategy};
use cwmtsne::data::{ColumnRef, ConstantColumnPolicy, CsvSpec, FeatureColumns};
use cwmtsne::selection::{Criterion, SweepConfig};
use cwmtsne::tsne::{MomentumSchedule, TsneConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "CWMTSNE_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "cwmtsne-out";

/// Column given either by zero-based position or by header name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Index(usize),
    Name(String),
}

impl From<&Column> for ColumnRef {
    fn from(c: &Column) -> Self {
        match c {
            Column::Index(i) => ColumnRef::Index(*i),
            Column::Name(s) => ColumnRef::Name(s.clone()),
        }
    }
}

impl std::str::FromStr for Column {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().parse::<usize>() {
            Ok(i) => Column::Index(i),
            Err(_) => Column::Name(s.trim().to_string()),
        })
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Column::Index(i) => write!(f, "{i}"),
            Column::Name(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    /// Feature columns; every column not used as response or label when empty.
    pub features: Vec<Column>,
    pub response: Option<Column>,
    pub label: Option<Column>,
    pub has_header: bool,
    /// Standardize features before embedding.
    pub standardize: bool,
    /// `error` or `drop`.
    pub constant_columns: String,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: PathBuf::new(),
            features: Vec::new(),
            response: None,
            label: None,
            has_header: true,
            standardize: true,
            constant_columns: "error".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneSection {
    pub perplexity: f64,
    pub max_iterations: usize,
    pub output_dim: usize,
    /// Accepted for compatibility; values above 0 are replaced by 0 with a warning.
    pub theta: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: Option<usize>,
    pub learning_rate: f64,
    pub init_sd: f64,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    pub momentum_switch: usize,
    pub adaptive_gains: bool,
    /// Embedding is skipped when the input has at most this many features.
    pub skip_at_or_below: usize,
}

impl Default for TsneSection {
    fn default() -> Self {
        let t = TsneConfig::default();
        Self {
            perplexity: t.perplexity,
            max_iterations: t.max_iterations,
            output_dim: t.output_dim,
            theta: t.theta,
            early_exaggeration: t.early_exaggeration_factor,
            exaggeration_iters: t.early_exaggeration_iters,
            learning_rate: t.learning_rate,
            init_sd: t.init_sd,
            momentum_initial: t.momentum.initial,
            momentum_final: t.momentum.final_,
            momentum_switch: t.momentum.switch_iter,
            adaptive_gains: t.adaptive_gains,
            skip_at_or_below: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CwmSection {
    pub g_min: usize,
    pub g_max: usize,
    /// Covariance model codes; all fourteen when empty.
    pub models: Vec<String>,
    pub n_starts: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// `random_rows` or `kmeans_like`.
    pub init: String,
}

impl Default for CwmSection {
    fn default() -> Self {
        let f = FitConfig::default();
        Self {
            g_min: 1,
            g_max: 8,
            models: Vec::new(),
            n_starts: f.n_starts,
            max_iter: f.max_iter,
            tol: f.tol,
            init: f.init.name().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelTransformSection {
    pub offset: f64,
    pub noise_sd: f64,
}

impl Default for LabelTransformSection {
    fn default() -> Self {
        Self {
            offset: 0.5,
            noise_sd: 0.01,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Resolved from the environment or a default when absent.
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
    /// Criterion names; all eight when empty.
    pub criteria: Vec<String>,
    pub data: DataSection,
    pub tsne: TsneSection,
    pub cwm: CwmSection,
    pub label_transform: LabelTransformSection,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file; a relative data path is resolved against the
    /// file's directory.
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if cfg.data.path.is_relative() && !cfg.data.path.as_os_str().is_empty() {
            if let Some(dir) = path.parent() {
                cfg.data.path = dir.join(&cfg.data.path);
            }
        }
        Ok(cfg)
    }

    /// Configuration echo as it appears in the run report (no output path).
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.data.path.as_os_str().is_empty() {
            return Err(CliError::Config("data.path is required".into()));
        }
        self.constant_column_policy()?;
        self.sweep_config()?;
        if !(self.label_transform.noise_sd >= 0.0) {
            return Err(CliError::Config("label_transform.noise_sd must be >= 0".into()));
        }
        if !(self.label_transform.offset > -1.0) {
            return Err(CliError::Config("label_transform.offset must exceed -1".into()));
        }
        Ok(())
    }

    pub fn csv_spec(&self) -> CsvSpec {
        let mut spec = CsvSpec::new(&self.data.path);
        spec.has_header = self.data.has_header;
        spec.response = self.data.response.as_ref().map(ColumnRef::from);
        spec.label = self.data.label.as_ref().map(ColumnRef::from);
        if !self.data.features.is_empty() {
            spec.features = FeatureColumns::List(self.data.features.iter().map(ColumnRef::from).collect());
        }
        spec
    }

    pub fn constant_column_policy(&self) -> CliResult<ConstantColumnPolicy> {
        self.data
            .constant_columns
            .parse()
            .map_err(|e: cwmtsne::Error| CliError::Config(e.to_string()))
    }

    /// The t-SNE settings actually used; theta is always 0.
    pub fn tsne_config(&self) -> TsneConfig {
        let t = &self.tsne;
        TsneConfig {
            perplexity: t.perplexity,
            max_iterations: t.max_iterations,
            output_dim: t.output_dim,
            theta: 0.0,
            early_exaggeration_factor: t.early_exaggeration,
            early_exaggeration_iters: t.exaggeration_iters,
            init_sd: t.init_sd,
            seed: self.seed,
            learning_rate: t.learning_rate,
            momentum: MomentumSchedule {
                initial: t.momentum_initial,
                final_: t.momentum_final,
                switch_iter: t.momentum_switch,
            },
            adaptive_gains: t.adaptive_gains,
            ..TsneConfig::default()
        }
    }

    pub fn models(&self) -> CliResult<Vec<CovModelId>> {
        if self.cwm.models.is_empty() {
            return Ok(CovModelId::ALL.to_vec());
        }
        self.cwm
            .models
            .iter()
            .map(|m| m.parse().map_err(|e: cwmtsne::Error| CliError::Config(e.to_string())))
            .collect()
    }

    pub fn criteria(&self) -> CliResult<Vec<Criterion>> {
        if self.criteria.is_empty() {
            return Ok(Criterion::ALL.to_vec());
        }
        self.criteria
            .iter()
            .map(|c| c.parse().map_err(|e: cwmtsne::Error| CliError::Config(e.to_string())))
            .collect()
    }

    pub fn sweep_config(&self) -> CliResult<SweepConfig> {
        let c = &self.cwm;
        if c.g_min == 0 || c.g_min > c.g_max {
            return Err(CliError::Config(format!(
                "component range {}..={} is empty or starts at 0",
                c.g_min, c.g_max
            )));
        }
        if c.n_starts == 0 || c.max_iter == 0 || !(c.tol > 0.0) {
            return Err(CliError::Config(
                "cwm.n_starts and cwm.max_iter must be positive and cwm.tol > 0".into(),
            ));
        }
        let init: InitStrategy = c
            .init
            .parse()
            .map_err(|e: cwmtsne::Error| CliError::Config(e.to_string()))?;
        Ok(SweepConfig {
            g_range: (c.g_min..=c.g_max).collect(),
            models: self.models()?,
            criteria: self.criteria()?,
            fit: FitConfig {
                n_starts: c.n_starts,
                max_iter: c.max_iter,
                tol: c.tol,
                init,
            },
        })
    }
}
