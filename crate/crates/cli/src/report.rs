//! Run report (TOML) and the flat CSV tables written next to it.

use std::fmt::Write as _;
use std::path::Path;

use cwmtsne::data::write_atomic;
use cwmtsne::metrics::Indices;
use cwmtsne::selection::SweepResult;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult, Stage};

pub const REPORT_FILE: &str = "report.toml";
pub const TIMING_FILE: &str = "timing.toml";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const COST_TRACE_FILE: &str = "cost_trace.csv";
pub const EMBEDDING_FILE: &str = "embedding.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const LABEL_MAPPING_FILE: &str = "label_mapping.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub version: String,
    pub seed: u64,
    pub rng: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n_rows: usize,
    pub feature_names: Vec<String>,
    pub standardized: bool,
    pub dropped_columns: Vec<String>,
    pub n_classes: Option<usize>,
    /// `column` or `transformed_labels`.
    pub response_source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSummary {
    pub skipped: bool,
    pub output_dim: usize,
    pub perplexity: Option<f64>,
    pub iterations: Option<usize>,
    pub exaggeration_iters: Option<usize>,
    pub initial_kl: Option<f64>,
    pub post_exaggeration_kl: Option<f64>,
    pub final_kl: Option<f64>,
}

/// Best cell for one criterion, with its agreement with the reference labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestModel {
    pub criterion: String,
    pub g: usize,
    pub model: String,
    pub value: f64,
    pub loglik: f64,
    pub n_params: u64,
    pub rand: Option<f64>,
    pub ha: Option<f64>,
    pub ma: Option<f64>,
    pub fm: Option<f64>,
    pub jaccard: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells: usize,
    pub not_estimated: usize,
    pub best: Vec<BestModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub stage: Stage,
    pub message: String,
}

/// Definitions of the reported agreement indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexDefinitions {
    pub rand: String,
    pub ha: String,
    pub ma: String,
    pub fm: String,
    pub jaccard: String,
    pub accuracy: String,
}

impl Default for IndexDefinitions {
    fn default() -> Self {
        Self {
            rand: "(a + d) / (a + b + c + d) over unordered pairs".into(),
            ha: "Hubert-Arabie adjusted Rand: (a - E[a]) / ((2a + b + c) / 2 - E[a]), E[a] = (a + b)(a + c) / (a + b + c + d)".into(),
            ma: "Morey-Agresti adjusted Rand: (S_ij - S_i S_j / N^2) / ((S_i + S_j) / 2 - S_i S_j / N^2), S = sums of squared table counts".into(),
            fm: "Fowlkes-Mallows: a / sqrt((a + b)(a + c))".into(),
            jaccard: "a / (a + b + c)".into(),
            accuracy: "each cluster mapped to its modal reference class, ties to the smaller class".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: RunInfo,
    pub config: PipelineConfig,
    pub data: DataSummary,
    pub embedding: Option<EmbeddingSummary>,
    pub sweep: Option<SweepSummary>,
    pub index_definitions: IndexDefinitions,
    pub warnings: Vec<Warning>,
}

impl RunReport {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("report is always serializable")
    }

    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("invalid report: {e}")))
    }
}

/// Wall-clock seconds per stage; kept out of the report so that the report
/// stays byte-identical across runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stages: Vec<StageTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: Stage,
    pub seconds: f64,
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> CliResult<()> {
    write_atomic(&dir.join(name), text.as_bytes()).map_err(CliError::stage(Stage::Report))
}

pub fn emit_report(report: &RunReport, timing: &Timing, dir: &Path) -> CliResult<()> {
    write_text(dir, REPORT_FILE, &report.to_toml_string())?;
    write_text(
        dir,
        TIMING_FILE,
        &toml::to_string(timing).expect("timing is always serializable"),
    )
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// `iteration,kl` for every recorded iteration.
pub fn cost_trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("iteration,kl\n");
    for (t, c) in trace.iter().enumerate() {
        let _ = writeln!(s, "{t},{c}");
    }
    s
}

/// Metric row per sweep cell; failed cells keep their status and no values.
pub fn metrics_csv(sweep: &SweepResult, rows: &[Option<(Indices, f64)>]) -> String {
    let mut s = String::from("G,model,status,Rand,HA,MA,FM,Jaccard,accuracy\n");
    for (cell, row) in sweep.cells.iter().zip(rows) {
        let _ = write!(s, "{},{}", cell.g, cell.model);
        match row {
            Some((idx, acc)) => {
                let _ = write!(s, ",ok");
                for v in idx.values() {
                    let _ = write!(s, ",{}", opt(v));
                }
                let _ = writeln!(s, ",{acc}");
            }
            None => s.push_str(",Not Estimated,,,,,,\n"),
        }
    }
    s
}

/// One row per observation: optional reference label, then one column of
/// hard labels per named partition.
pub fn labels_csv(reference: Option<&[usize]>, columns: &[(String, Vec<usize>)]) -> String {
    let mut s = String::from("row");
    if reference.is_some() {
        s.push_str(",reference");
    }
    for (name, _) in columns {
        let _ = write!(s, ",{name}");
    }
    s.push('\n');
    let n = reference
        .map(<[usize]>::len)
        .or_else(|| columns.first().map(|c| c.1.len()))
        .unwrap_or(0);
    for i in 0..n {
        let _ = write!(s, "{i}");
        if let Some(r) = reference {
            let _ = write!(s, ",{}", r[i]);
        }
        for (_, l) in columns {
            let _ = write!(s, ",{}", l[i]);
        }
        s.push('\n');
    }
    s
}
