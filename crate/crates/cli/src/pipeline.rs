//! standardize -> embed -> transform -> sweep -> metrics, writing artifacts
//! as each stage completes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cwmtsne::data::{
    child_seed, load_csv, standardize, transform_labels, DataMatrix, LoadedCsv, RandomSource,
    RegressionData,
};
use cwmtsne::metrics::{compare, majority_accuracy, Indices};
use cwmtsne::selection::{sweep, CellOutcome, Criterion, SweepResult};
use cwmtsne::tsne::{embed, EmbeddingState};
use nalgebra::DMatrix;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult, Stage};
use crate::plot::emit_scatter;
use crate::report::{
    cost_trace_csv, emit_report, labels_csv, metrics_csv, write_text, BestModel, DataSummary,
    EmbeddingSummary, IndexDefinitions, RunInfo, RunReport, StageTime, SweepSummary, Timing,
    Warning, COST_TRACE_FILE, EMBEDDING_FILE, LABELS_FILE, LABEL_MAPPING_FILE, METRICS_FILE,
    SWEEP_FILE,
};

/// Child stream indices of the master seed.
const TSNE_STREAM: u64 = 0;
const TRANSFORM_STREAM: u64 = 1;
const SWEEP_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedMode {
    /// Embed only when the input has more features than the configured threshold.
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub embed: EmbedMode,
    pub sweep: bool,
}

impl Stages {
    pub const FULL: Stages = Stages {
        embed: EmbedMode::Auto,
        sweep: true,
    };
}

/// Everything a run produced, in memory.
#[derive(Debug)]
pub struct RunOutput {
    pub output_dir: PathBuf,
    pub report: RunReport,
    pub timing: Timing,
    pub embedding: Option<EmbeddingState>,
    pub cwm_input: DataMatrix,
    pub response: Option<Vec<f64>>,
    pub reference_labels: Option<Vec<usize>>,
    pub sweep: Option<SweepResult>,
}

struct Recorder {
    warnings: Vec<Warning>,
    timing: Timing,
    clock: Instant,
}

impl Recorder {
    fn warn(&mut self, stage: Stage, message: impl Into<String>) {
        self.warnings.push(Warning {
            stage,
            message: message.into(),
        });
    }

    fn lap(&mut self, stage: Stage) {
        let now = Instant::now();
        self.timing.stages.push(StageTime {
            stage,
            seconds: (now - self.clock).as_secs_f64(),
        });
        self.clock = now;
    }
}

pub fn run_pipeline(cfg: &PipelineConfig) -> CliResult<RunOutput> {
    run_stages(cfg, Stages::FULL)
}

pub fn run_stages(cfg: &PipelineConfig, stages: Stages) -> CliResult<RunOutput> {
    cfg.validate()?;
    let sweep_cfg = cfg.sweep_config()?;
    let dir = cfg.resolved_output_dir();
    fs::create_dir_all(&dir).map_err(|e| CliError::Io {
        path: dir.clone(),
        source: e,
    })?;
    let mut rec = Recorder {
        warnings: Vec::new(),
        timing: Timing::default(),
        clock: Instant::now(),
    };

    let LoadedCsv {
        dataset,
        label_mapping,
        feature_names,
    } = load_csv(&cfg.csv_spec()).map_err(CliError::stage(Stage::Load))?;
    if let Some(mapping) = &label_mapping {
        write_text(&dir, LABEL_MAPPING_FILE, &mapping.to_csv_string())?;
        rec.warn(
            Stage::Load,
            format!("non-integer labels coded 1..{} in order of appearance", mapping.n_classes()),
        );
    }
    rec.lap(Stage::Load);

    let mut kept_names = feature_names.clone();
    let mut dropped = Vec::new();
    let features = if cfg.data.standardize {
        let s = standardize(&dataset.features, cfg.constant_column_policy()?)
            .map_err(CliError::stage(Stage::Standardize))?;
        kept_names = s.kept_columns.iter().map(|&j| feature_names[j].clone()).collect();
        dropped = feature_names
            .iter()
            .enumerate()
            .filter(|(j, _)| !s.kept_columns.contains(j))
            .map(|(_, n)| n.clone())
            .collect();
        if !dropped.is_empty() {
            rec.warn(Stage::Standardize, format!("dropped constant columns: {}", dropped.join(" ")));
        }
        s.data
    } else {
        dataset.features.clone()
    };
    rec.lap(Stage::Standardize);

    let labels = dataset.reference_labels.clone();
    let d = features.n_cols();
    let do_embed = match stages.embed {
        EmbedMode::Always => true,
        EmbedMode::Never => false,
        EmbedMode::Auto => d > cfg.tsne.skip_at_or_below,
    };
    let mut embedding_summary = EmbeddingSummary {
        skipped: !do_embed,
        output_dim: d,
        perplexity: None,
        iterations: None,
        exaggeration_iters: None,
        initial_kl: None,
        post_exaggeration_kl: None,
        final_kl: None,
    };
    let mut embedding = None;
    let cwm_input = if do_embed {
        if cfg.tsne.theta > 0.0 {
            rec.warn(
                Stage::Embed,
                format!("theta = {} requested; exact gradients used (theta = 0)", cfg.tsne.theta),
            );
        }
        let mut tcfg = cfg.tsne_config();
        tcfg.seed = child_seed(cfg.seed, TSNE_STREAM);
        let state = embed(&features, &tcfg).map_err(CliError::stage(Stage::Embed))?;
        write_text(&dir, COST_TRACE_FILE, &cost_trace_csv(&state.cost_trace))?;
        write_text(&dir, EMBEDDING_FILE, &embedding_csv(&state.y, labels.as_deref()))?;
        if tcfg.output_dim == 2 {
            if let Some(l) = &labels {
                emit_scatter(&state.y, l, "embedding, reference labels", &dir.join("embedding_reference.svg"))?;
            }
        }
        let ee = state.exaggeration_iters.min(state.cost_trace.len().saturating_sub(1));
        embedding_summary = EmbeddingSummary {
            skipped: false,
            output_dim: tcfg.output_dim,
            perplexity: Some(tcfg.perplexity),
            iterations: Some(state.iteration),
            exaggeration_iters: Some(state.exaggeration_iters),
            initial_kl: state.cost_trace.first().copied(),
            post_exaggeration_kl: state.cost_trace.get(ee).copied(),
            final_kl: Some(state.final_cost),
        };
        let y = DataMatrix::new(state.y.clone()).map_err(CliError::stage(Stage::Embed))?;
        embedding = Some(state);
        y
    } else {
        features.clone()
    };
    rec.lap(Stage::Embed);

    let mut response_source = None;
    let mut response = None;
    if stages.sweep {
        response = Some(match (&dataset.response, &labels) {
            (Some(y), _) => {
                response_source = Some("column".to_string());
                y.clone()
            }
            (None, Some(l)) => {
                response_source = Some("transformed_labels".to_string());
                let mut rng = RandomSource::new(cfg.seed).split(TRANSFORM_STREAM);
                transform_labels(l, cfg.label_transform.offset, cfg.label_transform.noise_sd, &mut rng)
                    .map_err(CliError::stage(Stage::Transform))?
            }
            (None, None) => {
                return Err(CliError::Config(
                    "fitting needs a response column or a label column".into(),
                ))
            }
        });
    }
    rec.lap(Stage::Transform);

    let mut sweep_result = None;
    let mut sweep_summary = None;
    if let Some(y) = &response {
        let data = RegressionData::new(cwm_input.clone(), y.clone()).map_err(CliError::stage(Stage::Sweep))?;
        let rng = RandomSource::new(cfg.seed).split(SWEEP_STREAM);
        let result = sweep(&data, &sweep_cfg, &rng).map_err(CliError::stage(Stage::Sweep))?;
        write_text(&dir, SWEEP_FILE, &result.to_csv_string())?;
        cell_warnings(&result, &mut rec);
        rec.lap(Stage::Sweep);

        let rows: Vec<Option<(Indices, f64)>> = match &labels {
            Some(truth) => result
                .cells
                .iter()
                .map(|c| {
                    c.fit().map(|f| {
                        let idx = compare(&f.hard_labels, truth).expect("lengths match");
                        let acc = majority_accuracy(&f.hard_labels, truth).expect("lengths match");
                        (idx, acc)
                    })
                })
                .collect(),
            None => vec![None; result.cells.len()],
        };
        if labels.is_some() {
            write_text(&dir, METRICS_FILE, &metrics_csv(&result, &rows))?;
        }
        let mut best = Vec::new();
        let mut label_columns = Vec::new();
        for (criterion, idx) in &result.best {
            let Some(i) = *idx else {
                rec.warn(Stage::Sweep, format!("{criterion} undefined for every cell"));
                continue;
            };
            let cell = &result.cells[i];
            let CellOutcome::Fitted { criteria, fit } = &cell.outcome else {
                unreachable!("best cells are fitted");
            };
            let metric = rows[i];
            best.push(BestModel {
                criterion: criterion.to_string(),
                g: cell.g,
                model: cell.model.to_string(),
                value: criteria.get(*criterion).expect("best value is defined"),
                loglik: criteria.loglik,
                n_params: criteria.n_params,
                rand: metric.and_then(|m| m.0.rand),
                ha: metric.and_then(|m| m.0.ha),
                ma: metric.and_then(|m| m.0.ma),
                fm: metric.and_then(|m| m.0.fm),
                jaccard: metric.and_then(|m| m.0.jaccard),
                accuracy: metric.map(|m| m.1),
            });
            label_columns.push((format!("{criterion}_G{}_{}", cell.g, cell.model), fit.hard_labels.clone()));
            if matches!(criterion, Criterion::BIC | Criterion::ICL) && cwm_input.n_cols() == 2 {
                emit_scatter(
                    cwm_input.values(),
                    &fit.hard_labels,
                    &format!("{criterion} best: G={} {}", cell.g, cell.model),
                    &dir.join(format!("clusters_{}.svg", criterion.name().to_lowercase())),
                )?;
            }
        }
        write_text(&dir, LABELS_FILE, &labels_csv(labels.as_deref(), &label_columns))?;
        sweep_summary = Some(SweepSummary {
            cells: result.cells.len(),
            not_estimated: result.n_failed(),
            best,
        });
        sweep_result = Some(result);
        rec.lap(Stage::Metrics);
    }

    let report = RunReport {
        run: RunInfo {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            rng: RandomSource::new(cfg.seed).algorithm().to_string(),
        },
        config: cfg.clone(),
        data: DataSummary {
            n_rows: dataset.n_rows(),
            feature_names: kept_names,
            standardized: cfg.data.standardize,
            dropped_columns: dropped,
            n_classes: labels.as_ref().map(|l| {
                let mut u = l.clone();
                u.sort_unstable();
                u.dedup();
                u.len()
            }),
            response_source,
        },
        embedding: Some(embedding_summary),
        sweep: sweep_summary,
        index_definitions: IndexDefinitions::default(),
        warnings: std::mem::take(&mut rec.warnings),
    };
    rec.lap(Stage::Report);
    emit_report(&report, &rec.timing, &dir)?;

    Ok(RunOutput {
        output_dir: dir,
        report,
        timing: rec.timing,
        embedding,
        cwm_input,
        response,
        reference_labels: labels,
        sweep: sweep_result,
    })
}

fn cell_warnings(result: &SweepResult, rec: &mut Recorder) {
    for cell in &result.cells {
        let tag = format!("G={} {}", cell.g, cell.model);
        match &cell.outcome {
            CellOutcome::NotEstimated { reason } => rec.warn(Stage::Sweep, format!("{tag}: not estimated ({reason})")),
            CellOutcome::Fitted { fit, .. } => {
                if fit.regularized {
                    rec.warn(Stage::Sweep, format!("{tag}: ridge regularization applied"));
                }
                if fit.reseeds > 0 {
                    rec.warn(Stage::Sweep, format!("{tag}: {} empty-component re-seeds", fit.reseeds));
                }
                if fit.failed_starts > 0 {
                    rec.warn(Stage::Sweep, format!("{tag}: {} of the starts failed", fit.failed_starts));
                }
                if !fit.converged {
                    rec.warn(Stage::Sweep, format!("{tag}: reached max_iter without converging"));
                }
            }
        }
    }
}

fn embedding_csv(y: &DMatrix<f64>, labels: Option<&[usize]>) -> String {
    use std::fmt::Write as _;
    let mut s = (1..=y.ncols()).map(|k| format!("y{k}")).collect::<Vec<_>>().join(",");
    if labels.is_some() {
        s.push_str(",label");
    }
    s.push('\n');
    for i in 0..y.nrows() {
        let row: Vec<String> = y.row(i).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        if let Some(l) = labels {
            let _ = write!(s, ",{}", l[i]);
        }
        s.push('\n');
    }
    s
}

/// Reads two label columns from a CSV and compares them.
pub fn compare_label_columns(
    path: &Path,
    pred: &crate::config::Column,
    truth: &crate::config::Column,
) -> CliResult<(Indices, f64)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Stage {
        stage: Stage::Load,
        source: e.into(),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Stage {
            stage: Stage::Load,
            source: e.into(),
        })?
        .clone();
    let find = |c: &crate::config::Column| -> CliResult<usize> {
        match c {
            crate::config::Column::Index(i) if *i < headers.len() => Ok(*i),
            crate::config::Column::Name(n) => headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| CliError::Config(format!("no column named {n:?}"))),
            other => Err(CliError::Config(format!("column {other} out of range"))),
        }
    };
    let (pi, ti) = (find(pred)?, find(truth)?);
    let mut p = Vec::new();
    let mut t = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Stage {
            stage: Stage::Load,
            source: e.into(),
        })?;
        let parse = |col: usize| -> CliResult<usize> {
            let v = rec.get(col).unwrap_or("").trim();
            v.parse().map_err(|_| CliError::Stage {
                stage: Stage::Load,
                source: cwmtsne::Error::Parse {
                    row,
                    col,
                    value: v.to_string(),
                },
            })
        };
        p.push(parse(pi)?);
        t.push(parse(ti)?);
    }
    let idx = compare(&p, &t).map_err(CliError::stage(Stage::Metrics))?;
    let acc = majority_accuracy(&p, &t).map_err(CliError::stage(Stage::Metrics))?;
    Ok((idx, acc))
}
