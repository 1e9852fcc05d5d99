//! Information criteria and the (G, covariance model) sweep.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;

use crate::covariance::{param_count, CovModelId};
use crate::cwm::{fit, FitConfig, FitResult};
use crate::data::{RandomSource, RegressionData};
use crate::error::{Error, Result};

/// All criteria are oriented so that larger is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Criterion {
    AIC,
    AICc,
    AIC3,
    AICu,
    AWE,
    BIC,
    CAIC,
    ICL,
}

impl Criterion {
    pub const ALL: [Criterion; 8] = [
        Criterion::AIC,
        Criterion::AICc,
        Criterion::AIC3,
        Criterion::AICu,
        Criterion::AWE,
        Criterion::BIC,
        Criterion::CAIC,
        Criterion::ICL,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::AIC => "AIC",
            Criterion::AICc => "AICc",
            Criterion::AIC3 => "AIC3",
            Criterion::AICu => "AICu",
            Criterion::AWE => "AWE",
            Criterion::BIC => "BIC",
            Criterion::CAIC => "CAIC",
            Criterion::ICL => "ICL",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown criterion {s:?}")))
    }
}

/// Free parameters of a CWM: weights, means, input covariances, regression
/// coefficients (with intercept) and output variances.
pub fn cwm_parameter_count(model: CovModelId, d: u64, g: u64) -> u64 {
    (g - 1) + g * d + param_count(model, d, g) + g * (d + 1) + g
}

pub fn count_parameters(fit: &FitResult) -> u64 {
    cwm_parameter_count(
        fit.params.cov_model,
        fit.params.dim() as u64,
        fit.n_components() as u64,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriteriaSet {
    values: Vec<(Criterion, Option<f64>)>,
    pub n_params: u64,
    pub loglik: f64,
    pub n_obs: usize,
}

impl CriteriaSet {
    /// `None` when the criterion is undefined for this (N, k).
    pub fn get(&self, c: Criterion) -> Option<f64> {
        self.values.iter().find(|(k, _)| *k == c).and_then(|(_, v)| *v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Criterion, Option<f64>)> + '_ {
        self.values.iter().copied()
    }
}

/// Criteria from their sufficient statistics. `assignment_log_resp` is
/// `sum_i ln r_{i, z_i}` at the hard labels `z`.
pub fn criteria_from_parts(
    loglik: f64,
    complete_loglik: f64,
    assignment_log_resp: f64,
    k: u64,
    n: usize,
) -> CriteriaSet {
    let kf = k as f64;
    let nf = n as f64;
    let ln_n = nf.ln();
    let bic = 2.0 * loglik - kf * ln_n;
    let aic = 2.0 * loglik - 2.0 * kf;
    let small_sample = (nf > kf + 1.0).then(|| {
        let aicc = aic - 2.0 * kf * (kf + 1.0) / (nf - kf - 1.0);
        (aicc, aicc - nf * (nf / (nf - kf - 1.0)).ln())
    });
    let values = Criterion::ALL
        .into_iter()
        .map(|c| {
            let v = match c {
                Criterion::AIC => Some(aic),
                Criterion::AICc => small_sample.map(|s| s.0),
                Criterion::AIC3 => Some(2.0 * loglik - 3.0 * kf),
                Criterion::AICu => small_sample.map(|s| s.1),
                Criterion::AWE => Some(2.0 * complete_loglik - 2.0 * kf * (1.5 + ln_n)),
                Criterion::BIC => Some(bic),
                Criterion::CAIC => Some(2.0 * loglik - kf * (1.0 + ln_n)),
                Criterion::ICL => Some(bic + 2.0 * assignment_log_resp),
            };
            (c, v)
        })
        .collect();
    CriteriaSet {
        values,
        n_params: k,
        loglik,
        n_obs: n,
    }
}

pub fn information_criteria(fit: &FitResult) -> CriteriaSet {
    let resp = &fit.responsibilities;
    let assignment: f64 = fit
        .hard_labels
        .iter()
        .enumerate()
        .map(|(i, &g)| resp.get(i, g - 1).ln())
        .sum();
    criteria_from_parts(
        fit.loglik(),
        fit.complete_loglik,
        assignment,
        count_parameters(fit),
        fit.n_obs(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub g_range: Vec<usize>,
    pub models: Vec<CovModelId>,
    pub criteria: Vec<Criterion>,
    pub fit: FitConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            g_range: (1..=8).collect(),
            models: CovModelId::ALL.to_vec(),
            criteria: Criterion::ALL.to_vec(),
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellOutcome {
    Fitted {
        criteria: CriteriaSet,
        fit: Box<FitResult>,
    },
    NotEstimated {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub g: usize,
    pub model: CovModelId,
    pub outcome: CellOutcome,
}

impl SweepCell {
    pub fn criteria(&self) -> Option<&CriteriaSet> {
        match &self.outcome {
            CellOutcome::Fitted { criteria, .. } => Some(criteria),
            CellOutcome::NotEstimated { .. } => None,
        }
    }

    pub fn fit(&self) -> Option<&FitResult> {
        match &self.outcome {
            CellOutcome::Fitted { fit, .. } => Some(fit),
            CellOutcome::NotEstimated { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Cells ordered by G, then by model in configuration order.
    pub cells: Vec<SweepCell>,
    pub criteria: Vec<Criterion>,
    /// Index into `cells` of the best successful cell per criterion.
    pub best: Vec<(Criterion, Option<usize>)>,
}

impl SweepResult {
    pub fn best_cell(&self, c: Criterion) -> Option<&SweepCell> {
        self.best
            .iter()
            .find(|(k, _)| *k == c)
            .and_then(|(_, i)| i.map(|i| &self.cells[i]))
    }

    pub fn n_failed(&self) -> usize {
        self.cells.iter().filter(|c| c.fit().is_none()).count()
    }

    /// One row per cell; failed cells carry status `Not Estimated` and a
    /// reason code, with empty numeric fields.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("G,model,status,reason,loglik,n_params");
        for c in &self.criteria {
            out.push(',');
            out.push_str(c.name());
        }
        out.push('\n');
        for cell in &self.cells {
            let _ = write!(out, "{},{}", cell.g, cell.model);
            match &cell.outcome {
                CellOutcome::Fitted { criteria, .. } => {
                    let _ = write!(out, ",ok,,{},{}", criteria.loglik, criteria.n_params);
                    for c in &self.criteria {
                        out.push(',');
                        if let Some(v) = criteria.get(*c) {
                            let _ = write!(out, "{v}");
                        }
                    }
                }
                CellOutcome::NotEstimated { reason } => {
                    let _ = write!(out, ",Not Estimated,{reason},,");
                    for _ in &self.criteria {
                        out.push(',');
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "{} cells, {} not estimated\n",
            self.cells.len(),
            self.n_failed()
        );
        for (c, idx) in &self.best {
            match idx {
                Some(i) => {
                    let cell = &self.cells[*i];
                    let v = cell.criteria().and_then(|s| s.get(*c)).unwrap_or(f64::NAN);
                    let _ = writeln!(out, "{c}: G={} {} ({v})", cell.g, cell.model);
                }
                None => {
                    let _ = writeln!(out, "{c}: undefined for every cell");
                }
            }
        }
        out
    }
}

/// Fits every (G, model) cell. Each cell draws from its own child stream
/// keyed on its grid position, so results do not depend on scheduling.
pub fn sweep(data: &RegressionData, cfg: &SweepConfig, rng: &RandomSource) -> Result<SweepResult> {
    if cfg.g_range.is_empty() || cfg.models.is_empty() || cfg.criteria.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs at least one G, one model and one criterion".into(),
        ));
    }
    let grid: Vec<(usize, CovModelId)> = cfg
        .g_range
        .iter()
        .flat_map(|&g| cfg.models.iter().map(move |&m| (g, m)))
        .collect();
    let cells: Vec<SweepCell> = grid
        .par_iter()
        .enumerate()
        .map(|(idx, &(g, model))| {
            let child = rng.split(idx as u64);
            let outcome = match fit(data, g, model, &cfg.fit, &child) {
                Ok(f) => CellOutcome::Fitted {
                    criteria: information_criteria(&f),
                    fit: Box::new(f),
                },
                Err(e) => CellOutcome::NotEstimated {
                    reason: e.reason_code(),
                },
            };
            SweepCell { g, model, outcome }
        })
        .collect();
    if cells.iter().all(|c| c.fit().is_none()) {
        return Err(Error::SweepFailed);
    }
    let best = cfg
        .criteria
        .iter()
        .map(|&c| {
            let mut best: Option<(usize, f64)> = None;
            for (i, cell) in cells.iter().enumerate() {
                if let Some(v) = cell.criteria().and_then(|s| s.get(c)) {
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((i, v));
                    }
                }
            }
            (c, best.map(|b| b.0))
        })
        .collect();
    Ok(SweepResult {
        cells,
        criteria: cfg.criteria.clone(),
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(cwm_parameter_count(CovModelId::VVV, 178, 5), 81_449);
        assert_eq!(cwm_parameter_count(CovModelId::EII, 1, 1), 5);
        for d in 1..6 {
            for g in 1..6 {
                let full = cwm_parameter_count(CovModelId::VVV, d, g);
                for m in CovModelId::ALL {
                    assert!(cwm_parameter_count(m, d, g) <= full);
                    assert!(cwm_parameter_count(m, d, g + 1) > cwm_parameter_count(m, d, g));
                }
            }
        }
    }

    #[test]
    fn zero_params_collapse() {
        let s = criteria_from_parts(-12.5, -13.0, 0.0, 0, 10);
        assert_eq!(s.get(Criterion::BIC), Some(-25.0));
        assert_eq!(s.get(Criterion::ICL), Some(-25.0));
        assert_eq!(s.get(Criterion::AIC), Some(-25.0));
    }

    #[test]
    fn small_sample_criteria_absent() {
        let s = criteria_from_parts(-1.0, -1.0, 0.0, 9, 10);
        assert_eq!(s.get(Criterion::AICc), None);
        assert_eq!(s.get(Criterion::AICu), None);
        assert!(s.get(Criterion::BIC).is_some());
    }

    #[test]
    fn criterion_names_round_trip() {
        for c in Criterion::ALL {
            assert_eq!(c.name().parse::<Criterion>().unwrap(), c);
        }
    }
}
