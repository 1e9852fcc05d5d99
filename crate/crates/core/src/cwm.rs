//! Linear Gaussian cluster-weighted model fitted by EM.
//!
//! The joint density of an input vector `x` and scalar response `y` is
//!
//! ```text
//! p(x, y) = sum_g pi_g N(y; b_g0 + b_g^T x, s2_g) N(x; mu_g, Sigma_g)
//! ```
//!
//! with `Sigma_g` restricted by one of the fourteen covariance structures.
//! All density arithmetic happens in log space.

use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::covariance::{mstep_covariances_warm, CovModelId, ScatterInput};
use crate::data::{RandomSource, RegressionData};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Components lighter than this fraction of N count as empty.
const EMPTY_FRACTION: f64 = 1e-6;
const MAX_RESEEDS: usize = 3;
const OUTPUT_VAR_FLOOR: f64 = 1e-10;
const NORMAL_EQ_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CwmParams {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    /// Intercept first, then one slope per input.
    pub reg_coeffs: Vec<DVector<f64>>,
    pub output_vars: Vec<f64>,
    pub cov_model: CovModelId,
}

impl CwmParams {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, DVector::len)
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.n_components();
        let d = self.dim();
        let ok_lengths = g > 0
            && self.means.len() == g
            && self.covariances.len() == g
            && self.reg_coeffs.len() == g
            && self.output_vars.len() == g
            && self.means.iter().all(|m| m.len() == d)
            && self.covariances.iter().all(|s| s.shape() == (d, d))
            && self.reg_coeffs.iter().all(|b| b.len() == d + 1);
        if !ok_lengths {
            return Err(Error::InvalidArgument("inconsistent CWM parameter shapes".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 || self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "weights must be positive and sum to one (sum = {total})"
            )));
        }
        if self.output_vars.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("output variances must be positive".into()));
        }
        Ok(())
    }

    /// `b_g0 + b_g^T x`.
    pub fn predict_response(&self, g: usize, x: &DVector<f64>) -> f64 {
        affine(&self.reg_coeffs[g], x.as_slice())
    }
}

fn affine(beta: &DVector<f64>, x: &[f64]) -> f64 {
    beta[0] + x.iter().zip(beta.iter().skip(1)).map(|(a, b)| a * b).sum::<f64>()
}

/// Cached Cholesky factor of one input covariance.
struct GaussianCache {
    chol: Cholesky<f64, nalgebra::Dyn>,
    logdet: f64,
}

impl GaussianCache {
    fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(sigma.clone()).ok_or(Error::NotPositiveDefinite)?;
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { chol, logdet })
    }

    fn log_density(&self, x: &[f64], mean: &DVector<f64>) -> f64 {
        let d = mean.len();
        let diff = DVector::from_iterator(d, x.iter().zip(mean.iter()).map(|(a, b)| a - b));
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("cholesky factor has a positive diagonal");
        -0.5 * (d as f64 * LN_2PI + self.logdet + z.norm_squared())
    }
}

pub fn log_input_density(x: &DVector<f64>, mean: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    Ok(GaussianCache::new(sigma)?.log_density(x.as_slice(), mean))
}

pub fn input_density(x: &DVector<f64>, mean: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    log_input_density(x, mean, sigma).map(f64::exp)
}

pub fn log_output_density(y: f64, x: &DVector<f64>, beta: &DVector<f64>, var: f64) -> f64 {
    let r = y - affine(beta, x.as_slice());
    -0.5 * (LN_2PI + var.ln() + r * r / var)
}

pub fn output_density(y: f64, x: &DVector<f64>, beta: &DVector<f64>, var: f64) -> f64 {
    log_output_density(y, x, beta, var).exp()
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Posterior component probabilities, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    values: DMatrix<f64>,
}

impl Responsibilities {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        for i in 0..values.nrows() {
            let s: f64 = values.row(i).iter().sum();
            if (s - 1.0).abs() > 1e-9 || values.row(i).iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidArgument(format!(
                    "responsibility row {i} is not a distribution"
                )));
            }
        }
        Ok(Self { values })
    }

    /// One-hot rows from 1-based labels.
    pub fn from_labels(labels: &[usize], g: usize) -> Result<Self> {
        if labels.iter().any(|&l| l == 0 || l > g) {
            return Err(Error::InvalidArgument(format!("labels must lie in 1..={g}")));
        }
        Ok(Self {
            values: DMatrix::from_fn(labels.len(), g, |i, k| f64::from(labels[i] == k + 1)),
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, i: usize, g: usize) -> f64 {
        self.values[(i, g)]
    }

    pub fn masses(&self) -> Vec<f64> {
        (0..self.n_components())
            .map(|g| self.values.column(g).sum())
            .collect()
    }

    /// Row argmax as 1-based labels; ties go to the lowest component.
    pub fn hard_labels(&self) -> Vec<usize> {
        (0..self.n_rows())
            .map(|i| argmax(self.values.row(i).iter().copied()) + 1)
            .collect()
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, v) in values.enumerate() {
        if v > best.1 {
            best = (k, v);
        }
    }
    best.0
}

/// `l_ig = ln pi_g + ln N(x_i; mu_g, Sigma_g) + ln N(y_i; x~_i^T b_g, s2_g)`.
pub fn log_joint(data: &RegressionData, params: &CwmParams) -> Result<DMatrix<f64>> {
    params.validate()?;
    if params.dim() != data.d() {
        return Err(Error::InvalidArgument(format!(
            "parameters are {}-dimensional, data has {} columns",
            params.dim(),
            data.d()
        )));
    }
    let g_count = params.n_components();
    let caches = params
        .covariances
        .iter()
        .enumerate()
        .map(|(g, s)| {
            GaussianCache::new(s).map_err(|_| Error::DegenerateComponent {
                component: g + 1,
                detail: "input covariance is not positive definite".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = data.n();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x: Vec<f64> = data.x.values().row(i).iter().copied().collect();
            (0..g_count)
                .map(|g| {
                    let r = data.y[i] - affine(&params.reg_coeffs[g], &x);
                    let var = params.output_vars[g];
                    params.weights[g].ln()
                        + caches[g].log_density(&x, &params.means[g])
                        - 0.5 * (LN_2PI + var.ln() + r * r / var)
                })
                .collect()
        })
        .collect();
    Ok(DMatrix::from_fn(n, g_count, |i, g| rows[i][g]))
}

/// Responsibilities and observed-data log-likelihood at `params`.
pub fn e_step(data: &RegressionData, params: &CwmParams) -> Result<(Responsibilities, f64)> {
    let (resp, ll, _) = e_step_full(data, params)?;
    Ok((resp, ll))
}

fn e_step_full(
    data: &RegressionData,
    params: &CwmParams,
) -> Result<(Responsibilities, f64, DMatrix<f64>)> {
    let lj = log_joint(data, params)?;
    let (n, g_count) = lj.shape();
    let mut resp = DMatrix::zeros(n, g_count);
    let mut loglik = 0.0;
    for i in 0..n {
        let row: Vec<f64> = lj.row(i).iter().copied().collect();
        let lse = logsumexp(&row);
        if !lse.is_finite() {
            return Err(Error::UnsupportedPoint { row: i });
        }
        loglik += lse;
        let mut s = 0.0;
        for g in 0..g_count {
            let r = (row[g] - lse).exp();
            resp[(i, g)] = r;
            s += r;
        }
        for g in 0..g_count {
            resp[(i, g)] /= s;
        }
    }
    Ok((Responsibilities { values: resp }, loglik, lj))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MStep {
    pub params: CwmParams,
    /// A covariance ridge or normal-equation ridge was needed.
    pub regularized: bool,
}

pub fn m_step(data: &RegressionData, resp: &Responsibilities, cov_model: CovModelId) -> Result<MStep> {
    m_step_warm(data, resp, cov_model, None)
}

/// M-step; `previous` (constraint-satisfying covariances from the last
/// iteration) seeds the iterative covariance estimators.
pub fn m_step_warm(
    data: &RegressionData,
    resp: &Responsibilities,
    cov_model: CovModelId,
    previous: Option<&[DMatrix<f64>]>,
) -> Result<MStep> {
    let n = data.n();
    let d = data.d();
    if resp.n_rows() != n {
        return Err(Error::InvalidArgument("responsibilities do not match data".into()));
    }
    let g_count = resp.n_components();
    let masses = resp.masses();
    for (g, &m) in masses.iter().enumerate() {
        if !(m >= EMPTY_FRACTION * n as f64) {
            return Err(Error::EmptyComponent {
                component: g + 1,
                reseeds: 0,
            });
        }
    }
    for (g, &m) in masses.iter().enumerate() {
        if m < (d + 2) as f64 {
            return Err(Error::DegenerateComponent {
                component: g + 1,
                detail: format!("mass {m:.3} cannot support {} regression parameters and a variance", d + 1),
            });
        }
    }
    let total: f64 = masses.iter().sum();
    let weights: Vec<f64> = masses.iter().map(|m| m / total).collect();

    let x = data.x.values();
    let mut means = Vec::with_capacity(g_count);
    let mut scatters = Vec::with_capacity(g_count);
    for g in 0..g_count {
        let r = resp.values.column(g);
        let mean = (x.transpose() * r) / masses[g];
        let mut w = DMatrix::zeros(d, d);
        for i in 0..n {
            let diff = x.row(i).transpose() - &mean;
            w.syger(r[i], &diff, &diff, 1.0);
        }
        w.fill_upper_triangle_with_lower_triangle();
        means.push(mean);
        scatters.push(w);
    }
    let cov = mstep_covariances_warm(cov_model, &ScatterInput::new(scatters, masses.clone())?, previous)?;
    let mut regularized = cov.regularized;

    let var_floor = OUTPUT_VAR_FLOOR * response_variance(&data.y).max(1.0e-300_f64.max(f64::EPSILON));
    let mut reg_coeffs = Vec::with_capacity(g_count);
    let mut output_vars = Vec::with_capacity(g_count);
    for g in 0..g_count {
        let r: Vec<f64> = resp.values.column(g).iter().copied().collect();
        let (beta, ridged) = weighted_least_squares(x, &data.y, &r)?;
        regularized |= ridged;
        let sse: f64 = (0..n)
            .map(|i| {
                let e = data.y[i] - affine(&beta, x.row(i).transpose().as_slice());
                r[i] * e * e
            })
            .sum();
        output_vars.push((sse / masses[g]).max(var_floor));
        reg_coeffs.push(beta);
    }

    Ok(MStep {
        params: CwmParams {
            weights,
            means,
            covariances: cov.covariances,
            reg_coeffs,
            output_vars,
            cov_model,
        },
        regularized,
    })
}

/// Population variance; the output-variance floor is relative to it.
fn response_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Solves `(X~^T R X~) b = X~^T R y` with `X~ = [1, X]`. Adds a small ridge
/// when the system is not positive definite and reports it.
pub fn weighted_least_squares(
    x: &DMatrix<f64>,
    y: &[f64],
    weights: &[f64],
) -> Result<(DVector<f64>, bool)> {
    let (n, d) = x.shape();
    let p = d + 1;
    let mut a = DMatrix::zeros(p, p);
    let mut b = DVector::zeros(p);
    let mut xt = DVector::zeros(p);
    for i in 0..n {
        xt[0] = 1.0;
        for k in 0..d {
            xt[k + 1] = x[(i, k)];
        }
        a.syger(weights[i], &xt, &xt, 1.0);
        b.axpy(weights[i] * y[i], &xt, 1.0);
    }
    a.fill_upper_triangle_with_lower_triangle();
    if let Some(ch) = Cholesky::new(a.clone()) {
        let sol = ch.solve(&b);
        if sol.iter().all(|v| v.is_finite()) {
            return Ok((sol, false));
        }
    }
    let scale = (a.trace() / p as f64).max(f64::MIN_POSITIVE);
    let ridged = a + DMatrix::identity(p, p) * (NORMAL_EQ_RIDGE * scale);
    let ch = Cholesky::new(ridged).ok_or_else(|| Error::DegenerateComponent {
        component: 0,
        detail: "normal equations singular after ridge".into(),
    })?;
    Ok((ch.solve(&b), true))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitStrategy {
    /// Uniform weights, means drawn from the data rows, identity covariances.
    #[default]
    RandomRows,
    /// As above, but means refined by ten Lloyd iterations.
    KmeansLike,
}

impl FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_rows" | "random" => Ok(Self::RandomRows),
            "kmeans_like" | "kmeans" => Ok(Self::KmeansLike),
            other => Err(Error::InvalidArgument(format!("unknown init strategy {other:?}"))),
        }
    }
}

impl InitStrategy {
    pub fn name(self) -> &'static str {
        match self {
            Self::RandomRows => "random_rows",
            Self::KmeansLike => "kmeans_like",
        }
    }
}

pub fn initialize(
    data: &RegressionData,
    g_count: usize,
    strategy: InitStrategy,
    cov_model: CovModelId,
    rng: &mut RandomSource,
) -> Result<CwmParams> {
    let n = data.n();
    let d = data.d();
    if g_count == 0 || g_count > n {
        return Err(Error::InvalidArgument(format!(
            "component count {g_count} must lie in 1..={n}"
        )));
    }
    let x = data.x.values();
    let picks = sample(rng, n, g_count).into_vec();
    let mut means: Vec<DVector<f64>> = picks.iter().map(|&i| x.row(i).transpose()).collect();
    if strategy == InitStrategy::KmeansLike {
        lloyd(x, &mut means, 10);
    }

    let (global, _) = weighted_least_squares(x, &data.y, &vec![1.0; n])?;
    let var_y = response_variance(&data.y);
    let var0 = if var_y > 0.0 { var_y } else { OUTPUT_VAR_FLOOR };
    let reg_coeffs = (0..g_count)
        .map(|_| {
            global.map(|c| {
                let sd = 0.1 * c.abs();
                if sd > 0.0 {
                    c + Normal::new(0.0, sd).expect("positive sd").sample(rng)
                } else {
                    c
                }
            })
        })
        .collect();

    Ok(CwmParams {
        weights: vec![1.0 / g_count as f64; g_count],
        means,
        covariances: vec![DMatrix::identity(d, d); g_count],
        reg_coeffs,
        output_vars: vec![var0; g_count],
        cov_model,
    })
}

fn lloyd(x: &DMatrix<f64>, centers: &mut [DVector<f64>], iterations: usize) {
    let n = x.nrows();
    for _ in 0..iterations {
        let assign: Vec<usize> = (0..n)
            .map(|i| {
                let row = x.row(i).transpose();
                argmax(centers.iter().map(|c| -(&row - c).norm_squared()))
            })
            .collect();
        for (k, c) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == k).collect();
            if !members.is_empty() {
                let sum = members
                    .iter()
                    .fold(DVector::zeros(x.ncols()), |acc, &i| acc + x.row(i).transpose());
                *c = sum / members.len() as f64;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub n_starts: usize,
    pub max_iter: usize,
    /// Relative log-likelihood change `|l_t - l_{t-1}| / (1 + |l_t|)`.
    pub tol: f64,
    pub init: InitStrategy,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_starts: 5,
            max_iter: 500,
            tol: 1e-8,
            init: InitStrategy::RandomRows,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: CwmParams,
    /// Observed-data log-likelihood after initialization and after every
    /// M-step (restarted after an empty-component re-seed).
    pub loglik_trace: Vec<f64>,
    pub responsibilities: Responsibilities,
    pub converged: bool,
    pub n_iterations: usize,
    pub hard_labels: Vec<usize>,
    pub regularized: bool,
    /// `sum_i l_{i, z_i}` at the hard labels.
    pub complete_loglik: f64,
    pub reseeds: usize,
    /// Index of the winning start.
    pub start: usize,
    pub failed_starts: usize,
}

impl FitResult {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }

    pub fn n_components(&self) -> usize {
        self.params.n_components()
    }

    pub fn n_obs(&self) -> usize {
        self.responsibilities.n_rows()
    }
}

/// Runs `cfg.n_starts` EM runs (each with its own child stream of `rng`) and
/// keeps the one with the highest final log-likelihood.
pub fn fit(
    data: &RegressionData,
    g_count: usize,
    cov_model: CovModelId,
    cfg: &FitConfig,
    rng: &RandomSource,
) -> Result<FitResult> {
    if cfg.n_starts == 0 || cfg.max_iter == 0 || !(cfg.tol > 0.0) {
        return Err(Error::InvalidArgument(
            "n_starts and max_iter must be positive and tol > 0".into(),
        ));
    }
    if g_count == 0 || g_count > data.n() {
        return Err(Error::InvalidArgument(format!(
            "component count {g_count} must lie in 1..={}",
            data.n()
        )));
    }
    let model = cov_model.effective_for_dim(data.d());
    let runs: Vec<Result<FitResult>> = (0..cfg.n_starts)
        .into_par_iter()
        .map(|s| {
            let mut child = rng.split(s as u64);
            run_em(data, g_count, model, cfg, &mut child).map(|mut r| {
                r.start = s;
                r
            })
        })
        .collect();

    let mut best: Option<FitResult> = None;
    let mut reasons = Vec::new();
    for run in runs {
        match run {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.loglik() > b.loglik()) {
                    best = Some(r);
                }
            }
            Err(e) => reasons.push(e.reason_code()),
        }
    }
    match best {
        Some(mut b) => {
            b.failed_starts = reasons.len();
            Ok(b)
        }
        None => Err(Error::AllStartsFailed {
            starts: cfg.n_starts,
            reasons: reasons.join(";"),
        }),
    }
}

/// One EM run from a fresh initialization.
pub fn run_em(
    data: &RegressionData,
    g_count: usize,
    cov_model: CovModelId,
    cfg: &FitConfig,
    rng: &mut RandomSource,
) -> Result<FitResult> {
    let mut params = initialize(data, g_count, cfg.init, cov_model, rng)?;
    let (mut resp, ll, mut lj) = e_step_full(data, &params)?;
    let mut trace = vec![ll];
    let mut converged = false;
    let mut regularized = false;
    let mut warm = true;
    let mut reseeds = 0;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let previous = warm.then_some(params.covariances.as_slice());
        match m_step_warm(data, &resp, cov_model, previous) {
            Ok(ms) => {
                warm = !ms.regularized;
                regularized |= ms.regularized;
                params = ms.params;
            }
            Err(Error::EmptyComponent { component, .. }) => {
                reseeds += 1;
                if reseeds > MAX_RESEEDS {
                    return Err(Error::EmptyComponent { component, reseeds });
                }
                reseed(&mut params, component - 1, data, &resp);
                warm = false;
                let (r, ll, l) = e_step_full(data, &params)?;
                resp = r;
                lj = l;
                trace = vec![ll];
                continue;
            }
            Err(e) => return Err(e),
        }
        let (r, ll, l) = e_step_full(data, &params)?;
        resp = r;
        lj = l;
        let prev = *trace.last().unwrap();
        trace.push(ll);
        if (ll - prev).abs() / (1.0 + ll.abs()) < cfg.tol {
            converged = true;
            break;
        }
    }

    let hard_labels = resp.hard_labels();
    let complete_loglik = hard_labels
        .iter()
        .enumerate()
        .map(|(i, &g)| lj[(i, g - 1)])
        .sum();
    Ok(FitResult {
        params,
        loglik_trace: trace,
        responsibilities: resp,
        converged,
        n_iterations: iterations,
        hard_labels,
        regularized,
        complete_loglik,
        reseeds,
        start: 0,
        failed_starts: 0,
    })
}

/// Moves an emptied component onto the worst-explained observation.
fn reseed(params: &mut CwmParams, g: usize, data: &RegressionData, resp: &Responsibilities) {
    let d = data.d();
    let worst = argmax((0..resp.n_rows()).map(|i| -resp.values.row(i).max()));
    params.means[g] = data.x.point(worst);
    params.covariances[g] = DMatrix::identity(d, d);
    let g_count = params.n_components();
    params.weights[g] = params.weights[g].max(1.0 / g_count as f64);
    let total: f64 = params.weights.iter().sum();
    for w in &mut params.weights {
        *w /= total;
    }
}

/// MAP component (1-based) of each observation.
pub fn predict_cluster(params: &CwmParams, data: &RegressionData) -> Result<Vec<usize>> {
    let lj = log_joint(data, params)?;
    Ok((0..lj.nrows())
        .map(|i| argmax(lj.row(i).iter().copied()) + 1)
        .collect())
}
