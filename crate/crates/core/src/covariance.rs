//! The fourteen parsimonious covariance structures built on the eigenvalue
//! decomposition `Sigma_g = lambda_g D_g A_g D_g^T`, where `lambda_g` is the
//! volume, `A_g` the (unit-determinant, diagonal) shape and `D_g` the
//! orientation. Each three-letter code says whether volume, shape and
//! orientation are Equal, Variable or fixed to the Identity across
//! components.
//!
//! The constrained M-step maximizes
//!
//! ```text
//! Q(Sigma) = -1/2 sum_g [ n_g (d ln 2pi + ln|Sigma_g|) + tr(Sigma_g^-1 W_g) ]
//! ```
//!
//! over the covariance sets allowed by the code, given per-component
//! weighted scatter matrices `W_g` and masses `n_g`. VEI, VEE, VEV, EVE and
//! VVE have no closed form and are solved by alternating (or
//! majorize-minimize) inner iterations.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub const INNER_TOL: f64 = 1e-8;
pub const INNER_MAX_ITER: usize = 200;
/// Relative floor for shape entries before renormalizing to unit determinant.
const SHAPE_FLOOR: f64 = 1e-12;
const RIDGE_TRIGGER: f64 = 1e-10;
const RIDGE_SIZE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CovModelId {
    EII,
    VII,
    EEI,
    VEI,
    EVI,
    VVI,
    EEE,
    VEE,
    EVE,
    EEV,
    VVE,
    VEV,
    EVV,
    VVV,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Volume {
    Equal,
    Variable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Identity,
    Equal,
    Variable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Coordinate axes (diagonal and spherical families).
    AxisAligned,
    Equal,
    Variable,
}

impl CovModelId {
    pub const ALL: [CovModelId; 14] = [
        CovModelId::EII,
        CovModelId::VII,
        CovModelId::EEI,
        CovModelId::VEI,
        CovModelId::EVI,
        CovModelId::VVI,
        CovModelId::EEE,
        CovModelId::VEE,
        CovModelId::EVE,
        CovModelId::EEV,
        CovModelId::VVE,
        CovModelId::VEV,
        CovModelId::EVV,
        CovModelId::VVV,
    ];

    pub fn code(self) -> &'static str {
        use CovModelId::*;
        match self {
            EII => "EII",
            VII => "VII",
            EEI => "EEI",
            VEI => "VEI",
            EVI => "EVI",
            VVI => "VVI",
            EEE => "EEE",
            VEE => "VEE",
            EVE => "EVE",
            EEV => "EEV",
            VVE => "VVE",
            VEV => "VEV",
            EVV => "EVV",
            VVV => "VVV",
        }
    }

    pub fn volume(self) -> Volume {
        match self.code().as_bytes()[0] {
            b'E' => Volume::Equal,
            _ => Volume::Variable,
        }
    }

    pub fn shape(self) -> Shape {
        match self.code().as_bytes()[1] {
            b'I' => Shape::Identity,
            b'E' => Shape::Equal,
            _ => Shape::Variable,
        }
    }

    pub fn orientation(self) -> Orientation {
        match self.code().as_bytes()[2] {
            b'I' => Orientation::AxisAligned,
            b'E' => Orientation::Equal,
            _ => Orientation::Variable,
        }
    }

    /// In one dimension every structure collapses to EII or VII.
    pub fn effective_for_dim(self, d: usize) -> CovModelId {
        if d > 1 {
            return self;
        }
        match self.volume() {
            Volume::Equal => CovModelId::EII,
            Volume::Variable => CovModelId::VII,
        }
    }

    fn is_iterative(self) -> bool {
        use CovModelId::*;
        matches!(self, VEI | VEE | EVE | VVE | VEV)
    }
}

impl fmt::Display for CovModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for CovModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        CovModelId::ALL
            .into_iter()
            .find(|m| m.code() == up)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown covariance model {s:?}")))
    }
}

/// Number of free parameters in the G covariance matrices of a model.
pub fn param_count(model: CovModelId, d: u64, g: u64) -> u64 {
    use CovModelId::*;
    let orient = d * (d - 1) / 2;
    match model {
        EII => 1,
        VII => g,
        EEI => d,
        VEI => g + (d - 1),
        EVI => 1 + g * (d - 1),
        VVI => g * d,
        EEE => d * (d + 1) / 2,
        VEE => g + (d + 2) * (d - 1) / 2,
        EVE => 1 + (d + 2 * g) * (d - 1) / 2,
        EEV => 1 + (d - 1) + g * orient,
        VVE => g + (d + 2 * g) * (d - 1) / 2,
        VEV => g + (d - 1) + g * orient,
        EVV => 1 + g * (d + 2) * (d - 1) / 2,
        VVV => g * (d * (d + 1) / 2),
    }
}

/// `Sigma = volume * D diag(shape) D^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub volume: f64,
    pub orientation: DMatrix<f64>,
    /// Diagonal of A, descending, product one.
    pub shape: DVector<f64>,
}

/// Eigenvalues in descending order with canonically signed eigenvectors:
/// each vector's largest-magnitude entry (lowest index on ties) is positive.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let d = m.nrows();
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(d, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(d, d);
    for (c, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let mut pivot = 0;
        for r in 1..d {
            if v[r].abs() > v[pivot].abs() {
                pivot = r;
            }
        }
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(c, &v);
    }
    (values, vectors)
}

pub fn decompose(sigma: &DMatrix<f64>) -> Result<EigenDecomposition> {
    let d = sigma.nrows();
    if d == 0 || sigma.ncols() != d {
        return Err(Error::InvalidArgument("covariance must be square and non-empty".into()));
    }
    let (values, mut vectors) = sorted_eigen(sigma);
    if values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::NotPositiveDefinite);
    }
    let volume = (values.iter().map(|v| v.ln()).sum::<f64>() / d as f64).exp();
    let shape = values.map(|v| v / volume);
    // An isotropic matrix has no preferred axes; report the identity.
    if values[0] - values[d - 1] <= 1e-12 * values[0] {
        vectors = DMatrix::identity(d, d);
    }
    Ok(EigenDecomposition {
        volume,
        orientation: vectors,
        shape,
    })
}

pub fn compose(dec: &EigenDecomposition) -> DMatrix<f64> {
    compose_parts(dec.volume, &dec.orientation, &dec.shape)
}

fn compose_parts(volume: f64, orientation: &DMatrix<f64>, diag: &DVector<f64>) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(orientation.nrows(), orientation.ncols(), |r, c| {
        orientation[(r, c)] * diag[c] * volume
    });
    symmetrized(&(scaled * orientation.transpose()))
}

fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Weighted scatter matrices `W_g = sum_i r_ig (x_i - mu_g)(x_i - mu_g)^T` and
/// masses `n_g = sum_i r_ig`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterInput {
    scatters: Vec<DMatrix<f64>>,
    masses: Vec<f64>,
}

impl ScatterInput {
    pub fn new(scatters: Vec<DMatrix<f64>>, masses: Vec<f64>) -> Result<Self> {
        if scatters.is_empty() || scatters.len() != masses.len() {
            return Err(Error::InvalidArgument(
                "need one scatter matrix per component mass".into(),
            ));
        }
        let d = scatters[0].nrows();
        for (g, w) in scatters.iter().enumerate() {
            if w.nrows() != d || w.ncols() != d {
                return Err(Error::InvalidArgument(format!("scatter {g} is not {d}x{d}")));
            }
            let scale = w.amax().max(1.0);
            if (w - w.transpose()).amax() > 1e-12 * scale {
                return Err(Error::InvalidArgument(format!("scatter {g} is not symmetric")));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("scatter {g} is not finite")));
            }
        }
        if masses.iter().any(|&m| !(m >= 0.0)) || !(masses.iter().sum::<f64>() > 0.0) {
            return Err(Error::InvalidArgument(
                "component masses must be non-negative with positive total".into(),
            ));
        }
        Ok(Self { scatters, masses })
    }

    pub fn dim(&self) -> usize {
        self.scatters[0].nrows()
    }

    pub fn n_components(&self) -> usize {
        self.scatters.len()
    }

    pub fn scatters(&self) -> &[DMatrix<f64>] {
        &self.scatters
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    fn pooled(&self) -> DMatrix<f64> {
        let d = self.dim();
        self.scatters.iter().fold(DMatrix::zeros(d, d), |acc, w| acc + w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovEstimate {
    pub covariances: Vec<DMatrix<f64>>,
    /// A ridge was added to at least one component.
    pub regularized: bool,
    pub inner_iterations: usize,
}

/// `Q` restricted to the covariance terms, for a given covariance set.
pub fn gaussian_q(covariances: &[DMatrix<f64>], scatter: &ScatterInput) -> Result<f64> {
    let d = scatter.dim() as f64;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut q = 0.0;
    for (g, sigma) in covariances.iter().enumerate() {
        let chol = Cholesky::new(sigma.clone()).ok_or(Error::NotPositiveDefinite)?;
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let tr = chol.solve(&scatter.scatters[g]).trace();
        q -= 0.5 * (scatter.masses[g] * (d * ln2pi + logdet) + tr);
    }
    Ok(q)
}

/// `sum_g [n_g ln|Sigma_g| + tr(Sigma_g^-1 W_g)]`, i.e. `-2Q` up to a constant.
fn objective(covariances: &[DMatrix<f64>], scatter: &ScatterInput) -> f64 {
    let d = scatter.dim() as f64;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    match gaussian_q(covariances, scatter) {
        Ok(q) => -2.0 * q - scatter.total_mass() * d * ln2pi,
        Err(_) => f64::INFINITY,
    }
}

pub fn mstep_covariances(model: CovModelId, scatter: &ScatterInput) -> Result<CovEstimate> {
    mstep_covariances_warm(model, scatter, None)
}

/// Constrained covariance M-step. `previous`, when given, must satisfy the
/// model's constraints; iterative models start from it so the returned set
/// never scores below it.
pub fn mstep_covariances_warm(
    model: CovModelId,
    scatter: &ScatterInput,
    previous: Option<&[DMatrix<f64>]>,
) -> Result<CovEstimate> {
    let d = scatter.dim();
    let model = model.effective_for_dim(d);
    for (g, &n_g) in scatter.masses.iter().enumerate() {
        if !(n_g > 0.0) {
            return Err(Error::DegenerateComponent {
                component: g + 1,
                detail: "zero responsibility mass".into(),
            });
        }
    }
    let previous = previous.filter(|p| p.len() == scatter.n_components());
    let (mut covs, inner) = estimate(model, scatter, previous)?;

    if let (true, Some(prev)) = (model.is_iterative(), previous) {
        if objective(prev, scatter) < objective(&covs, scatter) {
            covs = prev.to_vec();
        }
    }

    let mut regularized = false;
    for (g, sigma) in covs.iter_mut().enumerate() {
        let scale = sigma.trace() / d as f64;
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::DegenerateComponent {
                component: g + 1,
                detail: "covariance has zero trace".into(),
            });
        }
        let min_eig = SymmetricEigen::new(sigma.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < RIDGE_TRIGGER * scale {
            *sigma += DMatrix::identity(d, d) * (RIDGE_SIZE * scale);
            regularized = true;
        }
        if Cholesky::new(sigma.clone()).is_none() {
            return Err(Error::DegenerateComponent {
                component: g + 1,
                detail: "covariance singular after ridge".into(),
            });
        }
    }
    Ok(CovEstimate {
        covariances: covs,
        regularized,
        inner_iterations: inner,
    })
}

/// Returns `(det(diag)^(1/d), diag / det^(1/d))` after flooring small entries.
fn normalize_shape(diag: &DVector<f64>) -> (f64, DVector<f64>) {
    let d = diag.len() as f64;
    let top = diag.max().max(f64::MIN_POSITIVE);
    let floored = diag.map(|v| v.max(SHAPE_FLOOR * top));
    let root = (floored.iter().map(|v| v.ln()).sum::<f64>() / d).exp();
    (root, floored / root)
}

fn diag_matrix(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(v)
}

fn converged(old: f64, new: f64) -> bool {
    (old - new).abs() <= INNER_TOL * (1.0 + new.abs())
}

fn estimate(
    model: CovModelId,
    s: &ScatterInput,
    previous: Option<&[DMatrix<f64>]>,
) -> Result<(Vec<DMatrix<f64>>, usize)> {
    use CovModelId::*;
    let d = s.dim();
    let g_count = s.n_components();
    let df = d as f64;
    let total = s.total_mass();
    let w = &s.scatters;
    let n = &s.masses;
    let ident = DMatrix::<f64>::identity(d, d);

    let covs = match model {
        EII => {
            let lambda = s.pooled().trace() / (total * df);
            vec![&ident * lambda; g_count]
        }
        VII => (0..g_count)
            .map(|g| &ident * (w[g].trace() / (df * n[g])))
            .collect(),
        EEI => {
            let sigma = diag_matrix(&s.pooled().diagonal()) / total;
            vec![sigma; g_count]
        }
        VEI => return Ok(vei(s, previous)),
        EVI => {
            let parts: Vec<(f64, DVector<f64>)> =
                w.iter().map(|wg| normalize_shape(&wg.diagonal())).collect();
            let lambda = parts.iter().map(|(r, _)| r).sum::<f64>() / total;
            parts
                .iter()
                .map(|(_, b)| diag_matrix(b) * lambda)
                .collect()
        }
        VVI => (0..g_count)
            .map(|g| diag_matrix(&w[g].diagonal()) / n[g])
            .collect(),
        EEE => vec![symmetrized(&(s.pooled() / total)); g_count],
        VEE => return Ok(vee(s, previous)),
        EVE | VVE => return Ok(common_orientation(model, s, previous)),
        EEV => {
            let eigs: Vec<(DVector<f64>, DMatrix<f64>)> = w.iter().map(sorted_eigen).collect();
            let summed = eigs
                .iter()
                .fold(DVector::zeros(d), |acc, (vals, _)| acc + vals.map(|v| v.max(0.0)));
            let (root, a) = normalize_shape(&summed);
            let lambda = root / total;
            eigs.iter()
                .map(|(_, vecs)| compose_parts(lambda, vecs, &a))
                .collect()
        }
        VEV => return Ok(vev(s, previous)),
        EVV => {
            let parts: Vec<(f64, DVector<f64>, DMatrix<f64>)> = w
                .iter()
                .map(|wg| {
                    let (vals, vecs) = sorted_eigen(wg);
                    let (root, a) = normalize_shape(&vals.map(|v| v.max(0.0)));
                    (root, a, vecs)
                })
                .collect();
            let lambda = parts.iter().map(|(r, _, _)| r).sum::<f64>() / total;
            parts
                .iter()
                .map(|(_, a, vecs)| compose_parts(lambda, vecs, a))
                .collect()
        }
        VVV => (0..g_count)
            .map(|g| symmetrized(&(&w[g] / n[g])))
            .collect(),
    };
    Ok((covs, 0))
}

/// `Sigma_g = lambda_g B`, B diagonal with unit determinant.
fn vei(s: &ScatterInput, previous: Option<&[DMatrix<f64>]>) -> (Vec<DMatrix<f64>>, usize) {
    let d = s.dim();
    let df = d as f64;
    let mut b = match previous {
        Some(p) => normalize_shape(&p[0].diagonal()).1,
        None => normalize_shape(&s.pooled().diagonal()).1,
    };
    let mut lambdas = vec![1.0; s.n_components()];
    let mut last = f64::INFINITY;
    let mut iters = 0;
    for it in 1..=INNER_MAX_ITER {
        iters = it;
        let mut obj = 0.0;
        for (g, wg) in s.scatters.iter().enumerate() {
            let tr: f64 = (0..d).map(|k| wg[(k, k)] / b[k]).sum();
            lambdas[g] = (tr / (df * s.masses[g])).max(f64::MIN_POSITIVE);
            obj += s.masses[g] * df * (lambdas[g].ln() + 1.0);
        }
        let weighted = s
            .scatters
            .iter()
            .zip(&lambdas)
            .fold(DVector::zeros(d), |acc, (wg, l)| acc + wg.diagonal() / *l);
        b = normalize_shape(&weighted).1;
        if converged(last, obj) {
            break;
        }
        last = obj;
    }
    let covs = lambdas.iter().map(|l| diag_matrix(&b) * *l).collect();
    (covs, iters)
}

/// `Sigma_g = lambda_g C`, C a full matrix with unit determinant.
fn vee(s: &ScatterInput, previous: Option<&[DMatrix<f64>]>) -> (Vec<DMatrix<f64>>, usize) {
    let d = s.dim();
    let df = d as f64;
    let unit_det = |m: &DMatrix<f64>| -> DMatrix<f64> {
        let (vals, vecs) = sorted_eigen(m);
        let (_, a) = normalize_shape(&vals.map(|v| v.max(0.0)));
        compose_parts(1.0, &vecs, &a)
    };
    let mut c = match previous {
        Some(p) => unit_det(&p[0]),
        None => unit_det(&s.pooled()),
    };
    let mut lambdas = vec![1.0; s.n_components()];
    let mut last = f64::INFINITY;
    let mut iters = 0;
    for it in 1..=INNER_MAX_ITER {
        iters = it;
        let c_inv = match Cholesky::new(c.clone()) {
            Some(ch) => ch.inverse(),
            None => break,
        };
        let mut obj = 0.0;
        for (g, wg) in s.scatters.iter().enumerate() {
            let tr = (wg * &c_inv).trace();
            lambdas[g] = (tr / (df * s.masses[g])).max(f64::MIN_POSITIVE);
            obj += s.masses[g] * df * (lambdas[g].ln() + 1.0);
        }
        let weighted = s
            .scatters
            .iter()
            .zip(&lambdas)
            .fold(DMatrix::zeros(d, d), |acc, (wg, l)| acc + wg / *l);
        c = unit_det(&weighted);
        if converged(last, obj) {
            break;
        }
        last = obj;
    }
    let covs = lambdas.iter().map(|l| &c * *l).collect();
    (covs, iters)
}

/// `Sigma_g = lambda_g D_g A D_g^T` with `D_g` the eigenvectors of `W_g`.
fn vev(s: &ScatterInput, previous: Option<&[DMatrix<f64>]>) -> (Vec<DMatrix<f64>>, usize) {
    let d = s.dim();
    let df = d as f64;
    let eigs: Vec<(DVector<f64>, DMatrix<f64>)> = s
        .scatters
        .iter()
        .map(|w| {
            let (vals, vecs) = sorted_eigen(w);
            (vals.map(|v| v.max(0.0)), vecs)
        })
        .collect();
    let mut a = match previous {
        Some(p) => normalize_shape(&sorted_eigen(&p[0]).0).1,
        None => normalize_shape(&eigs.iter().fold(DVector::zeros(d), |acc, (v, _)| acc + v)).1,
    };
    let mut lambdas = vec![1.0; s.n_components()];
    let mut last = f64::INFINITY;
    let mut iters = 0;
    for it in 1..=INNER_MAX_ITER {
        iters = it;
        let mut obj = 0.0;
        for (g, (vals, _)) in eigs.iter().enumerate() {
            let tr: f64 = vals.iter().zip(a.iter()).map(|(w, ak)| w / ak).sum();
            lambdas[g] = (tr / (df * s.masses[g])).max(f64::MIN_POSITIVE);
            obj += s.masses[g] * df * (lambdas[g].ln() + 1.0);
        }
        let weighted = eigs
            .iter()
            .zip(&lambdas)
            .fold(DVector::zeros(d), |acc, ((vals, _), l)| acc + vals / *l);
        a = normalize_shape(&weighted).1;
        if converged(last, obj) {
            break;
        }
        last = obj;
    }
    let covs = eigs
        .iter()
        .zip(&lambdas)
        .map(|((_, vecs), l)| compose_parts(*l, vecs, &a))
        .collect();
    (covs, iters)
}

/// EVE (`lambda D A_g D^T`) and VVE (`lambda_g D A_g D^T`): shared orientation
/// D found by majorize-minimize steps, alternating with closed-form
/// volume/shape updates.
fn common_orientation(
    model: CovModelId,
    s: &ScatterInput,
    previous: Option<&[DMatrix<f64>]>,
) -> (Vec<DMatrix<f64>>, usize) {
    let cold = sorted_eigen(&s.pooled()).1;
    let mut best = run_common_orientation(model, s, cold);
    if let Some(p) = previous {
        let warm = run_common_orientation(model, s, sorted_eigen(&p[0]).1);
        if objective(&warm.0, s) < objective(&best.0, s) {
            best = warm;
        }
    }
    best
}

fn run_common_orientation(
    model: CovModelId,
    s: &ScatterInput,
    mut orient: DMatrix<f64>,
) -> (Vec<DMatrix<f64>>, usize) {
    let d = s.dim();
    let g_count = s.n_components();
    let total = s.total_mass();
    // Largest eigenvalue of each W_g, for the majorizer.
    let alphas: Vec<f64> = s
        .scatters
        .iter()
        .map(|w| sorted_eigen(w).0[0].max(0.0))
        .collect();

    // Per-component diagonal (lambda_g * A_g) for a fixed orientation.
    let diagonals = |orient: &DMatrix<f64>| -> Vec<DVector<f64>> {
        let projected: Vec<DVector<f64>> = s
            .scatters
            .iter()
            .map(|w| (orient.transpose() * w * orient).diagonal())
            .collect();
        match model {
            CovModelId::EVE => {
                let parts: Vec<(f64, DVector<f64>)> =
                    projected.iter().map(normalize_shape).collect();
                let lambda = parts.iter().map(|(r, _)| r).sum::<f64>() / total;
                parts.into_iter().map(|(_, a)| a * lambda).collect()
            }
            _ => projected
                .iter()
                .zip(&s.masses)
                .map(|(p, n)| {
                    let top = p.max().max(f64::MIN_POSITIVE);
                    p.map(|v| v.max(SHAPE_FLOOR * top)) / *n
                })
                .collect(),
        }
    };
    let build = |orient: &DMatrix<f64>, diags: &[DVector<f64>]| -> Vec<DMatrix<f64>> {
        diags.iter().map(|c| compose_parts(1.0, orient, c)).collect()
    };

    let mut diags = diagonals(&orient);
    let mut covs = build(&orient, &diags);
    let mut last = objective(&covs, s);
    let mut iters = 0;
    for it in 1..=INNER_MAX_ITER {
        iters = it;
        let mut m = DMatrix::zeros(d, d);
        for g in 0..g_count {
            let inv_c = diags[g].map(|v| 1.0 / v);
            let shifted = DMatrix::identity(d, d) * alphas[g] - &s.scatters[g];
            m += shifted * &orient * diag_matrix(&inv_c);
        }
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let candidate = u * v_t;
        let cand_diags = diagonals(&candidate);
        let cand_covs = build(&candidate, &cand_diags);
        let obj = objective(&cand_covs, s);
        if !(obj <= last) {
            break;
        }
        orient = candidate;
        diags = cand_diags;
        covs = cand_covs;
        let done = converged(last, obj);
        last = obj;
        if done {
            break;
        }
    }
    (covs, iters)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_round_trip() {
        for m in CovModelId::ALL {
            assert_eq!(m.code().parse::<CovModelId>().unwrap(), m);
        }
        assert!("XYZ".parse::<CovModelId>().is_err());
        assert_eq!("vvv".parse::<CovModelId>().unwrap(), CovModelId::VVV);
    }

    #[test]
    fn constraint_triples() {
        assert_eq!(CovModelId::EVE.volume(), Volume::Equal);
        assert_eq!(CovModelId::EVE.shape(), Shape::Variable);
        assert_eq!(CovModelId::EVE.orientation(), Orientation::Equal);
        assert_eq!(CovModelId::VII.shape(), Shape::Identity);
        assert_eq!(CovModelId::VEI.orientation(), Orientation::AxisAligned);
    }

    #[test]
    fn isotropic_decomposition() {
        let sigma = DMatrix::identity(2, 2) * 4.0;
        let dec = decompose(&sigma).unwrap();
        assert!((dec.volume - 4.0).abs() < 1e-12);
        assert_eq!(dec.orientation, DMatrix::identity(2, 2));
        assert!((dec.shape.clone() - DVector::from_element(2, 1.0)).amax() < 1e-12);
    }

    #[test]
    fn diagonal_decomposition() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![8.0, 2.0]));
        let dec = decompose(&sigma).unwrap();
        assert!((dec.volume - 4.0).abs() < 1e-12);
        assert!((dec.shape[0] - 2.0).abs() < 1e-12);
        assert!((dec.shape[1] - 0.5).abs() < 1e-12);
        assert!((dec.orientation.clone() - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn compose_fixed_points() {
        let dec = EigenDecomposition {
            volume: 1.0,
            orientation: DMatrix::identity(3, 3),
            shape: DVector::from_element(3, 1.0),
        };
        assert_eq!(compose(&dec), DMatrix::identity(3, 3));
        let dec = EigenDecomposition {
            volume: 4.0,
            orientation: DMatrix::identity(2, 2),
            shape: DVector::from_vec(vec![2.0, 0.5]),
        };
        assert_eq!(compose(&dec), DMatrix::from_diagonal(&DVector::from_vec(vec![8.0, 2.0])));
    }

    #[test]
    fn rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(decompose(&m), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn table_two_spot_values() {
        assert_eq!(param_count(CovModelId::VVV, 3, 5), 30);
        assert_eq!(param_count(CovModelId::VVV, 178, 5), 79_655);
        assert_eq!(param_count(CovModelId::EEE, 178, 5), 15_931);
        assert_eq!(param_count(CovModelId::EVE, 3, 5), 14);
        assert_eq!(param_count(CovModelId::VEI, 178, 5), 182);
    }

    #[test]
    fn eii_scalar_trace() {
        let s = ScatterInput::new(vec![DMatrix::identity(2, 2); 2], vec![1.0, 1.0]).unwrap();
        let est = mstep_covariances(CovModelId::EII, &s).unwrap();
        for sigma in &est.covariances {
            assert!((sigma - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);
        }
    }

    #[test]
    fn zero_mass_is_degenerate() {
        let s = ScatterInput::new(vec![DMatrix::identity(2, 2); 2], vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            mstep_covariances(CovModelId::VVV, &s),
            Err(Error::DegenerateComponent { component: 2, .. })
        ));
    }

    #[test]
    fn singular_scatter_is_ridged() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let s = ScatterInput::new(vec![w], vec![2.0]).unwrap();
        let est = mstep_covariances(CovModelId::VVV, &s).unwrap();
        assert!(est.regularized);
        assert!(Cholesky::new(est.covariances[0].clone()).is_some());
    }

    #[test]
    fn one_dimension_collapses_to_spherical() {
        assert_eq!(CovModelId::EVE.effective_for_dim(1), CovModelId::EII);
        assert_eq!(CovModelId::VVV.effective_for_dim(1), CovModelId::VII);
        assert_eq!(CovModelId::VVV.effective_for_dim(2), CovModelId::VVV);
    }
}
