//! Exact t-SNE.
//!
//! High-dimensional affinities use a Gaussian kernel whose per-point
//! precision `beta_i = 1/(2 sigma_i^2)` is calibrated so each conditional row
//! has the requested perplexity. The map uses a Student-t kernel with one
//! degree of freedom, and the KL divergence between the two joint
//! distributions is minimized by gradient descent with momentum:
//!
//! ```text
//! Y(t) = Y(t-1) - lr * dC/dY + alpha(t) * (Y(t-1) - Y(t-2))
//! dC/dy_i = 4 * sum_j (p_ij - q_ij) (y_i - y_j) / (1 + |y_i - y_j|^2)
//! ```
//!
//! Everything is O(N²); row computations run on the rayon pool and are
//! reduced in a fixed order so results do not depend on the thread count.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data::{DataMatrix, RandomSource};
use crate::error::{Error, Result};

/// Floor applied to joint affinities before any log or division.
pub const AFFINITY_FLOOR: f64 = 1e-12;

/// Dense row-major N×N matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::InvalidArgument(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Sum of all entries, accumulated row by row in index order.
    pub fn sum(&self) -> f64 {
        ordered_sum(&self.data, self.n)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

fn ordered_sum(data: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let row_sums: Vec<f64> = data.par_chunks(n).map(|r| r.iter().sum::<f64>()).collect();
    row_sums.iter().sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffinityKind {
    /// Each row is a distribution `p_{j|i}`.
    Conditional,
    /// Symmetric, sums to one over all entries.
    Joint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    kind: AffinityKind,
    values: SquareMatrix,
}

impl AffinityMatrix {
    pub fn new(kind: AffinityKind, values: SquareMatrix) -> Self {
        Self { kind, values }
    }

    pub fn kind(&self) -> AffinityKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.values.n()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    pub fn values(&self) -> &SquareMatrix {
        &self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.sum()
    }
}

/// `D_ij = sum_k (x_ik - x_jk)^2`, computed directly (no dot-product
/// expansion) so the diagonal is exactly zero and the matrix exactly symmetric.
pub fn pairwise_sq_distances(x: &DataMatrix) -> SquareMatrix {
    let rows = row_major(x.values());
    sq_distances_row_major(&rows, x.n_rows(), x.n_cols())
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = m.shape();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn sq_distances_row_major(rows: &[f64], n: usize, d: usize) -> SquareMatrix {
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, out)| {
        let xi = &rows[i * d..(i + 1) * d];
        for (j, o) in out.iter_mut().enumerate() {
            if j != i {
                let xj = &rows[j * d..(j + 1) * d];
                *o = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            }
        }
    });
    SquareMatrix { n, data }
}

/// Gaussian conditional affinities with per-row precision calibrated to the
/// requested perplexity. Returns the matrix and the precisions `beta_i`.
///
/// The search brackets `beta` by doubling/halving from `1 / mean(D_i.)`, then
/// bisects geometrically until the row entropy (bits) is within `tol` of
/// `log2(perplexity)` or `max_bisection` evaluations have been spent; in the
/// latter case the best precision seen is kept.
pub fn conditional_affinities(
    distances: &SquareMatrix,
    perplexity: f64,
    tol: f64,
    max_bisection: usize,
) -> Result<(AffinityMatrix, Vec<f64>)> {
    let n = distances.n();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two points".into()));
    }
    if !(perplexity > 1.0 && perplexity < n as f64) {
        return Err(Error::InvalidArgument(format!(
            "perplexity must lie in (1, {n}), got {perplexity}"
        )));
    }
    let target = perplexity.log2();
    let rows: Vec<Result<(Vec<f64>, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| calibrate_row(distances.row(i), i, target, tol, max_bisection))
        .collect();

    let mut data = Vec::with_capacity(n * n);
    let mut betas = Vec::with_capacity(n);
    for r in rows {
        let (row, beta) = r?;
        data.extend_from_slice(&row);
        betas.push(beta);
    }
    Ok((
        AffinityMatrix::new(AffinityKind::Conditional, SquareMatrix { n, data }),
        betas,
    ))
}

fn calibrate_row(
    dist: &[f64],
    i: usize,
    target_bits: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64)> {
    let n = dist.len();
    let others = || dist.iter().enumerate().filter(move |(j, _)| *j != i).map(|(_, d)| *d);
    let dmin = others().fold(f64::INFINITY, f64::min);
    let dmax = others().fold(0.0f64, f64::max);
    if dmax <= 0.0 {
        return Err(Error::DuplicatePoints { row: i });
    }
    let mean_excess = others().map(|d| d - dmin).sum::<f64>() / (n - 1) as f64;

    // Entropy in bits of the row at precision beta.
    let entropy = |beta: f64| -> f64 {
        let mut s = 0.0;
        let mut sd = 0.0;
        for (j, &d) in dist.iter().enumerate() {
            if j != i {
                let e = d - dmin;
                let w = (-beta * e).exp();
                s += w;
                sd += w * e;
            }
        }
        (s.ln() + beta * sd / s) / std::f64::consts::LN_2
    };

    let mut beta = if mean_excess > 0.0 { 1.0 / mean_excess } else { 1.0 };
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut best = (f64::INFINITY, beta);
    for _ in 0..max_iter.max(1) {
        let gap = entropy(beta) - target_bits;
        if gap.abs() < best.0 {
            best = (gap.abs(), beta);
        }
        if gap.abs() <= tol {
            break;
        }
        if gap > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (lo * hi).sqrt() } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = if lo > 0.0 { (lo * hi).sqrt() } else { beta / 2.0 };
        }
    }
    let beta = best.1;

    let mut row = vec![0.0; n];
    let mut s = 0.0;
    for (j, &d) in dist.iter().enumerate() {
        if j != i {
            row[j] = (-beta * (d - dmin)).exp();
            s += row[j];
        }
    }
    for v in &mut row {
        *v /= s;
    }
    Ok((row, beta))
}

/// `p_ij = (p_{j|i} + p_{i|j}) / 2N`, floored at [`AFFINITY_FLOOR`] off the
/// diagonal and renormalized to unit mass.
pub fn symmetrize(conditional: &AffinityMatrix) -> Result<AffinityMatrix> {
    if conditional.kind() != AffinityKind::Conditional {
        return Err(Error::InvalidArgument(
            "symmetrize expects a conditional affinity matrix".into(),
        ));
    }
    let n = conditional.n();
    let denom = 2.0 * n as f64;
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
        for (j, o) in out.iter_mut().enumerate() {
            if j != i {
                let p = (conditional.get(i, j) + conditional.get(j, i)) / denom;
                *o = p.max(AFFINITY_FLOOR);
            }
        }
    });
    Ok(AffinityMatrix::new(AffinityKind::Joint, normalized(n, data)))
}

fn normalized(n: usize, mut data: Vec<f64>) -> SquareMatrix {
    let total = ordered_sum(&data, n);
    data.par_iter_mut().for_each(|v| *v /= total);
    SquareMatrix { n, data }
}

/// Student-t joint affinities of a map. Returns `Q` and the unnormalized
/// kernel `(1 + |y_i - y_j|^2)^-1` (zero diagonal).
pub fn low_dim_affinities(y: &DMatrix<f64>) -> (AffinityMatrix, SquareMatrix) {
    let (n, m) = y.shape();
    let rows = row_major(y);
    let mut kernel = sq_distances_row_major(&rows, n, m);
    kernel.data.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, out)| {
        for (j, o) in out.iter_mut().enumerate() {
            *o = if i == j { 0.0 } else { 1.0 / (1.0 + *o) };
        }
    });
    let z = kernel.sum();
    let mut q = vec![0.0; n * n];
    q.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, out)| {
        for (j, o) in out.iter_mut().enumerate() {
            if i != j {
                *o = (kernel.get(i, j) / z).max(AFFINITY_FLOOR);
            }
        }
    });
    (
        AffinityMatrix::new(AffinityKind::Joint, normalized(n, q)),
        kernel,
    )
}

/// `KL(P || Q) = sum_{i != j} p_ij ln(p_ij / q_ij)` with `0 ln 0 = 0`.
pub fn kl_cost(p: &AffinityMatrix, q: &AffinityMatrix) -> f64 {
    let n = p.n();
    assert_eq!(n, q.n(), "affinity matrices differ in size");
    let row_costs: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (pr, qr) = (p.row(i), q.row(i));
            let mut c = 0.0;
            for j in 0..n {
                let pij = pr[j];
                if j != i && pij > 0.0 {
                    c += pij * (pij / qr[j].max(AFFINITY_FLOOR)).ln();
                }
            }
            c
        })
        .collect();
    row_costs.iter().sum::<f64>().max(0.0)
}

/// Analytic gradient of [`kl_cost`] with respect to the map coordinates.
pub fn tsne_gradient(
    p: &AffinityMatrix,
    q: &AffinityMatrix,
    kernel: &SquareMatrix,
    y: &DMatrix<f64>,
) -> DMatrix<f64> {
    gradient_scaled(p, 1.0, q, kernel, y)
}

fn gradient_scaled(
    p: &AffinityMatrix,
    p_scale: f64,
    q: &AffinityMatrix,
    kernel: &SquareMatrix,
    y: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (n, m) = y.shape();
    let rows = row_major(y);
    let mut grad = vec![0.0; n * m];
    grad.par_chunks_mut(m).enumerate().for_each(|(i, g)| {
        let yi = &rows[i * m..(i + 1) * m];
        let (pr, qr, kr) = (p.row(i), q.row(i), kernel.row(i));
        for j in 0..n {
            if j == i {
                continue;
            }
            let w = (p_scale * pr[j] - qr[j]) * kr[j];
            let yj = &rows[j * m..(j + 1) * m];
            for k in 0..m {
                g[k] += w * (yi[k] - yj[k]);
            }
        }
        for v in g.iter_mut() {
            *v *= 4.0;
        }
    });
    DMatrix::from_row_slice(n, m, &grad)
}

/// Piecewise-constant momentum: `initial` before `switch_iter`, `final_` after.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumSchedule {
    pub initial: f64,
    pub final_: f64,
    pub switch_iter: usize,
}

impl MomentumSchedule {
    pub fn at(&self, iteration: usize) -> f64 {
        if iteration < self.switch_iter {
            self.initial
        } else {
            self.final_
        }
    }
}

impl Default for MomentumSchedule {
    fn default() -> Self {
        Self {
            initial: 0.5,
            final_: 0.8,
            switch_iter: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub max_iterations: usize,
    pub output_dim: usize,
    /// Only 0 (exact gradient) is supported.
    pub theta: f64,
    pub early_exaggeration_factor: f64,
    /// `None` means `min(250, max_iterations / 4)`.
    pub early_exaggeration_iters: Option<usize>,
    /// Standard deviation of the initial map coordinates.
    pub init_sd: f64,
    pub seed: u64,
    pub learning_rate: f64,
    pub momentum: MomentumSchedule,
    /// Entropy tolerance (bits) of the perplexity calibration.
    pub entropy_tol: f64,
    pub max_bisection: usize,
    /// Per-coordinate adaptive step gains (grow by 0.2 while the gradient
    /// keeps its sign against the last step, shrink by 0.8 otherwise).
    pub adaptive_gains: bool,
    pub min_gain: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            max_iterations: 1000,
            output_dim: 2,
            theta: 0.0,
            early_exaggeration_factor: 12.0,
            early_exaggeration_iters: None,
            init_sd: 1e-2,
            seed: 0,
            learning_rate: 200.0,
            momentum: MomentumSchedule::default(),
            entropy_tol: 1e-5,
            max_bisection: 64,
            adaptive_gains: true,
            min_gain: 0.01,
        }
    }
}

impl TsneConfig {
    pub fn exaggeration_iters(&self) -> usize {
        self.early_exaggeration_iters
            .unwrap_or_else(|| 250.min(self.max_iterations / 4))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if n < 4 {
            return bad(format!("t-SNE needs at least 4 points, got {n}"));
        }
        if !(self.perplexity > 1.0 && self.perplexity < n as f64) {
            return bad(format!(
                "perplexity must lie in (1, {n}), got {}",
                self.perplexity
            ));
        }
        if !(0.0..1.0).contains(&self.theta) {
            return bad(format!("theta must lie in [0, 1), got {}", self.theta));
        }
        if self.theta != 0.0 {
            return Err(Error::ThetaUnsupported(self.theta));
        }
        if self.max_iterations == 0 || self.output_dim == 0 {
            return bad("max_iterations and output_dim must be positive".into());
        }
        if !(self.early_exaggeration_factor >= 1.0) {
            return bad("early_exaggeration_factor must be >= 1".into());
        }
        if !(self.init_sd > 0.0) || !(self.learning_rate > 0.0) {
            return bad("init_sd and learning_rate must be positive".into());
        }
        if !(self.min_gain > 0.0) {
            return bad("min_gain must be positive".into());
        }
        Ok(())
    }
}

/// Optimizer state after [`embed`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingState {
    pub y: DMatrix<f64>,
    pub y_prev: DMatrix<f64>,
    pub iteration: usize,
    /// KL(P || Q) of the map entering each iteration (unexaggerated P).
    pub cost_trace: Vec<f64>,
    /// KL of the returned map.
    pub final_cost: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub momentum: MomentumSchedule,
}

/// Per-iteration callback payload.
#[derive(Debug)]
pub struct EmbedProgress<'a> {
    pub iteration: usize,
    pub cost: f64,
    pub y: &'a DMatrix<f64>,
}

pub fn embed(x: &DataMatrix, cfg: &TsneConfig) -> Result<EmbeddingState> {
    embed_observed(x, cfg, &mut |_| {})
}

/// [`embed`] with a callback invoked once per iteration, before the update.
pub fn embed_observed(
    x: &DataMatrix,
    cfg: &TsneConfig,
    observer: &mut dyn FnMut(&EmbedProgress<'_>),
) -> Result<EmbeddingState> {
    let n = x.n_rows();
    cfg.validate(n)?;
    let distances = pairwise_sq_distances(x);
    let (cond, _) =
        conditional_affinities(&distances, cfg.perplexity, cfg.entropy_tol, cfg.max_bisection)?;
    let p = symmetrize(&cond)?;

    let m = cfg.output_dim;
    let mut rng = RandomSource::new(cfg.seed);
    let normal = Normal::new(0.0, cfg.init_sd).expect("validated init_sd");
    let draws: Vec<f64> = (0..n * m).map(|_| normal.sample(&mut rng)).collect();
    let mut y = DMatrix::from_row_slice(n, m, &draws);
    let mut y_prev = y.clone();

    let ee_iters = cfg.exaggeration_iters();
    let mut gains = DMatrix::<f64>::from_element(n, m, 1.0);
    let mut trace = Vec::with_capacity(cfg.max_iterations);
    for t in 0..cfg.max_iterations {
        let (q, kernel) = low_dim_affinities(&y);
        let cost = kl_cost(&p, &q);
        trace.push(cost);
        observer(&EmbedProgress {
            iteration: t,
            cost,
            y: &y,
        });

        let scale = if t < ee_iters {
            cfg.early_exaggeration_factor
        } else {
            1.0
        };
        let grad = gradient_scaled(&p, scale, &q, &kernel, &y);
        let alpha = cfg.momentum.at(t);
        let step = &y - &y_prev;
        if cfg.adaptive_gains {
            for ((g, &d), &s) in gains.iter_mut().zip(grad.iter()).zip(step.iter()) {
                *g = if (d > 0.0) != (s > 0.0) { *g + 0.2 } else { (*g * 0.8).max(cfg.min_gain) };
            }
        }
        let next = &y - cfg.learning_rate * grad.component_mul(&gains) + alpha * step;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEmbedding { iteration: t });
        }
        y_prev = std::mem::replace(&mut y, next);
    }
    let (q, _) = low_dim_affinities(&y);
    let final_cost = kl_cost(&p, &q);

    Ok(EmbeddingState {
        y,
        y_prev,
        iteration: cfg.max_iterations,
        cost_trace: trace,
        final_cost,
        exaggeration_iters: ee_iters,
        learning_rate: cfg.learning_rate,
        momentum: cfg.momentum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = RandomSource::new(seed);
        DMatrix::from_fn(n, d, |_, _| rng.random::<f64>() * 4.0 - 2.0)
    }

    fn joint(n: usize, data: Vec<f64>) -> AffinityMatrix {
        AffinityMatrix::new(AffinityKind::Joint, SquareMatrix::from_row_major(n, data).unwrap())
    }

    #[test]
    fn three_four_five() {
        let x = DataMatrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        let d = pairwise_sq_distances(&x);
        assert_eq!(d.get(0, 1), 25.0);
        assert_eq!(d.get(1, 0), 25.0);
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn identical_points_have_zero_distances() {
        let x = DataMatrix::from_rows(&vec![vec![1.5, -2.0]; 4]).unwrap();
        assert!(pairwise_sq_distances(&x).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distances_match_double_loop() {
        let m = random_matrix(10, 4, 3);
        let d = pairwise_sq_distances(&DataMatrix::new(m.clone()).unwrap());
        for i in 0..10 {
            for j in 0..10 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += (m[(i, k)] - m[(j, k)]).powi(2);
                }
                assert!((d.get(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equilateral_rows_are_uniform() {
        let h = 3f64.sqrt() / 2.0;
        let x = DataMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, h]]).unwrap();
        let (p, _) = conditional_affinities(&pairwise_sq_distances(&x), 2.0, 1e-5, 64).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                // The entropy is flat at its maximum, so the row only gets
                // within sqrt(tol) of uniform.
                let want = if i == j { 0.0 } else { 0.5 };
                assert!((p.get(i, j) - want).abs() < 3e-3, "{i},{j}: {}", p.get(i, j));
            }
        }
    }

    #[test]
    fn duplicate_point_row_reported() {
        let x = DataMatrix::from_rows(&vec![vec![1.0, 1.0]; 5]).unwrap();
        assert!(matches!(
            conditional_affinities(&pairwise_sq_distances(&x), 2.0, 1e-5, 64),
            Err(Error::DuplicatePoints { row: 0 })
        ));
    }

    #[test]
    fn conditional_rows_sum_to_one() {
        let x = DataMatrix::new(random_matrix(40, 3, 5)).unwrap();
        let (p, betas) = conditional_affinities(&pairwise_sq_distances(&x), 10.0, 1e-5, 64).unwrap();
        assert_eq!(betas.len(), 40);
        for i in 0..40 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(p.get(i, i), 0.0);
        }
    }

    #[test]
    fn symmetric_conditional_input_scales_by_n() {
        let n = 4;
        let c = vec![
            0.0, 0.5, 0.25, 0.25, //
            0.5, 0.0, 0.25, 0.25, //
            0.25, 0.25, 0.0, 0.5, //
            0.25, 0.25, 0.5, 0.0,
        ];
        let cond = AffinityMatrix::new(
            AffinityKind::Conditional,
            SquareMatrix::from_row_major(n, c.clone()).unwrap(),
        );
        let p = symmetrize(&cond).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((p.get(i, j) - c[i * n + j] / n as f64).abs() < 1e-15);
            }
        }
        assert!(symmetrize(&p).is_err());
    }

    #[test]
    fn symmetrize_matches_direct_formula() {
        let n = 12;
        let mut rng = RandomSource::new(11);
        let mut c = vec![0.0; n * n];
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                if i != j {
                    c[i * n + j] = 0.05 + rng.random::<f64>();
                    s += c[i * n + j];
                }
            }
            for j in 0..n {
                c[i * n + j] /= s;
            }
        }
        let cond = AffinityMatrix::new(
            AffinityKind::Conditional,
            SquareMatrix::from_row_major(n, c.clone()).unwrap(),
        );
        let p = symmetrize(&cond).unwrap();
        assert!((p.sum() - 1.0).abs() < 1e-12);
        for i in 0..n {
            for j in 0..n {
                let want = if i == j {
                    0.0
                } else {
                    (c[i * n + j] + c[j * n + i]) / (2.0 * n as f64)
                };
                assert!((p.get(i, j) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn coincident_pair_gives_half() {
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (q, k) = low_dim_affinities(&y);
        assert_eq!(q.get(0, 1), 0.5);
        assert_eq!(q.get(1, 0), 0.5);
        assert_eq!(k.get(0, 1), 1.0);
    }

    #[test]
    fn unit_triangle_gives_sixths() {
        let h = 3f64.sqrt() / 2.0;
        let y = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.5, h]);
        let (q, _) = low_dim_affinities(&y);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!((q.get(i, j) - 1.0 / 6.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn low_dim_matches_double_loop() {
        let y = random_matrix(15, 2, 8);
        let (q, _) = low_dim_affinities(&y);
        let mut k = vec![vec![0.0; 15]; 15];
        let mut z = 0.0;
        for i in 0..15 {
            for j in 0..15 {
                if i != j {
                    let d2 = (y[(i, 0)] - y[(j, 0)]).powi(2) + (y[(i, 1)] - y[(j, 1)]).powi(2);
                    k[i][j] = 1.0 / (1.0 + d2);
                    z += k[i][j];
                }
            }
        }
        for i in 0..15 {
            for j in 0..15 {
                assert!((q.get(i, j) - k[i][j] / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let y = random_matrix(10, 2, 1);
        let (q, _) = low_dim_affinities(&y);
        assert_eq!(kl_cost(&q, &q), 0.0);
        let u = joint(3, vec![0.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 0.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 0.0]);
        assert_eq!(kl_cost(&u, &u.clone()), 0.0);
    }

    #[test]
    fn kl_four_point_hand_case() {
        // Symmetric P and Q on 4 points; values chosen by hand.
        let mut p = vec![0.0; 16];
        let mut q = vec![0.0; 16];
        let pv = [0.2, 0.1, 0.05, 0.05, 0.05, 0.05];
        let qv = [0.1, 0.1, 0.1, 0.1, 0.05, 0.05];
        let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        for (k, &(i, j)) in pairs.iter().enumerate() {
            p[i * 4 + j] = pv[k];
            p[j * 4 + i] = pv[k];
            q[i * 4 + j] = qv[k];
            q[j * 4 + i] = qv[k];
        }
        let want: f64 = 2.0
            * (0.2 * (2.0f64).ln()
                + 0.1 * 1.0f64.ln()
                + 0.05 * 0.5f64.ln()
                + 0.05 * 0.5f64.ln()
                + 0.05 * 1.0f64.ln()
                + 0.05 * 1.0f64.ln());
        let got = kl_cost(&joint(4, p), &joint(4, q));
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
    }

    #[test]
    fn gradient_zero_when_matched() {
        let y = random_matrix(8, 2, 4);
        let (q, k) = low_dim_affinities(&y);
        let g = tsne_gradient(&q, &q, &k, &y);
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn pair_gradients_opposite() {
        let y = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 2.0]);
        let (q, k) = low_dim_affinities(&y);
        let p = joint(2, vec![0.0, 0.5, 0.5, 0.0]);
        let g = tsne_gradient(&p, &q, &k, &y);
        for c in 0..2 {
            assert!((g[(0, c)] + g[(1, c)]).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_theta() {
        let cfg = TsneConfig {
            theta: 0.5,
            perplexity: 2.0,
            ..TsneConfig::default()
        };
        assert!(matches!(cfg.validate(10), Err(Error::ThetaUnsupported(_))));
        assert!(TsneConfig::default().validate(3).is_err());
    }

    #[test]
    fn two_tight_pairs_descend() {
        let x = DataMatrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![5.0, 5.0],
            vec![5.0, 5.1],
        ])
        .unwrap();
        let cfg = TsneConfig {
            perplexity: 2.0,
            max_iterations: 500,
            seed: 3,
            ..TsneConfig::default()
        };
        let state = embed(&x, &cfg).unwrap();
        assert_eq!(state.cost_trace.len(), 500);
        assert!(state.final_cost < state.cost_trace[0]);
        assert!(state.cost_trace.iter().all(|&c| c >= 0.0));
    }
}
