//! Samplers for synthetic fixtures: isotropic Gaussian blobs and draws from
//! a known CWM.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cwm::CwmParams;
use crate::data::{DataMatrix, RandomSource, RegressionData};
use crate::error::{Error, Result};

/// `sizes[k]` points around `centers[k]`, each coordinate with sd `sd`.
/// Returns the points and 1-based blob labels, blobs in order.
pub fn gaussian_blobs(
    centers: &[Vec<f64>],
    sizes: &[usize],
    sd: f64,
    rng: &mut RandomSource,
) -> Result<(DataMatrix, Vec<usize>)> {
    if centers.is_empty() || centers.len() != sizes.len() {
        return Err(Error::InvalidArgument("one size per center required".into()));
    }
    let d = centers[0].len();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (k, (c, &m)) in centers.iter().zip(sizes).enumerate() {
        if c.len() != d {
            return Err(Error::InvalidArgument("centers differ in dimension".into()));
        }
        for _ in 0..m {
            rows.push(c.iter().map(|&v| v + sd * standard_normal(rng)).collect());
            labels.push(k + 1);
        }
    }
    Ok((DataMatrix::from_rows(&rows)?, labels))
}

/// Draws `n` observations from the CWM `params`: component by weight, input
/// from its Gaussian, response from its regression line plus noise.
pub fn sample_cwm(
    params: &CwmParams,
    n: usize,
    rng: &mut RandomSource,
) -> Result<(RegressionData, Vec<usize>)> {
    params.validate()?;
    let d = params.dim();
    let factors = params
        .covariances
        .iter()
        .map(|s| Cholesky::new(s.clone()).map(|c| c.l()).ok_or(Error::NotPositiveDefinite))
        .collect::<Result<Vec<_>>>()?;
    let mut x = DMatrix::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let g = pick(&params.weights, rng.random::<f64>());
        let z = DVector::from_fn(d, |_, _| standard_normal(rng));
        let xi = &params.means[g] + &factors[g] * z;
        let yi = params.predict_response(g, &xi)
            + params.output_vars[g].sqrt() * standard_normal(rng);
        x.row_mut(i).copy_from(&xi.transpose());
        y.push(yi);
        labels.push(g + 1);
    }
    Ok((RegressionData::new(DataMatrix::new(x)?, y)?, labels))
}

fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (g, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return g;
        }
    }
    weights.len() - 1
}

fn standard_normal(rng: &mut RandomSource) -> f64 {
    StandardNormal.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::CovModelId;

    #[test]
    fn blob_sizes_and_labels() {
        let (x, labels) = gaussian_blobs(
            &[vec![0.0, 0.0], vec![5.0, 5.0]],
            &[3, 2],
            0.1,
            &mut RandomSource::new(1),
        )
        .unwrap();
        assert_eq!(x.n_rows(), 5);
        assert_eq!(labels, vec![1, 1, 1, 2, 2]);
    }

    #[test]
    fn cwm_sample_follows_lines() {
        let params = CwmParams {
            weights: vec![0.5, 0.5],
            means: vec![DVector::from_vec(vec![-5.0]), DVector::from_vec(vec![5.0])],
            covariances: vec![DMatrix::identity(1, 1); 2],
            reg_coeffs: vec![DVector::from_vec(vec![0.0, 2.0]), DVector::from_vec(vec![1.0, -2.0])],
            output_vars: vec![1e-12, 1e-12],
            cov_model: CovModelId::VVV,
        };
        let (data, labels) = sample_cwm(&params, 50, &mut RandomSource::new(2)).unwrap();
        for i in 0..50 {
            let g = labels[i] - 1;
            let want = params.predict_response(g, &data.x.point(i));
            assert!((data.y[i] - want).abs() < 1e-4);
        }
    }
}
