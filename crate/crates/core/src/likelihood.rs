//! Exact Gaussian log-likelihood and the divergence functionals the
//! analysis rests on: average Kullback-Leibler mean and variation, the
//! Renyi-1/2 divergence split into covariance and mean parts, and the
//! covariance Hellinger distance.
//!
//! Determinants and inverses go through Cholesky factorizations; a factor
//! failure is reported as a non-SPD input.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CovarianceEigen, Dataset};

fn spd_cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!("{what} must be square")));
    }
    m.clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(what.into()))
}

fn ln_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

fn check_shapes(beta: &DMatrix<f64>, sigma: &DMatrix<f64>, data: &Dataset) -> Result<()> {
    if beta.nrows() != data.p() || beta.ncols() != data.d() {
        return Err(Error::Dimension(format!(
            "beta is {}x{}, data wants {}x{}",
            beta.nrows(),
            beta.ncols(),
            data.p(),
            data.d()
        )));
    }
    if sigma.nrows() != data.d() {
        return Err(Error::Dimension(format!(
            "sigma is {}x{}, responses have dimension {}",
            sigma.nrows(),
            sigma.ncols(),
            data.d()
        )));
    }
    Ok(())
}

/// `sum_i r_i A^-1 r_i'` for row-wise residuals, via the Cholesky factor of
/// `A`.
fn quadratic_sum(rows: &DMatrix<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let solved = chol.solve(&rows.transpose());
    rows.component_mul(&solved.transpose()).sum()
}

/// Gaussian log-likelihood
/// `-(nd/2) log(2 pi) - (n/2) log det Sigma - 1/2 sum_i ||Sigma^-1/2 (y_i - x_i beta)'||^2`.
pub fn log_likelihood(beta: &DMatrix<f64>, sigma: &DMatrix<f64>, data: &Dataset) -> Result<f64> {
    check_shapes(beta, sigma, data)?;
    let chol = spd_cholesky(sigma, "likelihood covariance")?;
    let n = data.n() as f64;
    let d = data.d() as f64;
    let residual = data.y() - data.x() * beta;
    let quad = quadratic_sum(&residual, &chol);
    Ok(-0.5 * n * d * (2.0 * std::f64::consts::PI).ln() - 0.5 * n * ln_det(&chol) - 0.5 * quad)
}

/// [`log_likelihood`] with the covariance in eigendecomposed form.
pub fn log_likelihood_eigen(
    beta: &DMatrix<f64>,
    sigma: &CovarianceEigen,
    data: &Dataset,
) -> Result<f64> {
    log_likelihood(beta, &sigma.reconstruct(), data)
}

/// Average Kullback-Leibler divergence `n^-1 K(f_0, f)` between the truth
/// `(beta0, sigma0)` and `(beta, sigma)`.
pub fn kl_mean(
    beta: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    beta0: &DMatrix<f64>,
    sigma0: &DMatrix<f64>,
    data: &Dataset,
) -> Result<f64> {
    check_shapes(beta, sigma, data)?;
    check_shapes(beta0, sigma0, data)?;
    if data.n() == 0 {
        return Err(Error::InvalidArgument("average divergence needs n >= 1".into()));
    }
    let chol = spd_cholesky(sigma, "covariance")?;
    let chol0 = spd_cholesky(sigma0, "true covariance")?;
    let d = data.d() as f64;
    let ratio = chol.solve(sigma0);
    let delta = data.x() * (beta - beta0);
    let quad = quadratic_sum(&delta, &chol) / data.n() as f64;
    Ok(0.5 * (ratio.trace() - d - (ln_det(&chol0) - ln_det(&chol)) + quad))
}

/// Average Kullback-Leibler variation `n^-1 V(f_0, f)`.
pub fn kl_variation(
    beta: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    beta0: &DMatrix<f64>,
    sigma0: &DMatrix<f64>,
    data: &Dataset,
) -> Result<f64> {
    check_shapes(beta, sigma, data)?;
    check_shapes(beta0, sigma0, data)?;
    if data.n() == 0 {
        return Err(Error::InvalidArgument("average divergence needs n >= 1".into()));
    }
    let chol = spd_cholesky(sigma, "covariance")?;
    spd_cholesky(sigma0, "true covariance")?;
    let d = data.d() as f64;
    let ratio = chol.solve(sigma0);
    let tr_sq = ratio.component_mul(&ratio.transpose()).sum();
    let cov_part = 0.5 * (tr_sq - 2.0 * ratio.trace() + d);
    // Data part: sum_i delta_i Sigma^-1 Sigma0 Sigma^-1 delta_i' / n.
    let delta = data.x() * (beta - beta0);
    let w = chol.solve(&delta.transpose());
    let quad = (sigma0 * &w).component_mul(&w).sum() / data.n() as f64;
    Ok(cov_part + quad)
}

/// The Renyi-1/2 divergence between the length-n product densities, split
/// into the covariance log-determinant part and the design-weighted mean
/// part; `total` is exactly their sum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DivergenceBreakdown {
    pub cov_term: f64,
    pub mean_term: f64,
    pub total: f64,
}

/// Renyi divergence of order 1/2:
/// `cov_term = -n log( det(S)^1/4 det(S0)^1/4 / det((S+S0)/2)^1/2 )`,
/// `mean_term = 1/8 sum_i x_i (b - b0) ((S+S0)/2)^-1 (b - b0)' x_i'`.
pub fn renyi_half(
    beta: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    beta0: &DMatrix<f64>,
    sigma0: &DMatrix<f64>,
    data: &Dataset,
) -> Result<DivergenceBreakdown> {
    check_shapes(beta, sigma, data)?;
    check_shapes(beta0, sigma0, data)?;
    let chol = spd_cholesky(sigma, "covariance")?;
    let chol0 = spd_cholesky(sigma0, "true covariance")?;
    let mid = (sigma + sigma0) * 0.5;
    let chol_mid = spd_cholesky(&mid, "average covariance")?;
    let n = data.n() as f64;
    let per_row_cov = 0.5 * ln_det(&chol_mid) - 0.25 * ln_det(&chol) - 0.25 * ln_det(&chol0);
    let cov_term = (n * per_row_cov).max(0.0);
    let delta = data.x() * (beta - beta0);
    let mean_term = (0.125 * quadratic_sum(&delta, &chol_mid)).max(0.0);
    Ok(DivergenceBreakdown {
        cov_term,
        mean_term,
        total: cov_term + mean_term,
    })
}

/// Squared Hellinger distance between centered Gaussians with covariances
/// `sigma` and `sigma0`:
/// `1 - det(S)^1/4 det(S0)^1/4 / det((S+S0)/2)^1/2`, a value in [0, 1].
pub fn hellinger_sq_cov(sigma: &DMatrix<f64>, sigma0: &DMatrix<f64>) -> Result<f64> {
    if sigma.nrows() != sigma0.nrows() || sigma.ncols() != sigma0.ncols() {
        return Err(Error::Dimension("covariances must share dimensions".into()));
    }
    let chol = spd_cholesky(sigma, "covariance")?;
    let chol0 = spd_cholesky(sigma0, "reference covariance")?;
    let mid = (sigma + sigma0) * 0.5;
    let chol_mid = spd_cholesky(&mid, "average covariance")?;
    let log_affinity = 0.25 * ln_det(&chol) + 0.25 * ln_det(&chol0) - 0.5 * ln_det(&chol_mid);
    Ok((-f64::exp_m1(log_affinity.min(0.0))).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use crate::priors::sample_haar_orthogonal;

    fn random_spd(rng: &mut StdRng, d: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        &a * a.transpose() + DMatrix::identity(d, d) * (0.5 + rng.random::<f64>())
    }

    fn random_instance(
        rng: &mut StdRng,
        n: usize,
        p: usize,
        d: usize,
    ) -> (Dataset, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y = DMatrix::from_fn(n, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let beta = DMatrix::from_fn(p, d, |_, _| rng.random::<f64>() - 0.5);
        let beta0 = DMatrix::from_fn(p, d, |_, _| rng.random::<f64>() - 0.5);
        let sigma = random_spd(rng, d);
        let sigma0 = random_spd(rng, d);
        (Dataset::new(x, y).unwrap(), beta, beta0, sigma, sigma0)
    }

    /// Row-by-row multivariate normal log-pdf through an explicit inverse;
    /// independent of the Cholesky path.
    fn mvn_logpdf_oracle(beta: &DMatrix<f64>, sigma: &DMatrix<f64>, data: &Dataset) -> f64 {
        let inv = sigma.clone().try_inverse().unwrap();
        let det = sigma.determinant();
        let d = data.d() as f64;
        let mut total = 0.0;
        for i in 0..data.n() {
            let resid = data.y().row(i) - data.x().row(i) * beta;
            let quad = (&resid * &inv * resid.transpose())[(0, 0)];
            total += -0.5 * d * (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * quad;
        }
        total
    }

    #[test]
    fn log_likelihood_plugin_value() {
        let data = Dataset::new(DMatrix::from_element(1, 1, 0.37), DMatrix::zeros(1, 1)).unwrap();
        let beta = DMatrix::zeros(1, 1);
        let sigma = DMatrix::identity(1, 1);
        let ll = log_likelihood(&beta, &sigma, &data).unwrap();
        assert!((ll + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_row_contribution() {
        let mut rng = StdRng::seed_from_u64(31);
        let (n, p, d) = (4, 3, 2);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>());
        let beta = DMatrix::from_fn(p, d, |_, _| rng.random::<f64>());
        let sigma = random_spd(&mut rng, d);
        let y = &x * &beta; // every row has zero residual
        let data = Dataset::new(x.clone(), y.clone()).unwrap();
        let ll = log_likelihood(&beta, &sigma, &data).unwrap();
        let per_row = -0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * sigma.determinant().ln();
        assert!((ll - n as f64 * per_row).abs() < 1e-10);
    }

    #[test]
    fn log_likelihood_matches_mvn_oracle() {
        let mut rng = StdRng::seed_from_u64(32);
        for _ in 0..20 {
            let (data, beta, _, sigma, _) = random_instance(&mut rng, 6, 4, 3);
            let ours = log_likelihood(&beta, &sigma, &data).unwrap();
            let oracle = mvn_logpdf_oracle(&beta, &sigma, &data);
            assert!((ours - oracle).abs() < 1e-10, "{ours} vs {oracle}");
        }
    }

    #[test]
    fn log_likelihood_rejects_bad_inputs() {
        let data = Dataset::new(DMatrix::zeros(2, 3), DMatrix::zeros(2, 2)).unwrap();
        let beta = DMatrix::zeros(3, 2);
        let not_spd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            log_likelihood(&beta, &not_spd, &data),
            Err(Error::NotPositiveDefinite(_))
        ));
        let wrong = DMatrix::zeros(2, 2);
        assert!(log_likelihood(&wrong, &DMatrix::identity(2, 2), &data).is_err());
    }

    #[test]
    fn kl_zero_at_equality_and_scalar_value() {
        let mut rng = StdRng::seed_from_u64(33);
        let (data, beta, _, sigma, _) = random_instance(&mut rng, 5, 3, 2);
        assert!(kl_mean(&beta, &sigma, &beta, &sigma, &data).unwrap().abs() < 1e-12);
        assert!(kl_variation(&beta, &sigma, &beta, &sigma, &data).unwrap().abs() < 1e-12);

        // d = 1, beta = beta0, sigma = 2, sigma0 = 1:
        // K/n = (1/2)(1/2 - 1 + log 2).
        let data1 = Dataset::new(DMatrix::zeros(3, 1), DMatrix::zeros(3, 1)).unwrap();
        let b = DMatrix::zeros(1, 1);
        let km = kl_mean(
            &b,
            &DMatrix::from_element(1, 1, 2.0),
            &b,
            &DMatrix::from_element(1, 1, 1.0),
            &data1,
        )
        .unwrap();
        let expected = 0.5 * (0.5 - 1.0 + 2.0f64.ln());
        assert!((km - expected).abs() < 1e-12, "{km} vs {expected}");
    }

    #[test]
    fn divergences_nonnegative_on_random_instances() {
        let mut rng = StdRng::seed_from_u64(34);
        for _ in 0..200 {
            let (data, beta, beta0, sigma, sigma0) = random_instance(&mut rng, 5, 3, 2);
            assert!(kl_mean(&beta, &sigma, &beta0, &sigma0, &data).unwrap() >= 0.0);
            assert!(kl_variation(&beta, &sigma, &beta0, &sigma0, &data).unwrap() >= 0.0);
            let r = renyi_half(&beta, &sigma, &beta0, &sigma0, &data).unwrap();
            assert!(r.cov_term >= 0.0 && r.mean_term >= 0.0);
            assert_eq!(r.total, r.cov_term + r.mean_term);
            let h = hellinger_sq_cov(&sigma, &sigma0).unwrap();
            assert!((0.0..=1.0).contains(&h));
        }
    }

    #[test]
    fn renyi_total_matches_row_hellinger_identity() {
        // total = -sum_i log(1 - h_i^2 / 2), with h_i^2 the squared
        // Hellinger distance between the row densities.
        let mut rng = StdRng::seed_from_u64(35);
        for _ in 0..10 {
            let (data, beta, beta0, sigma, sigma0) = random_instance(&mut rng, 6, 3, 2);
            let r = renyi_half(&beta, &sigma, &beta0, &sigma0, &data).unwrap();
            let mid = (&sigma + &sigma0) * 0.5;
            let mid_inv = mid.clone().try_inverse().unwrap();
            let cov_affinity = (sigma.determinant().powf(0.25)
                * sigma0.determinant().powf(0.25))
                / mid.determinant().sqrt();
            let mut total = 0.0;
            for i in 0..data.n() {
                let diff = data.x().row(i) * (&beta - &beta0);
                let quad = (&diff * &mid_inv * diff.transpose())[(0, 0)];
                let affinity = cov_affinity * (-0.125 * quad).exp();
                let h2 = 2.0 * (1.0 - affinity);
                total += -(1.0 - h2 / 2.0).ln();
            }
            assert!((r.total - total).abs() < 1e-10, "{} vs {total}", r.total);
        }
    }

    #[test]
    fn renyi_equal_covariance_reduces_to_gaussian_affinity() {
        let mut rng = StdRng::seed_from_u64(36);
        let (data, beta, beta0, _, sigma0) = random_instance(&mut rng, 5, 3, 2);
        let r = renyi_half(&beta, &sigma0, &beta0, &sigma0, &data).unwrap();
        assert_eq!(r.cov_term, 0.0);
        // Against the closed-form Gaussian affinity with shared covariance.
        let inv = sigma0.clone().try_inverse().unwrap();
        let delta = data.x() * (&beta - &beta0);
        let mut expected = 0.0;
        for i in 0..data.n() {
            let row = delta.row(i);
            expected += 0.125 * (row * &inv * row.transpose())[(0, 0)];
        }
        assert!((r.mean_term - expected).abs() < 1e-10);
        // Identical parameters: all three fields zero.
        let same = renyi_half(&beta, &sigma0, &beta, &sigma0, &data).unwrap();
        assert_eq!(same.total, 0.0);
    }

    #[test]
    fn renyi_cov_equals_log_hellinger_identity_when_means_match() {
        let mut rng = StdRng::seed_from_u64(37);
        let (data, beta, _, sigma, sigma0) = random_instance(&mut rng, 7, 3, 2);
        let r = renyi_half(&beta, &sigma, &beta, &sigma0, &data).unwrap();
        let h2 = hellinger_sq_cov(&sigma, &sigma0).unwrap();
        let n = data.n() as f64;
        assert!((r.total - (-n * (1.0 - h2).ln())).abs() < 1e-10);
        // The coarser bound used downstream.
        assert!(r.total >= 0.5 * n * (-(1.0 - h2).ln()) - 1e-10);
    }

    #[test]
    fn hellinger_scalar_value_and_symmetry() {
        let s4 = DMatrix::from_element(1, 1, 4.0);
        let s1 = DMatrix::from_element(1, 1, 1.0);
        let h = hellinger_sq_cov(&s4, &s1).unwrap();
        let expected = 1.0 - 4.0f64.powf(0.25) / 2.5f64.sqrt();
        assert!((h - expected).abs() < 1e-12);
        assert!((expected - 0.105573).abs() < 1e-6);
        assert_eq!(hellinger_sq_cov(&s1, &s1).unwrap(), 0.0);
        let mut rng = StdRng::seed_from_u64(38);
        for _ in 0..50 {
            let a = random_spd(&mut rng, 3);
            let b = random_spd(&mut rng, 3);
            let ab = hellinger_sq_cov(&a, &b).unwrap();
            let ba = hellinger_sq_cov(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-12);
        }
    }

    #[test]
    fn likelihood_difference_expands_to_quadratic_identity() {
        // l(beta, S0) - l(beta0, S0) =
        //   -1/2 sum_i ||S0^-1/2 (x_i (beta - beta0))'||^2
        //   + sum_i (y_i - x_i beta0) S0^-1 (x_i (beta - beta0))'.
        let mut rng = StdRng::seed_from_u64(39);
        for _ in 0..20 {
            let (data, beta, beta0, _, sigma0) = random_instance(&mut rng, 6, 4, 2);
            let lhs = log_likelihood(&beta, &sigma0, &data).unwrap()
                - log_likelihood(&beta0, &sigma0, &data).unwrap();
            let inv = sigma0.clone().try_inverse().unwrap();
            let delta = data.x() * (&beta - &beta0);
            let resid0 = data.y() - data.x() * &beta0;
            let quad = (&delta * &inv).component_mul(&delta).sum();
            let cross = (&resid0 * &inv).component_mul(&delta).sum();
            let rhs = -0.5 * quad + cross;
            assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn rotation_invariance() {
        // Rotating Y -> YQ, beta -> beta Q, Sigma -> Q' Sigma Q leaves
        // kl_mean and the Renyi total unchanged.
        let mut rng = StdRng::seed_from_u64(40);
        let (data, beta, beta0, sigma, sigma0) = random_instance(&mut rng, 6, 3, 3);
        let q = sample_haar_orthogonal(3, &mut rng);
        let data_rot = Dataset::new(data.x().clone(), data.y() * &q).unwrap();
        let rot = |m: &DMatrix<f64>| m * &q;
        let rot_cov = |m: &DMatrix<f64>| q.transpose() * m * &q;
        let kl_a = kl_mean(&beta, &sigma, &beta0, &sigma0, &data).unwrap();
        let kl_b = kl_mean(&rot(&beta), &rot_cov(&sigma), &rot(&beta0), &rot_cov(&sigma0), &data_rot)
            .unwrap();
        assert!((kl_a - kl_b).abs() < 1e-10);
        let r_a = renyi_half(&beta, &sigma, &beta0, &sigma0, &data).unwrap();
        let r_b = renyi_half(&rot(&beta), &rot_cov(&sigma), &rot(&beta0), &rot_cov(&sigma0), &data_rot)
            .unwrap();
        assert!((r_a.total - r_b.total).abs() < 1e-10);
    }
}
