//! Distribution checks behind the `prior-checks` experiment: Monte-Carlo
//! normalization of the slab density, Kolmogorov-Smirnov tests of the slab
//! radius law and the eigenvalue prior, Haar invariance, and the dimension
//! prior identities. Each check returns a pass/fail verdict with its
//! statistic and threshold so reports stay auditable.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::error::Result;
use crate::priors::{
    log_inverse_gaussian, log_slab_density, sample_haar_orthogonal, sample_inverse_gaussian,
    sample_slab_block, DimensionPrior,
};

/// One check outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl CheckResult {
    fn new(name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        let pass = statistic <= threshold;
        Self {
            name: name.into(),
            statistic,
            threshold,
            pass,
        }
    }
}

/// One-sample Kolmogorov-Smirnov statistic of draws against a cdf.
pub fn ks_statistic(draws: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut ks = 0.0f64;
    for (i, x) in sorted.iter().enumerate() {
        let f = cdf(*x);
        ks = ks
            .max((f - (i + 1) as f64 / n).abs())
            .max((f - i as f64 / n).abs());
    }
    ks
}

/// Asymptotic one-sample KS critical value at the 1% level.
pub fn ks_critical_1pct(n: f64) -> f64 {
    1.6276 / n.sqrt()
}

/// Two-sample KS statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (mut i, mut j) = (0usize, 0usize);
    let mut ks = 0.0f64;
    while i < sa.len() && j < sb.len() {
        if sa[i] <= sb[j] {
            i += 1;
        } else {
            j += 1;
        }
        ks = ks.max((i as f64 / sa.len() as f64 - j as f64 / sb.len() as f64).abs());
    }
    ks
}

/// Monte-Carlo integral of the slab density over R^m by importance
/// sampling from a product of univariate Laplace distributions with scale
/// `2 sqrt(m) / lambda`, whose normalization is elementary and whose tails
/// dominate the slab's. Passes when the integral is within `tol` of 1.
pub fn slab_normalization_check<R: Rng + ?Sized>(
    m: usize,
    lambda: f64,
    samples: usize,
    tol: f64,
    rng: &mut R,
) -> Result<CheckResult> {
    let scale = 2.0 * (m as f64).sqrt() / lambda;
    let ln_proposal_const = -(2.0 * scale).ln() * m as f64;
    let mut total = 0.0;
    let sizes = [m];
    for _ in 0..samples {
        let mut x = vec![0.0f64; m];
        let mut l1 = 0.0;
        for xi in x.iter_mut() {
            // Inverse-cdf Laplace draw.
            let u: f64 = rng.random::<f64>() - 0.5;
            *xi = -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln();
            l1 += xi.abs();
        }
        let ln_proposal = ln_proposal_const - l1 / scale;
        let ln_target = log_slab_density(&x, &sizes, lambda)?;
        total += (ln_target - ln_proposal).exp();
    }
    let integral = total / samples as f64;
    Ok(CheckResult::new(
        format!("slab-normalization m={m} lambda={lambda}"),
        (integral - 1.0).abs(),
        tol,
    ))
}

/// KS test of sampled per-group radii against Gamma(m, rate lambda).
pub fn slab_radius_ks_check<R: Rng + ?Sized>(
    m: usize,
    lambda: f64,
    draws: usize,
    rng: &mut R,
) -> CheckResult {
    let radii: Vec<f64> = (0..draws)
        .map(|_| sample_slab_block(m, lambda, rng).norm())
        .collect();
    let gamma = statrs::distribution::Gamma::new(m as f64, lambda).unwrap();
    let ks = ks_statistic(&radii, |x| gamma.cdf(x));
    CheckResult::new(
        format!("slab-radius-ks m={m} lambda={lambda}"),
        ks,
        ks_critical_1pct(draws as f64),
    )
}

/// Two-sample KS between the (1,1) entry of Haar draws `P` and of `Q P`
/// for a fixed orthogonal `Q`: left invariance of the sampler.
pub fn haar_invariance_check<R: Rng + ?Sized>(d: usize, draws: usize, rng: &mut R) -> CheckResult {
    let q = sample_haar_orthogonal(d, rng);
    let mut plain = Vec::with_capacity(draws);
    let mut rotated = Vec::with_capacity(draws);
    for _ in 0..draws {
        let p = sample_haar_orthogonal(d, rng);
        plain.push(p[(0, 0)]);
        rotated.push((&q * &p)[(0, 0)]);
    }
    let ks = ks_two_sample(&plain, &rotated);
    let critical = 1.6276 * ((2 * draws) as f64 / (draws * draws) as f64).sqrt();
    CheckResult::new(format!("haar-left-invariance d={d}"), ks, critical)
}

/// Haar sign balance on O(1): both signs within `tol` of half.
pub fn haar_sign_check<R: Rng + ?Sized>(draws: usize, tol: f64, rng: &mut R) -> CheckResult {
    let plus = (0..draws)
        .filter(|_| sample_haar_orthogonal(1, rng)[(0, 0)] > 0.0)
        .count();
    let freq = plus as f64 / draws as f64;
    CheckResult::new("haar-sign-balance", (freq - 0.5).abs(), tol)
}

/// Simpson quadrature of the inverse-Gaussian density over (0, hi).
pub fn inverse_gaussian_quadrature_check(mu: f64, shape: f64, tol: f64) -> CheckResult {
    let hi = (mu * 20.0).max(50.0);
    let steps = 200_000;
    let h = hi / steps as f64;
    let f = |x: f64| {
        if x <= 0.0 {
            0.0
        } else {
            log_inverse_gaussian(x, mu, shape).unwrap().exp()
        }
    };
    let mut integral = 0.0;
    for i in 0..steps {
        let a = i as f64 * h;
        integral += (f(a) + 4.0 * f(a + 0.5 * h) + f(a + h)) * h / 6.0;
    }
    CheckResult::new(
        format!("inverse-gaussian-quadrature mu={mu} shape={shape}"),
        (integral - 1.0).abs(),
        tol,
    )
}

/// KS test of the inverse-Gaussian sampler against the analytic cdf.
pub fn inverse_gaussian_ks_check<R: Rng + ?Sized>(
    mu: f64,
    shape: f64,
    draws: usize,
    rng: &mut R,
) -> CheckResult {
    let samples: Vec<f64> = (0..draws)
        .map(|_| sample_inverse_gaussian(mu, shape, rng))
        .collect();
    let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
    let cdf = |x: f64| {
        let a = (shape / x).sqrt() * (x / mu - 1.0);
        let b = -(shape / x).sqrt() * (x / mu + 1.0);
        normal.cdf(a) + (2.0 * shape / mu).exp() * normal.cdf(b)
    };
    let ks = ks_statistic(&samples, cdf);
    CheckResult::new(
        format!("inverse-gaussian-ks mu={mu} shape={shape}"),
        ks,
        ks_critical_1pct(draws as f64),
    )
}

/// The dimension-prior identities: constant successive ratio and unit
/// total mass.
pub fn dimension_prior_checks(
    num_groups: usize,
    d: usize,
    n: usize,
    p_max: usize,
    exponent: f64,
) -> Result<Vec<CheckResult>> {
    let prior = DimensionPrior::new(num_groups, d, n, p_max, exponent)?;
    let expected = prior.log_ratio();
    let mut worst_ratio = 0.0f64;
    let mut total = 0.0;
    for s in 0..=prior.max_size() {
        total += prior.log_prob(s)?.exp();
        if s >= 1 {
            let r = prior.log_prob(s)? - prior.log_prob(s - 1)?;
            worst_ratio = worst_ratio.max((r - expected).abs());
        }
    }
    Ok(vec![
        CheckResult::new(
            format!("dimension-prior-ratio G={num_groups} d={d} n={n}"),
            worst_ratio,
            1e-10,
        ),
        CheckResult::new(
            format!("dimension-prior-normalization G={num_groups} d={d} n={n}"),
            (total - 1.0).abs(),
            1e-12,
        ),
    ])
}

/// Sphere-direction symmetry of the slab sampler: the block mean is near
/// zero in every coordinate (3 standard errors, radius variance known).
pub fn slab_symmetry_check<R: Rng + ?Sized>(
    m: usize,
    lambda: f64,
    draws: usize,
    rng: &mut R,
) -> CheckResult {
    let mut mean = DVector::<f64>::zeros(m);
    for _ in 0..draws {
        mean += sample_slab_block(m, lambda, rng);
    }
    mean /= draws as f64;
    // E r^2 = m(m+1)/lambda^2, so each coordinate has variance
    // m(m+1)/(lambda^2 m) = (m+1)/lambda^2.
    let coord_sd = ((m as f64 + 1.0).sqrt()) / lambda;
    let se = coord_sd / (draws as f64).sqrt();
    let worst = mean.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
    CheckResult::new(format!("slab-symmetry m={m} lambda={lambda}"), worst, 3.0 * se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn ks_helpers_behave() {
        let mut rng = StdRng::seed_from_u64(101);
        let uniform: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let ks = ks_statistic(&uniform, |x| x.clamp(0.0, 1.0));
        assert!(ks < ks_critical_1pct(20_000.0), "uniform KS {ks}");
        // Mismatched cdf fails decisively.
        let ks_bad = ks_statistic(&uniform, |x| (x * x).clamp(0.0, 1.0));
        assert!(ks_bad > 10.0 * ks_critical_1pct(20_000.0));
        // Two-sample on identical laws is small.
        let other: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let ks2 = ks_two_sample(&uniform, &other);
        assert!(ks2 < 1.6276 * (2.0f64 / 20_000.0).sqrt());
    }

    #[test]
    fn slab_normalization_small() {
        let mut rng = StdRng::seed_from_u64(102);
        for (m, lambda) in [(1usize, 1.0), (2, 0.5), (3, 2.0)] {
            let check = slab_normalization_check(m, lambda, 200_000, 0.02, &mut rng).unwrap();
            assert!(check.pass, "{}: off by {}", check.name, check.statistic);
        }
    }

    #[test]
    fn quick_distribution_checks_pass() {
        let mut rng = StdRng::seed_from_u64(103);
        assert!(slab_radius_ks_check(2, 1.0, 20_000, &mut rng).pass);
        assert!(haar_invariance_check(3, 8_000, &mut rng).pass);
        assert!(haar_sign_check(20_000, 0.012, &mut rng).pass);
        assert!(inverse_gaussian_quadrature_check(1.0, 1.0, 0.01).pass);
        assert!(inverse_gaussian_ks_check(1.0, 2.0, 20_000, &mut rng).pass);
        assert!(slab_symmetry_check(3, 1.0, 20_000, &mut rng).pass);
        for c in dimension_prior_checks(3, 2, 50, 2, 1.0).unwrap() {
            assert!(c.pass, "{}", c.name);
        }
    }
}
