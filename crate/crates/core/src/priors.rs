//! Log-densities and exact samplers for every prior in the model: the
//! geometric dimension prior over the support size, the l2,1 slab on active
//! coefficient blocks, the Haar/inverse-Gaussian eigendecomposition prior on
//! the covariance, the conjugate inverse-Wishart alternative, and the
//! Wishart eigenvalue tail-bound calculators.
//!
//! Everything is computed in log space; gamma functions go through
//! `ln_gamma` so that large block dimensions cannot overflow.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::numeric::{ln_binomial, ln_multivariate_gamma, log_sum_exp};
use crate::types::SupportIndex;

/// ln of the slab normalizing constant `a_m = sqrt(pi) *
/// (Gamma(m+1)/Gamma(m/2+1))^(1/m)` for a block of dimension `m`.
pub fn ln_slab_norm_const(m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("block dimension must be >= 1".into()));
    }
    let m_f = m as f64;
    Ok(0.5 * std::f64::consts::PI.ln() + (ln_gamma(m_f + 1.0) - ln_gamma(m_f / 2.0 + 1.0)) / m_f)
}

/// `a_m` itself; `a_1 = 2`, `a_2 = sqrt(2 pi)`, and `a_m` grows like
/// `sqrt(m)`.
pub fn slab_norm_const(m: usize) -> Result<f64> {
    ln_slab_norm_const(m).map(f64::exp)
}

/// Cache of `a_m` for `m = 1..=p_max`, indexed by block dimension.
#[derive(Debug, Clone)]
pub struct SlabConstantTable {
    ln_consts: Vec<f64>,
}

impl SlabConstantTable {
    pub fn new(p_max: usize) -> Result<Self> {
        let ln_consts = (1..=p_max)
            .map(ln_slab_norm_const)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ln_consts })
    }

    pub fn ln_const(&self, m: usize) -> f64 {
        self.ln_consts[m - 1]
    }

    pub fn max_dim(&self) -> usize {
        self.ln_consts.len()
    }
}

/// Log slab density of the stacked active blocks of one response column:
/// `sum_j p_j log(lambda / a_{p_j}) - lambda * sum_j ||block_j||`.
///
/// `stacked` concatenates the active blocks in group order;
/// `active_sizes` lists their dimensions.
pub fn log_slab_density(stacked: &[f64], active_sizes: &[usize], lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("slab rate must be positive".into()));
    }
    let total: usize = active_sizes.iter().sum();
    if stacked.len() != total {
        return Err(Error::Dimension(format!(
            "stacked blocks have length {}, active sizes sum to {total}",
            stacked.len()
        )));
    }
    let ln_lambda = lambda.ln();
    let mut out = 0.0;
    let mut offset = 0;
    for &m in active_sizes {
        out += m as f64 * (ln_lambda - ln_slab_norm_const(m)?);
        let norm_sq: f64 = stacked[offset..offset + m].iter().map(|v| v * v).sum();
        out -= lambda * norm_sq.sqrt();
        offset += m;
    }
    Ok(out)
}

/// Draws one active block of dimension `m` from the slab: a uniform
/// direction on the unit sphere scaled by a Gamma(m, rate lambda) radius.
pub fn sample_slab_block<R: Rng + ?Sized>(m: usize, lambda: f64, rng: &mut R) -> DVector<f64> {
    assert!(m >= 1 && lambda > 0.0);
    let mut dir = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut norm = dir.norm();
    while norm == 0.0 {
        dir = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        norm = dir.norm();
    }
    // rand_distr parameterizes Gamma by shape/scale.
    let radius = Gamma::new(m as f64, 1.0 / lambda).unwrap().sample(rng);
    dir * (radius / norm)
}

/// Draws the stacked active blocks of one response column.
pub fn sample_slab<R: Rng + ?Sized>(
    active_sizes: &[usize],
    lambda: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("slab rate must be positive".into()));
    }
    let mut out = Vec::with_capacity(active_sizes.iter().sum());
    for &m in active_sizes {
        if m == 0 {
            return Err(Error::InvalidArgument("active group of size zero".into()));
        }
        out.extend_from_slice(sample_slab_block(m, lambda, rng).as_slice());
    }
    Ok(out)
}

/// Normalized geometric prior on the total support size `s` over
/// `{0, ..., G d}`: `pi(s)` proportional to `(G v n^p_max)^(-a s)`, so that
/// successive ratios are constant.
#[derive(Debug, Clone)]
pub struct DimensionPrior {
    log_ratio: f64,
    log_z: f64,
    max_size: usize,
}

impl DimensionPrior {
    pub fn new(num_groups: usize, d: usize, n: usize, p_max: usize, exponent: f64) -> Result<Self> {
        if num_groups == 0 || d == 0 || p_max == 0 {
            return Err(Error::InvalidArgument(
                "group count, response dimension, and p_max must be positive".into(),
            ));
        }
        if !(exponent > 0.0) {
            return Err(Error::InvalidArgument("dimension exponent must be positive".into()));
        }
        let ln_g = (num_groups as f64).ln();
        // n = 0 makes n^p_max vanish, leaving G as the base.
        let log_base = if n == 0 {
            ln_g
        } else {
            ln_g.max(p_max as f64 * (n as f64).ln())
        };
        let max_size = num_groups * d;
        let log_ratio = -exponent * log_base;
        let terms: Vec<f64> = (0..=max_size).map(|s| s as f64 * log_ratio).collect();
        let log_z = log_sum_exp(&terms);
        Ok(Self {
            log_ratio,
            log_z,
            max_size,
        })
    }

    /// log pi(s).
    pub fn log_prob(&self, s: usize) -> Result<f64> {
        if s > self.max_size {
            return Err(Error::InvalidArgument(format!(
                "support size {s} exceeds G*d = {}",
                self.max_size
            )));
        }
        Ok(s as f64 * self.log_ratio - self.log_z)
    }

    /// log pi(s) - log pi(s-1), constant by construction.
    pub fn log_ratio(&self) -> f64 {
        self.log_ratio
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }
}

/// log pi(s) for the concrete dimension prior.
pub fn log_dimension_prior(
    s: usize,
    num_groups: usize,
    d: usize,
    n: usize,
    p_max: usize,
    exponent: f64,
) -> Result<f64> {
    DimensionPrior::new(num_groups, d, n, p_max, exponent)?.log_prob(s)
}

/// log of the support prior `pi(s) / C(Gd, s)`: the dimension prior spread
/// uniformly over the supports of that size.
pub fn log_support_prior(support: &SupportIndex, dim_prior: &DimensionPrior) -> Result<f64> {
    let s = support.total_size();
    Ok(dim_prior.log_prob(s)? - ln_binomial(dim_prior.max_size(), s))
}

/// Haar-distributed d x d orthogonal matrix: QR of an i.i.d. standard
/// normal matrix with the signs of the triangular factor's diagonal folded
/// into Q.
pub fn sample_haar_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    assert!(d >= 1);
    let z = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = z.qr();
    let r = qr.r();
    let mut q = qr.q();
    for c in 0..d {
        if r[(c, c)] < 0.0 {
            for row in 0..d {
                q[(row, c)] = -q[(row, c)];
            }
        }
    }
    q
}

/// Inverse-Gaussian log-density with mean `mu` and shape `shape`.
pub fn log_inverse_gaussian(x: f64, mu: f64, shape: f64) -> Result<f64> {
    if !(x > 0.0) || !(mu > 0.0) || !(shape > 0.0) {
        return Err(Error::InvalidArgument(
            "inverse-Gaussian arguments must be positive".into(),
        ));
    }
    let diff = x - mu;
    Ok(0.5 * (shape.ln() - (2.0 * std::f64::consts::PI).ln() - 3.0 * x.ln())
        - shape * diff * diff / (2.0 * mu * mu * x))
}

/// Inverse-Gaussian draw (Michael-Schucany-Haas transformation).
pub fn sample_inverse_gaussian<R: Rng + ?Sized>(mu: f64, shape: f64, rng: &mut R) -> f64 {
    assert!(mu > 0.0 && shape > 0.0);
    let z: f64 = rng.sample(StandardNormal);
    let y = z * z;
    let x = mu + mu * mu * y / (2.0 * shape)
        - mu / (2.0 * shape) * (4.0 * mu * shape * y + mu * mu * y * y).sqrt();
    let u: f64 = rng.random();
    if u <= mu / (mu + x) {
        x
    } else {
        mu * mu / x
    }
}

/// Inverse-Wishart log-density of `sigma` with degrees of freedom `dof` and
/// scale matrix `scale`, including the exact normalizing constant.
pub fn log_inverse_wishart(sigma: &DMatrix<f64>, dof: f64, scale: &DMatrix<f64>) -> Result<f64> {
    let d = sigma.nrows();
    if sigma.ncols() != d || scale.nrows() != d || scale.ncols() != d {
        return Err(Error::Dimension("sigma and scale must be square d x d".into()));
    }
    if !(dof > d as f64 - 1.0) {
        return Err(Error::InvalidArgument(format!(
            "inverse-Wishart dof {dof} must exceed d - 1 = {}",
            d as f64 - 1.0
        )));
    }
    let scale_chol = scale
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("inverse-Wishart scale".into()))?;
    let sigma_chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("inverse-Wishart argument".into()))?;
    let ln_det_scale = 2.0 * (0..d).map(|i| scale_chol.l()[(i, i)].ln()).sum::<f64>();
    let ln_det_sigma = 2.0 * (0..d).map(|i| sigma_chol.l()[(i, i)].ln()).sum::<f64>();
    let trace = sigma_chol.solve(scale).trace();
    Ok(0.5 * dof * ln_det_scale
        - 0.5 * dof * d as f64 * 2.0f64.ln()
        - ln_multivariate_gamma(d, 0.5 * dof)
        - 0.5 * (dof + d as f64 + 1.0) * ln_det_sigma
        - 0.5 * trace)
}

/// Wishart(dof, scale) draw via the Bartlett decomposition.
pub fn sample_wishart<R: Rng + ?Sized>(
    dof: f64,
    scale: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let d = scale.nrows();
    if scale.ncols() != d {
        return Err(Error::Dimension("Wishart scale must be square".into()));
    }
    if !(dof > d as f64 - 1.0) {
        return Err(Error::InvalidArgument(format!(
            "Wishart dof {dof} must exceed d - 1 = {}",
            d as f64 - 1.0
        )));
    }
    let chol = scale
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Wishart scale".into()))?;
    let a = bartlett_factor(d, dof, rng);
    let la = chol.l() * a;
    Ok(&la * la.transpose())
}

/// Inverse-Wishart(dof, scale) draw: the inverse of a Wishart(dof,
/// scale^-1) draw, formed without explicit matrix inversion.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    dof: f64,
    scale: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let d = scale.nrows();
    if scale.ncols() != d {
        return Err(Error::Dimension("inverse-Wishart scale must be square".into()));
    }
    if !(dof > d as f64 - 1.0) {
        return Err(Error::InvalidArgument(format!(
            "inverse-Wishart dof {dof} must exceed d - 1 = {}",
            d as f64 - 1.0
        )));
    }
    let chol = scale
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("inverse-Wishart scale".into()))?;
    // With scale = C C' and Bartlett factor A for the identity-scale
    // Wishart, sigma = (A^-1 C')' (A^-1 C') has the target law.
    let a = bartlett_factor(d, dof, rng);
    let t = a
        .solve_lower_triangular(&chol.l().transpose())
        .ok_or_else(|| Error::Numeric("Bartlett factor was singular".into()))?;
    Ok(t.transpose() * t)
}

fn bartlett_factor<R: Rng + ?Sized>(d: usize, dof: f64, rng: &mut R) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(dof - i as f64).unwrap();
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    a
}

/// Conjugate inverse-Wishart update from residual rows `r_i = y_i - x_i
/// beta`: dof picks up `n`, the scale picks up `sum_i r_i' r_i`.
pub fn iw_conjugate_update(dof: f64, scale: &DMatrix<f64>, residuals: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let updated = scale + residuals.transpose() * residuals;
    (dof + residuals.nrows() as f64, updated)
}

/// The three Lemma-style eigenvalue tail bounds for a Wishart matrix
/// together with Monte-Carlo estimates of the corresponding event
/// probabilities. `rho_1 <= ... <= rho_d` are the ascending eigenvalues of
/// a `W_d(dof, psi)` draw.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WishartTailReport {
    /// log upper bound on P(rho_d >= t1 ||psi||).
    pub log_upper_largest: f64,
    /// log upper bound on P(rho_1 <= t2).
    pub log_upper_smallest: f64,
    /// log lower bound on P(a_k <= rho_k <= a_k (1 + t3) for all k).
    pub log_lower_interval: f64,
    pub empirical_largest: f64,
    pub empirical_smallest: f64,
    pub empirical_interval: f64,
    pub draws: usize,
}

impl WishartTailReport {
    pub fn upper_largest(&self) -> f64 {
        self.log_upper_largest.exp()
    }

    pub fn upper_smallest(&self) -> f64 {
        self.log_upper_smallest.exp()
    }

    pub fn lower_interval(&self) -> f64 {
        self.log_lower_interval.exp()
    }
}

/// Parameters for [`wishart_tail_bounds`].
#[derive(Debug, Clone)]
pub struct WishartTailConfig {
    pub dof: usize,
    pub psi: DMatrix<f64>,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    /// Ascending interval anchors `a_1 <= ... <= a_d`.
    pub anchors: Vec<f64>,
    pub draws: usize,
}

/// Evaluates the three tail bounds in log space and estimates the event
/// probabilities from `draws` Wishart samples.
pub fn wishart_tail_bounds<R: Rng + ?Sized>(
    cfg: &WishartTailConfig,
    rng: &mut R,
) -> Result<WishartTailReport> {
    let d = cfg.psi.nrows();
    let nu = cfg.dof as f64;
    if cfg.psi.ncols() != d {
        return Err(Error::Dimension("psi must be square".into()));
    }
    if cfg.dof < d {
        return Err(Error::InvalidArgument("dof must be at least d".into()));
    }
    if !(cfg.t1 > nu * d as f64) {
        return Err(Error::InvalidArgument(format!(
            "t1 must exceed dof * d = {}",
            nu * d as f64
        )));
    }
    if !(cfg.t2 > 0.0) || !(0.0..=1.0).contains(&cfg.t3) {
        return Err(Error::InvalidArgument("need t2 > 0 and t3 in [0, 1]".into()));
    }
    if cfg.anchors.len() != d
        || cfg.anchors.windows(2).any(|w| w[0] > w[1])
        || cfg.anchors.iter().any(|&a| a < 0.0)
    {
        return Err(Error::InvalidArgument(
            "anchors must be d nonnegative ascending values".into(),
        ));
    }
    let psi_chol = cfg
        .psi
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("psi".into()))?;
    let ln_det_psi = 2.0 * (0..d).map(|i| psi_chol.l()[(i, i)].ln()).sum::<f64>();
    let psi_spectral = crate::types::spectral_norm(&cfg.psi);
    let trace_psi_inv = psi_chol.solve(&DMatrix::identity(d, d)).trace();
    let d_f = d as f64;

    let log_upper_largest =
        0.5 * nu * d_f * (cfg.t1 / (nu * d_f)).ln() + 0.5 * nu * d_f - 0.5 * cfg.t1;

    let log_upper_smallest = 0.5 * d_f * (nu + d_f) * ((nu + d_f) / (2.0 * std::f64::consts::E)).ln()
        + d_f * (std::f64::consts::E * (nu + d_f) / std::f64::consts::PI.sqrt()).ln()
        - 0.5 * (nu + d_f + 1.0) * 2.0f64.ln()
        + 0.5 * (nu - d_f - 1.0) * cfg.t2.ln()
        - 0.5 * nu * ln_det_psi
        + 0.5 * (d_f - 1.0) * (nu + 1.0) * psi_spectral.ln();

    let e = std::f64::consts::E;
    let a1 = cfg.anchors[0];
    let log_lower_interval = if a1 > 0.0 && cfg.t3 > 0.0 {
        -d_f * (a1 * cfg.t3 * e * e * nu / (8.0 * std::f64::consts::PI.sqrt())).ln()
            - 0.5 * nu * d_f * (2.0 * nu * d_f / (e * a1 * cfg.t3)).ln()
            - 0.5 * d_f * d_f * (d_f / (2.0 * e)).ln()
            - 0.5 * nu * ln_det_psi
            - 0.5 * a1 * (1.0 + cfg.t3) * trace_psi_inv
    } else {
        f64::NEG_INFINITY
    };

    let mut hit_largest = 0usize;
    let mut hit_smallest = 0usize;
    let mut hit_interval = 0usize;
    for _ in 0..cfg.draws {
        let w = sample_wishart(nu, &cfg.psi, rng)?;
        let mut eigs: Vec<f64> = nalgebra::SymmetricEigen::new(w).eigenvalues.iter().cloned().collect();
        eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        if eigs[d - 1] >= cfg.t1 * psi_spectral {
            hit_largest += 1;
        }
        if eigs[0] <= cfg.t2 {
            hit_smallest += 1;
        }
        if eigs
            .iter()
            .zip(&cfg.anchors)
            .all(|(&rho, &a)| a <= rho && rho <= a * (1.0 + cfg.t3))
        {
            hit_interval += 1;
        }
    }
    let n = cfg.draws as f64;
    Ok(WishartTailReport {
        log_upper_largest,
        log_upper_smallest,
        log_lower_interval,
        empirical_largest: hit_largest as f64 / n,
        empirical_smallest: hit_smallest as f64 / n,
        empirical_interval: hit_interval as f64 / n,
        draws: cfg.draws,
    })
}
