//! The exact finite mixture of Gaussians that approximates the posterior of
//! the coefficients at the true covariance: support enumeration, restricted
//! (generalized-least-squares) MLEs and information matrices, log mixture
//! weights, mixture sampling, and comparison against MCMC output.
//!
//! Active coefficients are always stacked in `SupportIndex::pairs` order:
//! response columns ascending, groups ascending within a column, original
//! column order within a group.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;
use crate::priors::{ln_slab_norm_const, log_support_prior, DimensionPrior};
use crate::types::{Dataset, GroupStructure, HyperParams, SupportIndex};

/// Hard cap on the number of enumerated supports.
pub const MAX_ENUMERATED_SUPPORTS: usize = 1_000_000;

/// All supports with total size at most `s_cap` over `G * d` (column,
/// group) pairs. Pair index `b` decodes as column `b / G`, group `b % G`.
pub fn enumerate_supports(
    groups: &GroupStructure,
    d: usize,
    s_cap: usize,
) -> Result<Vec<SupportIndex>> {
    let g = groups.num_groups();
    let total_pairs = g * d;
    let cap = s_cap.min(total_pairs);
    // Count first so the budget errors before any allocation blowup.
    let mut count = 1f64;
    let mut binom = 1f64;
    for s in 1..=cap {
        binom *= (total_pairs - s + 1) as f64 / s as f64;
        count += binom;
        if count > MAX_ENUMERATED_SUPPORTS as f64 {
            return Err(Error::BudgetExceeded(format!(
                "more than {MAX_ENUMERATED_SUPPORTS} supports of size <= {cap} over {total_pairs} pairs"
            )));
        }
    }
    let mut out = Vec::with_capacity(count as usize);
    out.push(SupportIndex::empty(d));
    for s in 1..=cap {
        let mut combo: Vec<usize> = (0..s).collect();
        'outer: loop {
            let mut support = SupportIndex::empty(d);
            for &b in &combo {
                support.insert(b / g, b % g);
            }
            out.push(support);
            // Advance to the next lexicographic combination.
            let mut i = s;
            while i > 0 {
                i -= 1;
                if combo[i] != i + total_pairs - s {
                    combo[i] += 1;
                    for j in i + 1..s {
                        combo[j] = combo[j - 1] + 1;
                    }
                    continue 'outer;
                }
            }
            break;
        }
    }
    Ok(out)
}

/// Per-support sufficient statistics shared across the whole enumeration.
struct GlsContext<'a> {
    data: &'a Dataset,
    groups: &'a GroupStructure,
    gram: DMatrix<f64>,
    /// `X' Y Sigma0^-1`, so that the normal-equations right side for pair
    /// `(k, j)` is its rows `columns(j)` of column `k`.
    xty_inv0: DMatrix<f64>,
    inv0: DMatrix<f64>,
}

impl<'a> GlsContext<'a> {
    fn new(data: &'a Dataset, groups: &'a GroupStructure, sigma0: &DMatrix<f64>) -> Result<Self> {
        if data.p() != groups.num_predictors() {
            return Err(Error::Dimension(format!(
                "data has {} predictors, groups cover {}",
                data.p(),
                groups.num_predictors()
            )));
        }
        if sigma0.nrows() != data.d() || sigma0.ncols() != data.d() {
            return Err(Error::Dimension("sigma0 must be d x d".into()));
        }
        let chol = sigma0
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("sigma0".into()))?;
        let inv0 = chol.solve(&DMatrix::identity(data.d(), data.d()));
        let gram = data.x().transpose() * data.x();
        let xty_inv0 = data.x().transpose() * data.y() * &inv0;
        Ok(Self {
            data,
            groups,
            gram,
            xty_inv0,
            inv0,
        })
    }

    /// Global design-column indices of the support, in pairs order, along
    /// with the owning response column of every coefficient.
    fn layout(&self, support: &SupportIndex) -> (Vec<usize>, Vec<usize>) {
        let mut cols = Vec::new();
        let mut owners = Vec::new();
        for (k, j) in support.pairs() {
            for c in self.groups.columns(j) {
                cols.push(c);
                owners.push(k);
            }
        }
        (cols, owners)
    }

    /// `Gamma_S = sum_i X~_{i,S} Sigma0^-1 X~'_{i,S}` and the right side
    /// `sum_i X~_{i,S} Sigma0^-1 y_i'` of the normal equations.
    fn normal_equations(&self, support: &SupportIndex) -> (DMatrix<f64>, DVector<f64>) {
        let (cols, owners) = self.layout(support);
        let m = cols.len();
        let mut gamma = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        for a in 0..m {
            rhs[a] = self.xty_inv0[(cols[a], owners[a])];
            for b in 0..m {
                gamma[(a, b)] = self.inv0[(owners[a], owners[b])] * self.gram[(cols[a], cols[b])];
            }
        }
        (gamma, rhs)
    }

    fn solve(&self, support: &SupportIndex) -> Result<RestrictedMle> {
        let p_s = support.active_coeff_count(self.groups);
        if p_s > self.data.n() {
            return Err(Error::InvalidArgument(format!(
                "support covers {p_s} coefficients but only {} observations are available",
                self.data.n()
            )));
        }
        if p_s == 0 {
            return Ok(RestrictedMle {
                mean: DVector::zeros(0),
                information: DMatrix::zeros(0, 0),
                ln_det_gamma: 0.0,
                data_fit: 0.0,
                chol_gamma: None,
            });
        }
        let (gamma, rhs) = self.normal_equations(support);
        let chol = gamma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numeric("singular information matrix Gamma_S".into()))?;
        let mean = chol.solve(&rhs);
        let ln_det_gamma = (0..p_s).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
        let data_fit = 0.5 * rhs.dot(&mean);
        Ok(RestrictedMle {
            mean,
            information: gamma / self.data.n() as f64,
            ln_det_gamma,
            data_fit,
            chol_gamma: Some(chol),
        })
    }
}

/// Restricted MLE of one support at the true covariance: the stacked
/// coefficient estimate, the per-observation information matrix
/// `I_S = Gamma_S / n`, and the weight terms that derive from it.
pub struct RestrictedMle {
    pub mean: DVector<f64>,
    pub information: DMatrix<f64>,
    /// `log det Gamma_S = log det (n I_S)`.
    pub ln_det_gamma: f64,
    /// `1/2 sum_i || Sigma0^-1/2 X~'_{i,S} beta*_S ||^2`.
    pub data_fit: f64,
    chol_gamma: Option<Cholesky<f64, Dyn>>,
}

impl RestrictedMle {
    /// `(n I_S)^-1`, the Gaussian covariance of the component.
    pub fn gaussian_covariance(&self) -> DMatrix<f64> {
        match &self.chol_gamma {
            Some(chol) => {
                let m = self.mean.len();
                chol.solve(&DMatrix::identity(m, m))
            }
            None => DMatrix::zeros(0, 0),
        }
    }
}

/// Restricted MLE `beta*_S = Gamma_S^-1 (sum_i X~_{i,S} Sigma0^-1 y_i')`
/// and information `I_S = Gamma_S / n` for a single support.
pub fn restricted_mle(
    support: &SupportIndex,
    data: &Dataset,
    groups: &GroupStructure,
    sigma0: &DMatrix<f64>,
) -> Result<RestrictedMle> {
    GlsContext::new(data, groups, sigma0)?.solve(support)
}

/// One Gaussian component of the mixture posterior.
pub struct MixtureComponent {
    pub support: SupportIndex,
    pub log_weight: f64,
    pub mle: RestrictedMle,
}

/// The enumerated mixture posterior: supports, normalized log-weights, and
/// per-support Gaussian parameters.
pub struct MixturePosterior {
    components: Vec<MixtureComponent>,
    groups: GroupStructure,
    d: usize,
    n: usize,
    s_cap: usize,
}

impl MixturePosterior {
    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn groups(&self) -> &GroupStructure {
        &self.groups
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn s_cap(&self) -> usize {
        self.s_cap
    }

    /// Index of the largest-weight component.
    pub fn top_component(&self) -> usize {
        self.components
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.log_weight.partial_cmp(&b.1.log_weight).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }

    pub fn weight_of(&self, support: &SupportIndex) -> Option<f64> {
        self.components
            .iter()
            .find(|c| &c.support == support)
            .map(|c| c.log_weight.exp())
    }

    /// Scatters a stacked active vector into a dense `p x d` matrix.
    pub fn densify(&self, component: usize, active: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.groups.num_predictors(), self.d);
        let mut idx = 0;
        for (k, j) in self.components[component].support.pairs() {
            for c in self.groups.columns(j) {
                out[(c, k)] = active[idx];
                idx += 1;
            }
        }
        out
    }
}

/// Mixture weights over the given supports:
/// `log w_S = log pi(s) - log C(Gd, s)
///   + sum_k sum_{j in S_k} p_j log(lambda_k sqrt(2 pi) / a_{p_j})
///   - 1/2 log det(n I_S) + 1/2 sum_i ||Sigma0^-1/2 X~'_{i,S} beta*_S||^2`,
/// normalized by log-sum-exp over the enumeration.
pub fn mixture_weights(
    supports: &[SupportIndex],
    data: &Dataset,
    groups: &GroupStructure,
    sigma0: &DMatrix<f64>,
    hp: &HyperParams,
    s_cap: usize,
) -> Result<MixturePosterior> {
    if supports.is_empty() {
        return Err(Error::InvalidArgument("no supports to weight".into()));
    }
    if hp.lambda().len() != data.d() {
        return Err(Error::Dimension(format!(
            "{} slab rates for {} response columns",
            hp.lambda().len(),
            data.d()
        )));
    }
    let ctx = GlsContext::new(data, groups, sigma0)?;
    let dim_prior = DimensionPrior::new(
        groups.num_groups(),
        data.d(),
        data.n(),
        groups.max_group_size(),
        hp.dim_exponent(),
    )?;
    let half_ln_two_pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut components = Vec::with_capacity(supports.len());
    for support in supports {
        let mle = ctx.solve(support)?;
        let mut lw = log_support_prior(support, &dim_prior)?;
        for (k, j) in support.pairs() {
            let p_j = groups.size(j);
            lw += p_j as f64 * (hp.lambda()[k].ln() + half_ln_two_pi - ln_slab_norm_const(p_j)?);
        }
        lw += -0.5 * mle.ln_det_gamma + mle.data_fit;
        components.push(MixtureComponent {
            support: support.clone(),
            log_weight: lw,
            mle,
        });
    }
    let log_z = log_sum_exp(
        &components
            .iter()
            .map(|c| c.log_weight)
            .collect::<Vec<f64>>(),
    );
    if !log_z.is_finite() {
        return Err(Error::Numeric("mixture normalizer is not finite".into()));
    }
    for c in &mut components {
        c.log_weight -= log_z;
    }
    Ok(MixturePosterior {
        components,
        groups: groups.clone(),
        d: data.d(),
        n: data.n(),
        s_cap,
    })
}

/// Enumerates supports up to `s_cap` and weights them in one call.
pub fn build_mixture(
    data: &Dataset,
    groups: &GroupStructure,
    sigma0: &DMatrix<f64>,
    hp: &HyperParams,
    s_cap: usize,
) -> Result<MixturePosterior> {
    let supports = enumerate_supports(groups, data.d(), s_cap)?;
    mixture_weights(&supports, data, groups, sigma0, hp, s_cap)
}

/// One draw from the mixture: the chosen component and its stacked active
/// coefficients.
pub struct MixtureDraw {
    pub component: usize,
    pub active: DVector<f64>,
}

/// Draws `count` samples: the support by weight, then the active block from
/// `N(beta*_S, (n I_S)^-1)`, zeros elsewhere.
pub fn sample_mixture<R: Rng + ?Sized>(
    mp: &MixturePosterior,
    rng: &mut R,
    count: usize,
) -> Vec<MixtureDraw> {
    let mut cumulative = Vec::with_capacity(mp.components.len());
    let mut acc = 0.0;
    for c in &mp.components {
        acc += c.log_weight.exp();
        cumulative.push(acc);
    }
    let total = acc;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let u: f64 = rng.random::<f64>() * total;
        let idx = cumulative.partition_point(|&c| c < u).min(cumulative.len() - 1);
        let comp = &mp.components[idx];
        let m = comp.mle.mean.len();
        let active = if m == 0 {
            DVector::zeros(0)
        } else {
            // Gamma_S = L L', so beta* + L^-T z has covariance Gamma_S^-1.
            let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let chol = comp
                .mle
                .chol_gamma
                .as_ref()
                .expect("nonempty support has a factor");
            let shift = chol
                .l()
                .transpose()
                .solve_upper_triangular(&z)
                .expect("triangular solve");
            &comp.mle.mean + shift
        };
        out.push(MixtureDraw {
            component: idx,
            active,
        });
    }
    out
}

/// Outcome of comparing chain samples against the mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Total variation over the support alphabet; chain supports that were
    /// not enumerated count with mixture weight zero.
    pub support_tv: f64,
    /// Pairs of the top-weight mixture support.
    pub top_support: Vec<(usize, usize)>,
    pub top_weight: f64,
    /// Number of chain samples landing on the top support.
    pub top_chain_count: usize,
    /// Worst per-coordinate |chain mean - mixture mean| on the top support,
    /// when the chain visited it.
    pub max_mean_discrepancy: Option<f64>,
    /// Worst per-coordinate relative |chain sd / mixture sd - 1| on the top
    /// support.
    pub max_sd_rel_discrepancy: Option<f64>,
    pub chain_samples: usize,
}

/// Compares chain samples (support plus stacked active coefficients in
/// pairs order) against the mixture posterior.
pub fn compare_to_chain(
    mp: &MixturePosterior,
    samples: &[(SupportIndex, DVector<f64>)],
) -> Result<ComparisonReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no chain samples".into()));
    }
    let n = samples.len() as f64;
    let mut counts: HashMap<&SupportIndex, usize> = HashMap::new();
    for (support, _) in samples {
        *counts.entry(support).or_insert(0) += 1;
    }
    // TV over the union of alphabets.
    let mut tv = 0.0;
    let mut matched = 0.0;
    for c in &mp.components {
        let emp = counts.get(&c.support).map(|&v| v as f64 / n).unwrap_or(0.0);
        matched += emp;
        tv += (emp - c.log_weight.exp()).abs();
    }
    tv += 1.0 - matched; // chain mass on supports outside the enumeration
    tv *= 0.5;

    let top = mp.top_component();
    let top_comp = &mp.components[top];
    let active: Vec<&DVector<f64>> = samples
        .iter()
        .filter(|(s, _)| s == &top_comp.support)
        .map(|(_, v)| v)
        .collect();
    let (mut mean_disc, mut sd_disc) = (None, None);
    if active.len() >= 2 && !top_comp.support.is_empty() {
        let cov_inv = top_comp.mle.gaussian_covariance();
        let m = top_comp.mle.mean.len();
        let cnt = active.len() as f64;
        let mut mean = DVector::zeros(m);
        for v in &active {
            mean += *v;
        }
        mean /= cnt;
        let mut max_mean = 0.0f64;
        let mut max_sd = 0.0f64;
        for i in 0..m {
            let var = active
                .iter()
                .map(|v| (v[i] - mean[i]) * (v[i] - mean[i]))
                .sum::<f64>()
                / (cnt - 1.0);
            max_mean = max_mean.max((mean[i] - top_comp.mle.mean[i]).abs());
            max_sd = max_sd.max((var.sqrt() / cov_inv[(i, i)].sqrt() - 1.0).abs());
        }
        mean_disc = Some(max_mean);
        sd_disc = Some(max_sd);
    }
    Ok(ComparisonReport {
        support_tv: tv,
        top_support: top_comp.support.pairs(),
        top_weight: top_comp.log_weight.exp(),
        top_chain_count: active.len(),
        max_mean_discrepancy: mean_disc,
        max_sd_rel_discrepancy: sd_disc,
        chain_samples: samples.len(),
    })
}

/// Serializable view of a mixture posterior (row-major information
/// matrices). Carries the sample count so the Gaussian covariances
/// `(n I_S)^-1` are recoverable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureExport {
    pub d: usize,
    pub n: usize,
    pub group_sizes: Vec<usize>,
    pub s_cap: usize,
    pub components: Vec<ComponentExport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentExport {
    pub support: Vec<(usize, usize)>,
    pub log_weight: f64,
    pub weight: f64,
    pub mean: Vec<f64>,
    pub information: Vec<f64>,
    pub data_fit: f64,
}

impl MixtureExport {
    pub fn from_posterior(mp: &MixturePosterior) -> Self {
        let components = mp
            .components
            .iter()
            .map(|c| {
                let info = &c.mle.information;
                let mut row_major = Vec::with_capacity(info.nrows() * info.ncols());
                for r in 0..info.nrows() {
                    for col in 0..info.ncols() {
                        row_major.push(info[(r, col)]);
                    }
                }
                ComponentExport {
                    support: c.support.pairs(),
                    log_weight: c.log_weight,
                    weight: c.log_weight.exp(),
                    mean: c.mle.mean.iter().cloned().collect(),
                    information: row_major,
                    data_fit: c.mle.data_fit,
                }
            })
            .collect();
        Self {
            d: mp.d,
            n: mp.n,
            group_sizes: mp.groups.sizes().to_vec(),
            s_cap: mp.s_cap,
            components,
        }
    }

    /// Rebuilds a working posterior (refactoring each `n I_S`).
    pub fn into_posterior(self) -> Result<MixturePosterior> {
        let groups = GroupStructure::new(self.group_sizes.clone())?;
        let mut components = Vec::with_capacity(self.components.len());
        for c in self.components {
            let support = SupportIndex::from_pairs(self.d, groups.num_groups(), &c.support)?;
            let m = c.mean.len();
            if c.information.len() != m * m {
                return Err(Error::Dimension(format!(
                    "component information has {} entries for mean length {m}",
                    c.information.len()
                )));
            }
            let information = DMatrix::from_fn(m, m, |r, col| c.information[r * m + col]);
            let gamma = &information * self.n as f64;
            let (chol_gamma, ln_det_gamma) = if m == 0 {
                (None, 0.0)
            } else {
                let chol = gamma.clone().cholesky().ok_or_else(|| {
                    Error::NotPositiveDefinite("exported information matrix".into())
                })?;
                let ln_det = (0..m).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
                (Some(chol), ln_det)
            };
            components.push(MixtureComponent {
                support,
                log_weight: c.log_weight,
                mle: RestrictedMle {
                    mean: DVector::from_vec(c.mean),
                    information,
                    ln_det_gamma,
                    data_fit: c.data_fit,
                    chol_gamma,
                },
            });
        }
        Ok(MixturePosterior {
            components,
            groups,
            d: self.d,
            n: self.n,
            s_cap: self.s_cap,
        })
    }
}
