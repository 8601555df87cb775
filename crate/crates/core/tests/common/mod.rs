//! Shared oracles for the integration suites: an independent
//! quadrature-based support posterior for chains with a known covariance,
//! and small statistics helpers. Everything here deliberately avoids the
//! code paths it is used to check: integrals are tensor-product trapezoid
//! sums, linear solves go through explicit triangular inversion.

use nalgebra::{DMatrix, DVector};

use groupslab::bvm::enumerate_supports;
use groupslab::priors::{log_support_prior, slab_norm_const, DimensionPrior};
use groupslab::types::{Dataset, GroupStructure, HyperParams, SupportIndex};

/// Tensor-product trapezoid integral of
/// `exp(-||u||^2/2 - lambda * ||bhat + m u||_21)` over `[-8, 8]^dim`,
/// where the l2,1 norm uses the block sizes of the active groups.
fn whitened_slab_integral(
    bhat: &DVector<f64>,
    m: &DMatrix<f64>,
    sizes: &[usize],
    lambda: f64,
    nodes: usize,
) -> f64 {
    let dim = bhat.len();
    let lo = -8.0f64;
    let h = 16.0 / (nodes - 1) as f64;
    let mut idx = vec![0usize; dim];
    let mut total = 0.0;
    loop {
        let u = DVector::from_fn(dim, |i, _| lo + idx[i] as f64 * h);
        let b = bhat + m * &u;
        let mut l21 = 0.0;
        let mut off = 0;
        for &sz in sizes {
            let sq: f64 = (0..sz).map(|i| b[off + i] * b[off + i]).sum();
            l21 += sq.sqrt();
            off += sz;
        }
        total += (-0.5 * u.norm_squared() - lambda * l21).exp();
        // Odometer.
        let mut carry = 0;
        loop {
            idx[carry] += 1;
            if idx[carry] < nodes {
                break;
            }
            idx[carry] = 0;
            carry += 1;
            if carry == dim {
                return total * h.powi(dim as i32);
            }
        }
    }
}

/// Lower-triangular inverse by forward substitution.
fn invert_lower(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for col in 0..n {
        let mut e = DVector::zeros(n);
        e[col] = 1.0;
        for r in 0..n {
            let mut v = e[r];
            for c in 0..r {
                v -= l[(r, c)] * inv[(c, col)];
            }
            inv[(r, col)] = v / l[(r, r)];
        }
    }
    inv
}

/// Cholesky by the textbook recurrence (independent of nalgebra's).
fn cholesky_lower(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                assert!(sum > 0.0, "oracle Cholesky hit a non-positive pivot");
                l[(i, j)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    l
}

/// Exact (up to quadrature) posterior over all supports for a model with a
/// known diagonal covariance: per response column the marginal likelihood
/// factorizes, and each column integral is evaluated by whitened trapezoid
/// quadrature. Returns `(support, probability)` pairs covering every
/// support.
pub fn quadrature_support_posterior(
    data: &Dataset,
    groups: &GroupStructure,
    sigma_diag: &[f64],
    hp: &HyperParams,
    nodes: usize,
) -> Vec<(SupportIndex, f64)> {
    let d = data.d();
    assert_eq!(sigma_diag.len(), d);
    let g = groups.num_groups();
    let dim_prior = DimensionPrior::new(
        g,
        d,
        data.n(),
        groups.max_group_size(),
        hp.dim_exponent(),
    )
    .unwrap();
    let supports = enumerate_supports(groups, d, g * d).unwrap();
    let mut logs = Vec::with_capacity(supports.len());
    for support in &supports {
        let mut lm = log_support_prior(support, &dim_prior).unwrap();
        for k in 0..d {
            let active: Vec<usize> = support.set(k).iter().cloned().collect();
            if active.is_empty() {
                continue;
            }
            let lambda = hp.lambda()[k];
            let sizes: Vec<usize> = active.iter().map(|&j| groups.size(j)).collect();
            let cols: Vec<usize> = active.iter().flat_map(|&j| groups.columns(j)).collect();
            let m = cols.len();
            // Slab normalizing factors.
            for &sz in &sizes {
                lm += sz as f64 * (lambda.ln() - slab_norm_const(sz).unwrap().ln());
            }
            // Whitened Gaussian part at sigma_kk.
            let var = sigma_diag[k];
            let mut a = DMatrix::zeros(m, m);
            let mut c = DVector::zeros(m);
            for r in 0..m {
                for s in 0..m {
                    a[(r, s)] = data.x().column(cols[r]).dot(&data.x().column(cols[s])) / var;
                }
                c[r] = data.x().column(cols[r]).dot(&data.y().column(k)) / var;
            }
            let l = cholesky_lower(&a);
            let l_inv = invert_lower(&l);
            // bhat solves A b = c.
            let bhat = l_inv.transpose() * (&l_inv * &c);
            let fit = 0.5 * c.dot(&bhat);
            let ln_det_a = 2.0 * (0..m).map(|i| l[(i, i)].ln()).sum::<f64>();
            let integral = whitened_slab_integral(&bhat, &l_inv.transpose(), &sizes, lambda, nodes);
            lm += fit - 0.5 * ln_det_a + integral.ln();
        }
        logs.push(lm);
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    supports
        .into_iter()
        .zip(logs)
        .map(|(s, l)| (s, ((l - max).exp() / z)))
        .collect()
}

/// Total variation between an exact support posterior and empirical counts.
#[allow(dead_code)] // used by the acceptance suite only
pub fn support_tv(
    exact: &[(SupportIndex, f64)],
    counts: &std::collections::HashMap<SupportIndex, usize>,
    total: usize,
) -> f64 {
    let mut tv = 0.0;
    let mut seen = 0usize;
    for (support, prob) in exact {
        let emp = counts.get(support).map(|&c| c as f64).unwrap_or(0.0) / total as f64;
        seen += counts.get(support).cloned().unwrap_or(0);
        tv += (emp - prob).abs();
    }
    // The enumeration is complete, so every chain support is covered.
    assert_eq!(seen, total, "chain visited a support outside the enumeration");
    0.5 * tv
}
