//! Synthetic data: standard-normal design, group-sparse truth with
//! fixed-norm active blocks on random sphere directions, and Gaussian noise
//! with an eigenvalue-controlled covariance.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::harness::config::DataSpec;
use crate::priors::sample_haar_orthogonal;
use crate::types::{l21_norm_matrix, Dataset, GroupStructure, HyperParams, SupportIndex};

/// A generated instance along with its ground truth.
pub struct GeneratedData {
    pub data: Dataset,
    pub groups: GroupStructure,
    pub beta0: DMatrix<f64>,
    pub sigma0: DMatrix<f64>,
    pub support0: SupportIndex,
}

impl GeneratedData {
    /// Whether the truth lies in the admissible signal-budget set:
    /// `sum_k ||beta0_k||_21 <= beta_bar` with
    /// `beta_bar = s0 (log G v p_max log n) / max_k lambda_k`.
    pub fn b0_membership(&self, hp: &HyperParams) -> (bool, f64, f64) {
        let total = l21_norm_matrix(&self.beta0, &self.groups).unwrap();
        let max_lambda = hp.lambda().iter().cloned().fold(0.0f64, f64::max);
        let ln_g = (self.groups.num_groups() as f64).ln();
        let ln_n = (self.data.n() as f64).ln();
        let beta_bar = self.support0.total_size() as f64
            * ln_g.max(self.groups.max_group_size() as f64 * ln_n)
            / max_lambda;
        (total <= beta_bar, total, beta_bar)
    }
}

/// Draws one instance: `X` rows iid standard normal, `s0` active pairs
/// chosen uniformly with blocks of norm `signal` on uniform directions,
/// `Sigma0 = Q diag(eigs) Q'` with `eigs` uniform in the configured range,
/// and `Y = X beta0 + noise`.
pub fn generate_data<R: Rng + ?Sized>(spec: &DataSpec, rng: &mut R) -> Result<GeneratedData> {
    spec.validate()?;
    let groups = spec.groups()?;
    let p = groups.num_predictors();
    let d = spec.d;
    let x = DMatrix::from_fn(spec.n, p, |_, _| rng.sample::<f64, _>(StandardNormal));

    // Truth: s0 uniformly chosen (column, group) pairs.
    let mut all_pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|k| (0..groups.num_groups()).map(move |j| (k, j)))
        .collect();
    all_pairs.shuffle(rng);
    let chosen: Vec<(usize, usize)> = if spec.signal > 0.0 {
        all_pairs.into_iter().take(spec.s0).collect()
    } else {
        Vec::new()
    };
    let support0 = SupportIndex::from_pairs(d, groups.num_groups(), &chosen)?;
    let mut beta0 = DMatrix::zeros(p, d);
    for &(k, j) in &chosen {
        let m = groups.size(j);
        let mut dir = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut norm = dir.norm();
        while norm == 0.0 {
            dir = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            norm = dir.norm();
        }
        dir *= spec.signal / norm;
        for (bi, r) in groups.columns(j).enumerate() {
            beta0[(r, k)] = dir[bi];
        }
    }

    // Covariance: eigenvalues uniform in [b1, b2], Haar basis when rotated.
    let eigs = DVector::from_fn(d, |_, _| {
        spec.sigma0.eig_min + rng.random::<f64>() * (spec.sigma0.eig_max - spec.sigma0.eig_min)
    });
    let q = if spec.sigma0.rotate {
        sample_haar_orthogonal(d, rng)
    } else {
        DMatrix::identity(d, d)
    };
    let scaled = DMatrix::from_fn(d, d, |r, c| q[(r, c)] * eigs[c]);
    let mut sigma0 = scaled * q.transpose();
    // Symmetrize round-off.
    let t = sigma0.transpose();
    sigma0 += t;
    sigma0 *= 0.5;

    // Noise rows e_i = z_i L' for Sigma0 = L L'.
    let chol = sigma0.clone().cholesky().expect("constructed SPD");
    let z = DMatrix::from_fn(spec.n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = z * chol.l().transpose();
    let y = &x * &beta0 + noise;

    Ok(GeneratedData {
        data: Dataset::new(x, y)?,
        groups,
        beta0,
        sigma0,
        support0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn zero_signal_gives_empty_truth() {
        let mut rng = StdRng::seed_from_u64(81);
        let spec = DataSpec {
            signal: 0.0,
            ..DataSpec::default()
        };
        let gen = generate_data(&spec, &mut rng).unwrap();
        assert!(gen.support0.is_empty());
        assert_eq!(gen.beta0.norm(), 0.0);
    }

    #[test]
    fn unit_variance_univariate_noise() {
        let mut rng = StdRng::seed_from_u64(82);
        let spec = DataSpec {
            n: 4000,
            num_groups: 3,
            group_size: 1,
            d: 1,
            s0: 1,
            signal: 1.0,
            sigma0: crate::harness::config::Sigma0Spec {
                eig_min: 1.0,
                eig_max: 1.0,
                rotate: false,
            },
            ..DataSpec::default()
        };
        let gen = generate_data(&spec, &mut rng).unwrap();
        let resid = gen.data.y() - gen.data.x() * &gen.beta0;
        let var = resid.norm_squared() / (spec.n as f64);
        // Variance 1; the sample variance has sd sqrt(2/n).
        assert!(
            (var - 1.0).abs() < 3.0 * (2.0 / spec.n as f64).sqrt(),
            "residual variance {var}"
        );
    }

    #[test]
    fn noise_covariance_approaches_sigma0() {
        let mut rng = StdRng::seed_from_u64(83);
        let spec = DataSpec {
            n: 10_000,
            num_groups: 2,
            group_size: 1,
            d: 3,
            s0: 2,
            signal: 0.7,
            ..DataSpec::default()
        };
        let gen = generate_data(&spec, &mut rng).unwrap();
        let resid = gen.data.y() - gen.data.x() * &gen.beta0;
        let emp = resid.transpose() * &resid / spec.n as f64;
        assert!(
            (emp - &gen.sigma0).norm() < 0.1,
            "covariance error {}",
            (resid.transpose() * &resid / spec.n as f64 - &gen.sigma0).norm()
        );
        // Eigenvalues inside the configured band.
        let eigs = nalgebra::SymmetricEigen::new(gen.sigma0.clone()).eigenvalues;
        for e in eigs.iter() {
            assert!(*e >= 0.5 - 1e-9 && *e <= 2.0 + 1e-9);
        }
    }

    #[test]
    fn active_blocks_have_configured_norm() {
        let mut rng = StdRng::seed_from_u64(84);
        let spec = DataSpec::default();
        let gen = generate_data(&spec, &mut rng).unwrap();
        assert_eq!(gen.support0.total_size(), 3);
        for (k, j) in gen.support0.pairs() {
            let sq: f64 = gen
                .groups
                .columns(j)
                .map(|r| gen.beta0[(r, k)] * gen.beta0[(r, k)])
                .sum();
            assert!((sq.sqrt() - 1.0).abs() < 1e-12);
        }
        // Membership check runs.
        let hp = HyperParams::default_for(&gen.data, &gen.groups).unwrap();
        let (member, total, bar) = gen.b0_membership(&hp);
        assert!(total > 0.0 && bar > 0.0);
        // With the default small lambda the budget is generous.
        assert!(member);
    }
}
