//! Domain types shared by every other module: the fixed group structure over
//! predictor columns, datasets, per-column group supports, group-sparse
//! coefficient matrices, eigendecomposed covariances, and prior
//! hyperparameters, together with the grouped norms and the vectorization
//! helpers they all rely on.
//!
//! All types here are immutable after construction and safe to share across
//! threads; the free functions are pure.

use std::collections::BTreeSet;
use std::ops::Range;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};

/// Partition of `p` predictor columns into `G` disjoint, pre-fixed groups.
///
/// Group `j` covers the contiguous column range `columns(j)`; groups follow
/// the column order of the design matrix and are never reordered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupStructure {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl GroupStructure {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidArgument("need at least one group".into()));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument("every group size must be >= 1".into()));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0usize;
        offsets.push(0);
        for &s in &sizes {
            acc += s;
            offsets.push(acc);
        }
        Ok(Self { sizes, offsets })
    }

    /// `p` singleton groups: the ungrouped setting.
    pub fn singletons(p: usize) -> Result<Self> {
        Self::new(vec![1; p])
    }

    /// `g` groups all of the same size.
    pub fn constant(g: usize, size: usize) -> Result<Self> {
        Self::new(vec![size; g])
    }

    pub fn num_groups(&self) -> usize {
        self.sizes.len()
    }

    pub fn num_predictors(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn max_group_size(&self) -> usize {
        *self.sizes.iter().max().unwrap()
    }

    pub fn size(&self, j: usize) -> usize {
        self.sizes[j]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Column range of group `j` in the design matrix.
    pub fn columns(&self, j: usize) -> Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }
}

/// Design matrix `X` (n x p) and response matrix `Y` (n x d).
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::Dimension(format!(
                "X has {} rows but Y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "need at least one observation; use Dataset::empty for prior-only runs".into(),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("X and Y must be finite".into()));
        }
        Ok(Self { x, y })
    }

    /// Dataset with zero rows. The likelihood of any parameter is then
    /// identically one, so chains run against this sample from the prior.
    pub fn empty(p: usize, d: usize) -> Self {
        Self {
            x: DMatrix::zeros(0, p),
            y: DMatrix::zeros(0, d),
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn d(&self) -> usize {
        self.y.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }
}

/// The d-tuple `S = {S_1, ..., S_d}` of active group sets, one set per
/// response column. Group and column indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SupportIndex {
    sets: Vec<BTreeSet<usize>>,
}

impl SupportIndex {
    pub fn empty(d: usize) -> Self {
        Self {
            sets: vec![BTreeSet::new(); d],
        }
    }

    pub fn full(num_groups: usize, d: usize) -> Self {
        Self {
            sets: vec![(0..num_groups).collect(); d],
        }
    }

    /// Build from `(column, group)` pairs. Duplicates are rejected.
    pub fn from_pairs(d: usize, num_groups: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut sets = vec![BTreeSet::new(); d];
        for &(k, j) in pairs {
            if k >= d || j >= num_groups {
                return Err(Error::InvalidArgument(format!(
                    "pair (column {k}, group {j}) out of range for d={d}, G={num_groups}"
                )));
            }
            if !sets[k].insert(j) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate pair (column {k}, group {j})"
                )));
            }
        }
        Ok(Self { sets })
    }

    pub fn num_columns(&self) -> usize {
        self.sets.len()
    }

    pub fn set(&self, k: usize) -> &BTreeSet<usize> {
        &self.sets[k]
    }

    pub fn contains(&self, k: usize, j: usize) -> bool {
        self.sets[k].contains(&j)
    }

    /// Inserts `(column, group)`; returns false if already active.
    pub fn insert(&mut self, k: usize, j: usize) -> bool {
        self.sets[k].insert(j)
    }

    /// Removes `(column, group)`; returns false if it was not active.
    pub fn remove(&mut self, k: usize, j: usize) -> bool {
        self.sets[k].remove(&j)
    }

    /// Total size `s`: the number of active `(column, group)` pairs.
    pub fn total_size(&self) -> usize {
        self.sets.iter().map(|s| s.len()).sum()
    }

    /// `p_S`: the number of scalar coefficients covered by the support.
    pub fn active_coeff_count(&self, groups: &GroupStructure) -> usize {
        self.sets
            .iter()
            .map(|s| s.iter().map(|&j| groups.size(j)).sum::<usize>())
            .sum()
    }

    /// Active `(column, group)` pairs in (column, group) order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.total_size());
        for (k, set) in self.sets.iter().enumerate() {
            for &j in set {
                out.push((k, j));
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.sets.iter().all(|s| s.is_empty())
    }
}

/// Dense `p x d` coefficient matrix paired with its exact support: entries
/// outside the support's groups are zero, and every active group block holds
/// at least one nonzero entry.
#[derive(Debug, Clone)]
pub struct CoefficientMatrix {
    values: DMatrix<f64>,
    support: SupportIndex,
}

impl CoefficientMatrix {
    /// Derives the support from the nonzero pattern of `values`.
    pub fn from_values(values: DMatrix<f64>, groups: &GroupStructure) -> Result<Self> {
        if values.nrows() != groups.num_predictors() {
            return Err(Error::Dimension(format!(
                "coefficient matrix has {} rows, groups cover {}",
                values.nrows(),
                groups.num_predictors()
            )));
        }
        let support = derive_support(&values, groups);
        Ok(Self { values, support })
    }

    /// Validates that `support` is exactly the nonzero-group pattern of
    /// `values`.
    pub fn with_support(
        values: DMatrix<f64>,
        support: SupportIndex,
        groups: &GroupStructure,
    ) -> Result<Self> {
        if values.nrows() != groups.num_predictors() {
            return Err(Error::Dimension(format!(
                "coefficient matrix has {} rows, groups cover {}",
                values.nrows(),
                groups.num_predictors()
            )));
        }
        if support.num_columns() != values.ncols() {
            return Err(Error::Dimension(format!(
                "support has {} columns, coefficients have {}",
                support.num_columns(),
                values.ncols()
            )));
        }
        if derive_support(&values, groups) != support {
            return Err(Error::InvalidArgument(
                "support does not match the nonzero groups of the values".into(),
            ));
        }
        Ok(Self { values, support })
    }

    pub fn zeros(groups: &GroupStructure, d: usize) -> Self {
        Self {
            values: DMatrix::zeros(groups.num_predictors(), d),
            support: SupportIndex::empty(d),
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn support(&self) -> &SupportIndex {
        &self.support
    }

    pub fn p(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    /// The group-`j` block of column `k`.
    pub fn block(&self, k: usize, j: usize, groups: &GroupStructure) -> DVector<f64> {
        let range = groups.columns(j);
        DVector::from_iterator(range.len(), range.map(|r| self.values[(r, k)]))
    }
}

fn derive_support(values: &DMatrix<f64>, groups: &GroupStructure) -> SupportIndex {
    let mut support = SupportIndex::empty(values.ncols());
    for k in 0..values.ncols() {
        for j in 0..groups.num_groups() {
            if groups.columns(j).any(|r| values[(r, k)] != 0.0) {
                support.insert(k, j);
            }
        }
    }
    support
}

/// Covariance stored through its eigendecomposition `Sigma = P D P'`, with
/// `P` orthogonal and `D` positive, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct CovarianceEigen {
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

/// Frobenius tolerance on `P'P - I` accepted at construction.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

impl CovarianceEigen {
    pub fn new(basis: DMatrix<f64>, eigenvalues: DVector<f64>) -> Result<Self> {
        let d = eigenvalues.len();
        if basis.nrows() != d || basis.ncols() != d {
            return Err(Error::Dimension(format!(
                "basis is {}x{}, expected {d}x{d}",
                basis.nrows(),
                basis.ncols()
            )));
        }
        if eigenvalues.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("eigenvalues must be positive".into()));
        }
        let gram = basis.transpose() * &basis;
        let defect = (&gram - DMatrix::<f64>::identity(d, d)).norm();
        if defect > ORTHOGONALITY_TOL {
            return Err(Error::InvalidArgument(format!(
                "basis is not orthogonal: ||P'P - I||_F = {defect:.3e}"
            )));
        }
        let mut out = Self { basis, eigenvalues };
        out.sort_descending();
        Ok(out)
    }

    pub fn identity(d: usize) -> Self {
        Self {
            basis: DMatrix::identity(d, d),
            eigenvalues: DVector::from_element(d, 1.0),
        }
    }

    /// Eigendecomposes a symmetric positive definite matrix.
    pub fn from_spd(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension("covariance must be square".into()));
        }
        let sym = nalgebra::SymmetricEigen::new(m.clone());
        if sym.eigenvalues.iter().any(|&v| v <= 0.0) {
            return Err(Error::NotPositiveDefinite(
                "eigendecomposition produced a non-positive eigenvalue".into(),
            ));
        }
        let mut out = Self {
            basis: sym.eigenvectors,
            eigenvalues: sym.eigenvalues,
        };
        out.sort_descending();
        Ok(out)
    }

    fn sort_descending(&mut self) {
        let d = self.eigenvalues.len();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| self.eigenvalues[b].partial_cmp(&self.eigenvalues[a]).unwrap());
        if order.iter().enumerate().all(|(i, &o)| i == o) {
            return;
        }
        let basis = DMatrix::from_fn(d, d, |r, c| self.basis[(r, order[c])]);
        let eigenvalues = DVector::from_fn(d, |r, _| self.eigenvalues[order[r]]);
        self.basis = basis;
        self.eigenvalues = eigenvalues;
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// `P diag(D) P'`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |r, c| {
            self.basis[(r, c)] * self.eigenvalues[c]
        });
        let mut m = scaled * self.basis.transpose();
        // Symmetrize away factorization round-off.
        let mt = m.transpose();
        m += mt;
        m *= 0.5;
        m
    }

    pub fn log_det(&self) -> f64 {
        self.eigenvalues.iter().map(|v| v.ln()).sum()
    }
}

/// Inverse-Wishart prior on the covariance, for the conjugate variant.
#[derive(Debug, Clone)]
pub struct InverseWishartPrior {
    pub dof: f64,
    pub scale: DMatrix<f64>,
}

/// Prior hyperparameters: per-column slab rates, the dimension-prior
/// exponent, the inverse-Gaussian eigenvalue prior, and the optional
/// inverse-Wishart alternative.
#[derive(Debug, Clone)]
pub struct HyperParams {
    lambda: Vec<f64>,
    dim_exponent: f64,
    ig_mean: f64,
    ig_shape: f64,
    inverse_wishart: Option<InverseWishartPrior>,
}

impl HyperParams {
    pub fn new(lambda: Vec<f64>, dim_exponent: f64, ig_mean: f64, ig_shape: f64) -> Result<Self> {
        if lambda.is_empty() || lambda.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::InvalidArgument("slab rates must be positive".into()));
        }
        if !(dim_exponent > 0.0) || !(ig_mean > 0.0) || !(ig_shape > 0.0) {
            return Err(Error::InvalidArgument(
                "dimension exponent and inverse-Gaussian parameters must be positive".into(),
            ));
        }
        Ok(Self {
            lambda,
            dim_exponent,
            ig_mean,
            ig_shape,
            inverse_wishart: None,
        })
    }

    /// Defaults for a dataset: every slab rate at
    /// `||X||_o / (G^(1/p_max) v n)`, dimension exponent 1, unit-scale
    /// inverse-Gaussian eigenvalue prior.
    pub fn default_for(data: &Dataset, groups: &GroupStructure) -> Result<Self> {
        let norm = group_operator_norm(data.x(), groups)?;
        if !(norm > 0.0) {
            return Err(Error::InvalidArgument(
                "design matrix has zero group operator norm; supply slab rates explicitly".into(),
            ));
        }
        let g = groups.num_groups() as f64;
        let p_max = groups.max_group_size() as f64;
        let base = g.powf(1.0 / p_max).max(data.n() as f64);
        let lambda = norm / base;
        Self::new(vec![lambda; data.d()], 1.0, 1.0, 1.0)
    }

    pub fn with_inverse_wishart(mut self, dof: f64, scale: DMatrix<f64>) -> Result<Self> {
        let d = scale.nrows();
        if scale.ncols() != d {
            return Err(Error::Dimension("inverse-Wishart scale must be square".into()));
        }
        if !(dof > d as f64 - 1.0) {
            return Err(Error::InvalidArgument(format!(
                "inverse-Wishart dof must exceed d - 1 = {}",
                d as f64 - 1.0
            )));
        }
        if scale.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("inverse-Wishart scale".into()));
        }
        self.inverse_wishart = Some(InverseWishartPrior { dof, scale });
        Ok(self)
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn dim_exponent(&self) -> f64 {
        self.dim_exponent
    }

    pub fn ig_mean(&self) -> f64 {
        self.ig_mean
    }

    pub fn ig_shape(&self) -> f64 {
        self.ig_shape
    }

    pub fn inverse_wishart(&self) -> Option<&InverseWishartPrior> {
        self.inverse_wishart.as_ref()
    }
}

/// `||X||_o`: the largest spectral norm over the per-group column
/// submatrices of `X`.
pub fn group_operator_norm(x: &DMatrix<f64>, groups: &GroupStructure) -> Result<f64> {
    if x.ncols() != groups.num_predictors() {
        return Err(Error::Dimension(format!(
            "X has {} columns, groups cover {}",
            x.ncols(),
            groups.num_predictors()
        )));
    }
    let mut best = 0.0f64;
    for j in 0..groups.num_groups() {
        let cols = groups.columns(j);
        let sub = x.columns(cols.start, cols.len()).clone_owned();
        best = best.max(spectral_norm(&sub));
    }
    Ok(best)
}

/// Largest singular value, via SVD.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values()
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
}

/// `||v||_{2,1}`: the sum over groups of within-group Euclidean norms.
pub fn l21_norm(v: &[f64], groups: &GroupStructure) -> Result<f64> {
    if v.len() != groups.num_predictors() {
        return Err(Error::Dimension(format!(
            "vector has length {}, groups cover {}",
            v.len(),
            groups.num_predictors()
        )));
    }
    let mut total = 0.0;
    for j in 0..groups.num_groups() {
        let cols = groups.columns(j);
        let sq: f64 = v[cols].iter().map(|x| x * x).sum();
        total += sq.sqrt();
    }
    Ok(total)
}

/// Sum over response columns of `||beta_k - beta0_k||_{2,1}`; accepts any
/// `p x d` matrix difference.
pub fn l21_norm_matrix(m: &DMatrix<f64>, groups: &GroupStructure) -> Result<f64> {
    if m.nrows() != groups.num_predictors() {
        return Err(Error::Dimension(format!(
            "matrix has {} rows, groups cover {}",
            m.nrows(),
            groups.num_predictors()
        )));
    }
    let mut total = 0.0;
    for k in 0..m.ncols() {
        let col = m.column(k);
        for j in 0..groups.num_groups() {
            let sq: f64 = groups.columns(j).map(|r| col[r] * col[r]).sum();
            total += sq.sqrt();
        }
    }
    Ok(total)
}

/// `Vec(beta)`: the columns of `beta` stacked into a `1 x pd` row vector.
pub fn vectorize(values: &DMatrix<f64>) -> RowDVector<f64> {
    RowDVector::from_row_slice(values.as_slice())
}

/// The `pd x d` block matrix `I_d (x) x_i'` pairing with `Vec(beta)`:
/// `Vec(beta) * design_block(x_i, d) = x_i * beta` as a `1 x d` row.
pub fn design_block(x_row: &[f64], d: usize) -> DMatrix<f64> {
    let p = x_row.len();
    let mut m = DMatrix::zeros(p * d, d);
    for k in 0..d {
        for r in 0..p {
            m[(k * p + r, k)] = x_row[r];
        }
    }
    m
}
