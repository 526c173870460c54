//! Prior covariance choices for the regularized estimator.
//!
//! Every built-in prior is simultaneously diagonalizable with the predictor
//! covariance: it is a function phi of the covariance eigenvalues applied on
//! the leading d-dimensional eigenspace. A materialization therefore never
//! stores a dense p x p matrix, only the retained basis and the per-direction
//! weights; the solver works in that subspace and lifts the result back.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue threshold below which a direction counts as numerically
/// null: eigenvalues <= RANK_TOLERANCE * lambda_1 are unusable.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Symbolic choice of the prior covariance.
///
/// `tau` tunes the penalty strength, `d` is the cut-off dimension of the
/// subspace variants. `Spectral` takes an explicit table of per-eigenvalue
/// weights for the leading d directions.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    /// phi(l) = 1/(tau l) on the full space; reproduces the unregularized
    /// estimator for every tau.
    Sir { tau: f64 },
    /// phi(l) = 1/tau on the full space.
    Ridge { tau: f64 },
    /// phi(l) = 1/(tau l) on the leading d directions; the fitted direction
    /// does not depend on tau.
    PcaSir { d: usize, tau: f64 },
    /// phi(l) = l/tau on the full space.
    Tikhonov { tau: f64 },
    /// phi(l) = 1/tau on the leading d directions.
    PcaRidge { d: usize, tau: f64 },
    /// phi(l) = l/tau on the leading d directions.
    PcaTikhonov { d: usize, tau: f64 },
    /// Explicit weights phi(lambda_1), ..., phi(lambda_d).
    Spectral { d: usize, weights: Vec<f64> },
}

impl PriorSpec {
    /// Flag-style name of the variant.
    pub fn name(&self) -> &'static str {
        match self {
            PriorSpec::Sir { .. } => "sir",
            PriorSpec::Ridge { .. } => "ridge",
            PriorSpec::PcaSir { .. } => "pca-sir",
            PriorSpec::Tikhonov { .. } => "tikhonov",
            PriorSpec::PcaRidge { .. } => "pca-ridge",
            PriorSpec::PcaTikhonov { .. } => "pca-tikhonov",
            PriorSpec::Spectral { .. } => "spectral",
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match self {
            PriorSpec::Sir { tau }
            | PriorSpec::Ridge { tau }
            | PriorSpec::PcaSir { tau, .. }
            | PriorSpec::Tikhonov { tau }
            | PriorSpec::PcaRidge { tau, .. }
            | PriorSpec::PcaTikhonov { tau, .. } => Some(*tau),
            PriorSpec::Spectral { .. } => None,
        }
    }

    /// Cut-off dimension for the subspace variants, None for full-rank ones.
    pub fn cutoff(&self) -> Option<usize> {
        match self {
            PriorSpec::PcaSir { d, .. }
            | PriorSpec::PcaRidge { d, .. }
            | PriorSpec::PcaTikhonov { d, .. }
            | PriorSpec::Spectral { d, .. } => Some(*d),
            _ => None,
        }
    }

    fn validate(&self, p: usize) -> Result<()> {
        if let Some(tau) = self.tau() {
            if !(tau > 0.0) || !tau.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "tau must be a positive finite number, got {tau}"
                )));
            }
        }
        if let Some(d) = self.cutoff() {
            if d < 1 || d > p {
                return Err(Error::InvalidParameter(format!(
                    "cut-off dimension d = {d} outside 1..={p}"
                )));
            }
        }
        if let PriorSpec::Spectral { d, weights } = self {
            if weights.len() != *d {
                return Err(Error::ShapeMismatch(format!(
                    "spectral prior has {} weights for d = {d}",
                    weights.len()
                )));
            }
            if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                return Err(Error::InvalidParameter(
                    "spectral prior weights must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Default cut-off dimension: half the ambient dimension, rounded up.
pub fn default_cutoff(p: usize) -> usize {
    p.div_ceil(2)
}

/// Eigendecomposition of the predictor covariance, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: DVector<f64>,
    /// Columns are the orthonormal eigenvectors matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
///
/// Eigenvalues in [-1e-12, 0) are clamped to zero. Fails with
/// [`Error::NotSymmetric`] when the asymmetry exceeds tolerance.
pub fn spectral_decompose(sigma_hat: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    let p = sigma_hat.nrows();
    if sigma_hat.ncols() != p {
        return Err(Error::ShapeMismatch(format!(
            "expected a square matrix, got {}x{}",
            p,
            sigma_hat.ncols()
        )));
    }
    let mut asym = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..p {
        for j in 0..p {
            asym = asym.max((sigma_hat[(i, j)] - sigma_hat[(j, i)]).abs());
            scale = scale.max(sigma_hat[(i, j)].abs());
        }
    }
    if asym > 1e-10 * scale.max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }

    let sym = 0.5 * (sigma_hat + sigma_hat.transpose());
    let eig = SymmetricEigen::new(sym);
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut eigenvalues = DVector::zeros(p);
    let mut eigenvectors = DMatrix::zeros(p, p);
    for (k, &i) in idx.iter().enumerate() {
        let mut lambda = eig.eigenvalues[i];
        if (-1e-12..0.0).contains(&lambda) {
            lambda = 0.0;
        }
        eigenvalues[k] = lambda;
        eigenvectors.set_column(k, &eig.eigenvectors.column(i));
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// A realized prior: the retained eigenbasis of the predictor covariance and
/// the prior eigenvalues on it.
#[derive(Debug, Clone)]
pub struct PriorMaterialization {
    basis: DMatrix<f64>,
    weights: Vec<f64>,
    omega_inv: Vec<f64>,
    eigenvalues: Vec<f64>,
    full_rank: bool,
}

impl PriorMaterialization {
    /// p x d matrix of retained covariance eigenvectors.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Prior eigenvalues phi(lambda_j) on the retained directions.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Diagonal of the inverse prior restricted to the retained subspace.
    pub fn omega_inv_on_subspace(&self) -> &[f64] {
        &self.omega_inv
    }

    /// Retained covariance eigenvalues, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn full_rank(&self) -> bool {
        self.full_rank
    }

    pub fn d(&self) -> usize {
        self.basis.ncols()
    }

    pub fn p(&self) -> usize {
        self.basis.nrows()
    }

    /// Dense reconstruction of the prior, sum of phi(lambda_j) q_j q_j^t.
    /// Intended for diagnostics and tests; the solver never forms it.
    pub fn omega_matrix(&self) -> DMatrix<f64> {
        let p = self.p();
        let mut omega = DMatrix::zeros(p, p);
        for j in 0..self.d() {
            let q = self.basis.column(j);
            omega += self.weights[j] * (q * q.transpose());
        }
        omega
    }

    /// Quadratic form of the inverse prior on the retained subspace,
    /// sum over j of (q_j^t b)^2 / phi(lambda_j).
    ///
    /// For rank-deficient priors this is the inverse on the span of the
    /// retained basis; components of `b` outside that span do not contribute.
    pub fn omega_inv_quadratic(&self, b: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.d() {
            let proj = self.basis.column(j).dot(b);
            acc += proj * proj * self.omega_inv[j];
        }
        acc
    }
}

/// Realizes a prior from the covariance eigendecomposition.
pub fn materialize_from(
    spec: &PriorSpec,
    decomp: &SpectralDecomposition,
) -> Result<PriorMaterialization> {
    let p = decomp.eigenvalues.len();
    spec.validate(p)?;

    let d = spec.cutoff().unwrap_or(p);
    let lambda_1 = decomp.eigenvalues[0];
    let rank_floor = RANK_TOLERANCE * lambda_1;

    // Which eigenvalues must be strictly positive: everything retained, except
    // for the full-space ridge whose weights do not involve lambda at all.
    let needs_positive = !matches!(spec, PriorSpec::Ridge { .. });
    if needs_positive {
        for j in 0..d {
            let lambda = decomp.eigenvalues[j];
            if !(lambda > rank_floor) {
                return Err(Error::SingularCovariance(format!(
                    "eigenvalue {} of the covariance is {:.3e}, below the rank tolerance {:.3e}",
                    j + 1,
                    lambda,
                    rank_floor
                )));
            }
        }
    }

    let eigenvalues: Vec<f64> = decomp.eigenvalues.iter().take(d).copied().collect();
    let weights: Vec<f64> = match spec {
        PriorSpec::Sir { tau } | PriorSpec::PcaSir { tau, .. } => {
            eigenvalues.iter().map(|l| 1.0 / (tau * l)).collect()
        }
        PriorSpec::Ridge { tau } | PriorSpec::PcaRidge { tau, .. } => {
            vec![1.0 / tau; d]
        }
        PriorSpec::Tikhonov { tau } | PriorSpec::PcaTikhonov { tau, .. } => {
            eigenvalues.iter().map(|l| l / tau).collect()
        }
        PriorSpec::Spectral { weights, .. } => weights.clone(),
    };
    if weights.iter().any(|w| !w.is_finite() || !(*w > 0.0)) {
        return Err(Error::SingularCovariance(
            "a prior weight is non-positive or non-finite".into(),
        ));
    }
    let omega_inv: Vec<f64> = weights.iter().map(|w| 1.0 / w).collect();

    Ok(PriorMaterialization {
        basis: decomp.eigenvectors.columns(0, d).into_owned(),
        weights,
        omega_inv,
        eigenvalues,
        full_rank: d == p,
    })
}

/// Realizes a prior directly from the predictor covariance.
pub fn materialize(spec: &PriorSpec, sigma_hat: &DMatrix<f64>) -> Result<PriorMaterialization> {
    let decomp = spectral_decompose(sigma_hat)?;
    materialize_from(spec, &decomp)
}

/// Projects the direction problem onto the retained subspace: returns the
/// projected between matrix B^t Gamma B, the projected covariance B^t Sigma B
/// and the diagonal of the inverse prior.
pub fn project_problem(
    mat: &PriorMaterialization,
    gamma_hat: &DMatrix<f64>,
    sigma_hat: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    let p = mat.p();
    if gamma_hat.nrows() != p || gamma_hat.ncols() != p {
        return Err(Error::ShapeMismatch(format!(
            "gamma is {}x{}, expected {p}x{p}",
            gamma_hat.nrows(),
            gamma_hat.ncols()
        )));
    }
    if sigma_hat.nrows() != p || sigma_hat.ncols() != p {
        return Err(Error::ShapeMismatch(format!(
            "sigma is {}x{}, expected {p}x{p}",
            sigma_hat.nrows(),
            sigma_hat.ncols()
        )));
    }
    let basis = &mat.basis;
    let gamma_tilde = basis.transpose() * gamma_hat * basis;
    let sigma_tilde = basis.transpose() * sigma_hat * basis;
    let sym = |m: DMatrix<f64>| 0.5 * (&m + m.transpose());
    Ok((
        sym(gamma_tilde),
        sym(sigma_tilde),
        DVector::from_vec(mat.omega_inv.clone()),
    ))
}
