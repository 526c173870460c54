//! Maximum-likelihood estimation of the inverse regression model, with and
//! without a Gaussian prior on the direction.
//!
//! Both fits reduce to a symmetric-definite pencil solved through a Cholesky
//! factorization; the regularized fit works in the prior's retained subspace
//! and lifts the directions back to the ambient space.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::design::DesignMoments;
use crate::error::{Error, Result};
use crate::priors::{project_problem, spectral_decompose, PriorMaterialization, RANK_TOLERANCE};

/// Threshold below which the leading eigenvalue counts as "no signal".
const SIGNAL_FLOOR: f64 = 1e-12;

/// Relative eigenvalue gap under which the trailing retained direction is
/// flagged as basis-dependent.
const GAP_TOLERANCE: f64 = 1e-10;

/// Parameters reported only for the single-index fit (K = 1).
#[derive(Debug, Clone)]
pub struct SingleIndexFit {
    /// Basis coefficients of the coordinate function.
    pub c_hat: DVector<f64>,
    /// Location estimate.
    pub mu_hat: DVector<f64>,
    /// Noise covariance estimate.
    pub v_hat: DMatrix<f64>,
    /// Signal-to-noise ratio lambda / (1 - lambda).
    pub rho_hat: f64,
    /// theta(b) = b^t V b / b^t Sigma b.
    pub theta_b: f64,
    /// eta(b) = b^t Omega^{-1} b / b^t Sigma b; zero for the unregularized fit.
    pub eta_b: f64,
    /// Value of the objective at the optimum.
    pub objective: f64,
}

/// Output of a fit: unit-norm directions, their eigenvalues and, for K = 1,
/// the remaining model parameters.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// p x K matrix whose columns are the fitted directions, unit norm, with
    /// the largest-magnitude coordinate made positive.
    pub directions: DMatrix<f64>,
    /// Eigenvalues in [0, 1), descending.
    pub eigenvalues: Vec<f64>,
    /// Set when the gap between the last retained and first discarded
    /// eigenvalue is below tolerance: directions within the tied block are
    /// basis-dependent.
    pub degenerate_gap: bool,
    /// Present only for K = 1.
    pub single: Option<SingleIndexFit>,
}

impl FitResult {
    /// Leading eigenvalue.
    pub fn lambda_hat(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Leading direction.
    pub fn b_hat(&self) -> DVector<f64> {
        self.directions.column(0).into_owned()
    }
}

/// Signal-to-noise ratio rho = lambda / (1 - lambda).
pub fn snr_estimate(lambda_hat: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&lambda_hat) {
        return Err(Error::OutOfRange(lambda_hat));
    }
    Ok(lambda_hat / (1.0 - lambda_hat))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Flips the sign of a column vector so its largest-magnitude coordinate is
/// positive; the first such coordinate decides on ties.
fn fix_sign(v: &mut DVector<f64>) -> bool {
    let mut best = f64::NEG_INFINITY;
    let mut idx = 0;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        v.apply(|x| *x = -*x);
        true
    } else {
        false
    }
}

/// Solves the symmetric-definite pencil A b = lambda S b by reducing through
/// the Cholesky factor of S to a standard symmetric eigenproblem.
///
/// Returns all eigenpairs with eigenvalues descending; eigenvectors are the
/// back-transformed columns (not renormalized). Tiny negative eigenvalues in
/// [-1e-12, 0) are clamped to zero.
fn solve_pencil(a: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let dim = a.nrows();
    let chol = Cholesky::new(s.clone()).ok_or(Error::CholeskyFailure)?;
    let l = chol.l();
    let t = l.solve_lower_triangular(a).ok_or(Error::CholeskyFailure)?;
    let c = l
        .solve_lower_triangular(&t.transpose())
        .ok_or(Error::CholeskyFailure)?
        .transpose();
    let eig = nalgebra::SymmetricEigen::new(symmetrize(&c));

    // back-transform all eigenvectors at once: solve L^t B = Y
    let back = l
        .transpose()
        .solve_upper_triangular(&eig.eigenvectors)
        .ok_or(Error::CholeskyFailure)?;

    let mut idx: Vec<usize> = (0..dim).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let mut values = Vec::with_capacity(dim);
    let mut vectors = DMatrix::zeros(dim, dim);
    for (k, &i) in idx.iter().enumerate() {
        let mut lambda = eig.eigenvalues[i];
        if (-1e-12..0.0).contains(&lambda) {
            lambda = 0.0;
        }
        values.push(lambda);
        vectors.set_column(k, &back.column(i));
    }
    Ok((values, vectors))
}

/// A solved direction problem in the prior's subspace.
struct SubspaceSolve {
    /// All d eigenvalues, descending.
    eigenvalues: Vec<f64>,
    /// d x d matrix of subspace coordinates, columns matching `eigenvalues`.
    coords: DMatrix<f64>,
    /// p x d lifted directions, unit norm, sign-fixed.
    directions: DMatrix<f64>,
}

fn solve_subspace(
    prior: &PriorMaterialization,
    gamma_like: &DMatrix<f64>,
    sigma_hat: &DMatrix<f64>,
) -> Result<SubspaceSolve> {
    let (gamma_tilde, sigma_tilde, omega_inv) = project_problem(prior, gamma_like, sigma_hat)?;
    let pencil_s = &sigma_tilde + DMatrix::from_diagonal(&omega_inv);
    let (eigenvalues, mut coords) = solve_pencil(&gamma_tilde, &pencil_s)?;

    let mut directions = prior.basis() * &coords;
    for k in 0..directions.ncols() {
        let norm = directions.column(k).norm();
        if norm > 0.0 {
            let mut dir = directions.column(k).into_owned();
            dir /= norm;
            let flipped = fix_sign(&mut dir);
            directions.set_column(k, &dir);
            let mut z = coords.column(k).into_owned();
            z /= norm;
            if flipped {
                z.apply(|x| *x = -*x);
            }
            coords.set_column(k, &z);
        }
    }
    Ok(SubspaceSolve {
        eigenvalues,
        coords,
        directions,
    })
}

/// Solves the regularized direction problem for the top `k` directions.
///
/// Works in the prior's retained subspace: forms the projected pencil
/// `Gamma~ b = lambda (Sigma~ + Omega~^{-1}) b`, reduces via Cholesky, solves,
/// lifts by the retained basis and normalizes. Eigenvalues are real, in
/// [0, 1), descending.
pub fn solve_direction_problem(
    gamma_hat: &DMatrix<f64>,
    sigma_hat: &DMatrix<f64>,
    prior: &PriorMaterialization,
    k: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let d = prior.d();
    if k < 1 || k > d {
        return Err(Error::SubspaceTooSmall {
            requested: k,
            available: d,
        });
    }
    let solved = solve_subspace(prior, gamma_hat, sigma_hat)?;
    Ok((
        solved.eigenvalues[..k].to_vec(),
        solved.directions.columns(0, k).into_owned(),
    ))
}

fn gap_is_degenerate(eigenvalues: &[f64], k: usize) -> bool {
    if k >= eigenvalues.len() {
        return false;
    }
    (eigenvalues[k - 1] - eigenvalues[k]).abs() < GAP_TOLERANCE * eigenvalues[0].abs().max(1e-300)
}

/// Completes the single-index parameter set from a fitted direction.
fn complete_single_index(
    moments: &DesignMoments,
    w_inv_m: &DMatrix<f64>,
    b: &DVector<f64>,
    lambda: f64,
    eta: f64,
) -> Result<(SingleIndexFit, DMatrix<f64>)> {
    let sigma_b = &moments.sigma_hat * b;
    let b_sigma_b = b.dot(&sigma_b);
    if !(b_sigma_b > 0.0) {
        return Err(Error::NoSignal(lambda));
    }
    let v_hat =
        symmetrize(&(&moments.sigma_hat - (lambda / b_sigma_b) * (&sigma_b * sigma_b.transpose())));
    let v_b = &v_hat * b;
    let b_v_b = b.dot(&v_b);
    let c_hat = (w_inv_m * b) / ((1.0 + eta) * b_v_b);
    let s_c = moments.s_bar.dot(&c_hat);
    let mu_hat = &moments.x_bar - s_c * &v_b;
    let theta_b = b_v_b / b_sigma_b;
    let rho_hat = snr_estimate(lambda)?;
    Ok((
        SingleIndexFit {
            c_hat,
            mu_hat,
            v_hat: v_hat.clone(),
            rho_hat,
            theta_b,
            eta_b: eta,
            objective: f64::NAN, // filled by the caller
        },
        v_hat,
    ))
}

fn w_cholesky(moments: &DesignMoments) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(symmetrize(&moments.w)).ok_or(Error::SingularBasisCovariance)
}

/// When the sample covariance is singular (n <= p) the fitted noise
/// covariance is singular too and the discrepancy diverges; report the limit
/// value instead of failing the fit.
fn finite_objective(value: Result<f64>) -> Result<f64> {
    match value {
        Err(Error::NonPositiveDefinite) => Ok(f64::NEG_INFINITY),
        other => other,
    }
}

/// Unregularized maximum-likelihood fit: the top `k` eigenvectors of
/// `Sigma^{-1} M^t W^{-1} M` (equal to `Sigma^{-1} Gamma` for the indicator
/// basis), with the remaining parameters for K = 1.
///
/// # Errors
///
/// `SingularCovariance` when the condition estimate of the predictor
/// covariance exceeds the rank tolerance, `SingularBasisCovariance` when W
/// cannot be factorized, `NoSignal` when the leading eigenvalue vanishes.
pub fn fit_sir(moments: &DesignMoments, k: usize) -> Result<FitResult> {
    let p = moments.p();
    let h = moments.basis_size();
    let available = h.min(p);
    if k < 1 || k > available {
        return Err(Error::SubspaceTooSmall {
            requested: k,
            available,
        });
    }

    let decomp = spectral_decompose(&moments.sigma_hat)?;
    let lambda_1 = decomp.eigenvalues[0];
    let lambda_p = decomp.eigenvalues[p - 1];
    if !(lambda_1 > 0.0) || !(lambda_p > RANK_TOLERANCE * lambda_1) {
        return Err(Error::SingularCovariance(format!(
            "condition estimate {:.3e} exceeds 1e12; consider a regularized prior",
            if lambda_p > 0.0 {
                lambda_1 / lambda_p
            } else {
                f64::INFINITY
            }
        )));
    }

    let w_chol = w_cholesky(moments)?;
    let w_inv_m = w_chol.solve(&moments.m);
    let a = symmetrize(&(moments.m.transpose() * &w_inv_m));

    let (eigenvalues, mut vectors) = solve_pencil(&a, &moments.sigma_hat)?;
    if eigenvalues[0] < SIGNAL_FLOOR {
        return Err(Error::NoSignal(eigenvalues[0]));
    }

    for c in 0..vectors.ncols() {
        let norm = vectors.column(c).norm();
        if norm > 0.0 {
            let mut col = vectors.column(c).into_owned();
            col /= norm;
            fix_sign(&mut col);
            vectors.set_column(c, &col);
        }
    }

    let directions = vectors.columns(0, k).into_owned();
    let top = eigenvalues[..k].to_vec();
    let degenerate_gap = gap_is_degenerate(&eigenvalues, k);

    let single = if k == 1 {
        let b = directions.column(0).into_owned();
        let (mut single, _v_hat) = complete_single_index(moments, &w_inv_m, &b, top[0], 0.0)?;
        single.objective = finite_objective(objective_g(
            &single.mu_hat,
            &single.v_hat,
            &b,
            &single.c_hat,
            moments,
        ))?;
        Some(single)
    } else {
        None
    };

    Ok(FitResult {
        directions,
        eigenvalues: top,
        degenerate_gap,
        single,
    })
}

/// Regularized maximum-likelihood fit for a materialized prior: the top `k`
/// eigenvectors of `(Omega Sigma + I)^{-1} Omega M^t W^{-1} M`, computed by
/// the subspace pencil reduction.
///
/// # Errors
///
/// `SubspaceTooSmall` when `k` exceeds min(h, d), `SingularBasisCovariance`
/// when W cannot be factorized, `CholeskyFailure` when the reduced pencil is
/// not positive definite, `NoSignal` when the leading eigenvalue vanishes.
pub fn fit_grsir(
    moments: &DesignMoments,
    prior: &PriorMaterialization,
    k: usize,
) -> Result<FitResult> {
    let p = moments.p();
    if prior.p() != p {
        return Err(Error::ShapeMismatch(format!(
            "prior lives in dimension {}, moments in {p}",
            prior.p()
        )));
    }
    let h = moments.basis_size();
    let d = prior.d();
    let available = h.min(d);
    if k < 1 || k > available {
        return Err(Error::SubspaceTooSmall {
            requested: k,
            available,
        });
    }

    let w_chol = w_cholesky(moments)?;
    let w_inv_m = w_chol.solve(&moments.m);
    let a = symmetrize(&(moments.m.transpose() * &w_inv_m));

    let solved = solve_subspace(prior, &a, &moments.sigma_hat)?;
    if solved.eigenvalues[0] < SIGNAL_FLOOR {
        return Err(Error::NoSignal(solved.eigenvalues[0]));
    }

    let directions = solved.directions.columns(0, k).into_owned();
    let top = solved.eigenvalues[..k].to_vec();
    let degenerate_gap = gap_is_degenerate(&solved.eigenvalues, k);

    let single = if k == 1 {
        let b = directions.column(0).into_owned();
        let z = solved.coords.column(0).into_owned();
        let sigma_b = &moments.sigma_hat * &b;
        let b_sigma_b = b.dot(&sigma_b);
        if !(b_sigma_b > 0.0) {
            return Err(Error::NoSignal(top[0]));
        }
        let omega_inv = prior.omega_inv_on_subspace();
        let eta = z
            .iter()
            .enumerate()
            .map(|(j, &zj)| zj * zj * omega_inv[j])
            .sum::<f64>()
            / b_sigma_b;
        let (mut single, _v_hat) = complete_single_index(moments, &w_inv_m, &b, top[0], eta)?;
        single.objective = finite_objective(objective_g_omega(
            &single.mu_hat,
            &single.v_hat,
            &b,
            &single.c_hat,
            moments,
            prior,
        ))?;
        Some(single)
    } else {
        None
    };

    Ok(FitResult {
        directions,
        eigenvalues: top,
        degenerate_gap,
        single,
    })
}

/// The likelihood discrepancy in its closed form:
/// `logdet V + tr(Sigma V^{-1}) + r^t V^{-1} r + (c^t W c)(b^t V b) - 2 c^t M b`
/// with `r = mu - x_bar + (s_bar^t c) V b`.
pub fn objective_g(
    mu: &DVector<f64>,
    v: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    moments: &DesignMoments,
) -> Result<f64> {
    let p = moments.p();
    let h = moments.basis_size();
    if mu.len() != p || b.len() != p || v.nrows() != p || v.ncols() != p || c.len() != h {
        return Err(Error::ShapeMismatch(
            "objective arguments do not match the moment dimensions".into(),
        ));
    }
    let chol = Cholesky::new(symmetrize(v)).ok_or(Error::NonPositiveDefinite)?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let trace = chol.solve(&moments.sigma_hat).trace();

    let v_b = v * b;
    let s_c = moments.s_bar.dot(c);
    let resid = mu - &moments.x_bar + s_c * &v_b;
    let quad = resid.dot(&chol.solve(&resid));

    let c_w_c = c.dot(&(&moments.w * c));
    let b_v_b = b.dot(&v_b);
    let cross = c.dot(&(&moments.m * b));

    Ok(log_det + trace + quad + c_w_c * b_v_b - 2.0 * cross)
}

/// The regularized objective: [`objective_g`] plus the penalty
/// `(b^t Omega^{-1} b)(b^t V b)(c^t W c) / (b^t Sigma b)`, with the sample
/// covariance standing in for the population one.
///
/// For rank-deficient priors the inverse acts on the retained subspace;
/// components of `b` outside it do not contribute to the penalty.
pub fn objective_g_omega(
    mu: &DVector<f64>,
    v: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
    moments: &DesignMoments,
    prior: &PriorMaterialization,
) -> Result<f64> {
    let g = objective_g(mu, v, b, c, moments)?;
    let b_sigma_b = b.dot(&(&moments.sigma_hat * b));
    if !(b_sigma_b > 0.0) {
        return Err(Error::InvalidParameter(
            "direction has zero variance under the predictor covariance".into(),
        ));
    }
    let b_omega_inv_b = prior.omega_inv_quadratic(b);
    let b_v_b = b.dot(&(v * b));
    let c_w_c = c.dot(&(&moments.w * c));
    Ok(g + b_omega_inv_b * b_v_b * c_w_c / b_sigma_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{compute_moments, indicator_basis, make_slices, Dataset};
    use crate::priors::{materialize, PriorSpec};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    fn squared_cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let d = a.dot(b);
        d * d / (a.norm_squared() * b.norm_squared())
    }

    /// Deterministic test fixture: a single-direction dataset drawn from the
    /// inverse model X = mu + c(y) V b + eps.
    fn model_dataset(seed: u64, n: usize, p: usize, noise: f64) -> (Dataset, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        b /= b.norm();
        let mu = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        // V = I + small random symmetric PSD bump; the jitter is drawn with
        // covariance proportional to V so the direction parameter is b itself
        let a = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = DMatrix::<f64>::identity(p, p) + 0.1 * (&a * a.transpose()) / p as f64;
        let v_b = &v * &b;
        let v_chol = Cholesky::new(v.clone()).unwrap().l();
        let mut x = DMatrix::zeros(n, p);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let yi: f64 = rng.sample::<f64, _>(StandardNormal);
            let c = yi; // linear coordinate function
            let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let eps = noise * (&v_chol * z);
            for j in 0..p {
                x[(i, j)] = mu[j] + c * v_b[j] + eps[j];
            }
            y.push(yi);
        }
        (Dataset::new(x, y).unwrap(), b)
    }

    fn moments_for(data: &Dataset, num_slices: usize) -> crate::design::DesignMoments {
        let a = make_slices(data.y(), num_slices).unwrap();
        let basis = indicator_basis(&a);
        compute_moments(data, &basis, &a).unwrap()
    }

    fn random_moments(
        seed: u64,
        n: usize,
        p: usize,
        num_slices: usize,
    ) -> crate::design::DesignMoments {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let t = x.row(i).transpose().dot(&beta);
                t.sin() + 0.1 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let data = Dataset::new(x, y).unwrap();
        moments_for(&data, num_slices)
    }

    #[test]
    fn sir_recovers_model_direction() {
        for seed in 1..=2 {
            let (data, b_true) = model_dataset(seed, 200_000, 4, 0.5);
            let moments = moments_for(&data, 8);
            let fit = fit_sir(&moments, 1).unwrap();
            let b = fit.b_hat();
            assert!(squared_cosine(&b, &b_true) >= 1.0 - 1e-4);
            assert!(fit.lambda_hat() > 0.5);
        }
    }

    #[test]
    fn tiny_jitter_needs_regularization() {
        // data exactly on the conditional-mean line up to jitter: the plain
        // fit rejects the near-singular covariance, the ridge fit recovers
        // the line direction
        let (data, _) = model_dataset(1, 400, 5, 3e-7);
        let moments = moments_for(&data, 8);
        assert!(matches!(
            fit_sir(&moments, 1),
            Err(Error::SingularCovariance(_))
        ));
        let prior = materialize(&PriorSpec::Ridge { tau: 1e-4 }, &moments.sigma_hat).unwrap();
        let fit = fit_grsir(&moments, &prior, 1).unwrap();
        // the top eigenvector of the predictor covariance spans the line
        let line = spectral_decompose(&moments.sigma_hat)
            .unwrap()
            .eigenvectors
            .column(0)
            .into_owned();
        assert!(squared_cosine(&fit.b_hat(), &line) >= 1.0 - 1e-4);
    }

    #[test]
    fn sir_no_signal_when_gamma_zero() {
        // slice means equal the grand mean exactly
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let data = Dataset::new(x, vec![0.0, 0.25, 0.75, 1.0]).unwrap();
        let moments = moments_for(&data, 2);
        assert!(matches!(fit_sir(&moments, 1), Err(Error::NoSignal(_))));
    }

    #[test]
    fn sir_singular_covariance_when_n_below_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(6, 10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..6)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let data = Dataset::new(x, y).unwrap();
        let moments = moments_for(&data, 3);
        assert!(matches!(
            fit_sir(&moments, 1),
            Err(Error::SingularCovariance(_))
        ));
    }

    /// Coarse-grid argmax of a generalized Rayleigh quotient over unit vectors
    /// of the plane; `ridge_tau` adds tau * I to the denominator matrix.
    fn grid_argmax(
        gamma: &DMatrix<f64>,
        sigma: &DMatrix<f64>,
        ridge_tau: f64,
        points: usize,
    ) -> DVector<f64> {
        let mut best = f64::NEG_INFINITY;
        let mut best_v = DVector::zeros(2);
        for k in 0..points {
            let angle = std::f64::consts::PI * (k as f64) / (points as f64);
            let v = DVector::from_vec(vec![angle.cos(), angle.sin()]);
            let num = v.dot(&(gamma * &v));
            let den = v.dot(&(sigma * &v)) + ridge_tau;
            let q = num / den;
            if q > best {
                best = q;
                best_v = v;
            }
        }
        best_v
    }

    #[test]
    fn sir_matches_rayleigh_grid_in_two_dimensions() {
        for seed in 0..5 {
            let moments = random_moments(40 + seed, 120, 2, 5);
            let fit = fit_sir(&moments, 1).unwrap();
            let w_inv = crate::design::w_inverse_indicator(&moments.proportions).unwrap();
            let a = moments.m.transpose() * w_inv * &moments.m;
            let oracle = grid_argmax(&a, &moments.sigma_hat, 0.0, 3600);
            assert!(squared_cosine(&fit.b_hat(), &oracle) >= 1.0 - 1e-5);
        }
    }

    #[test]
    fn ridge_matches_rayleigh_grid_in_two_dimensions() {
        for seed in 0..5 {
            let moments = random_moments(60 + seed, 120, 2, 5);
            let tau = 0.5;
            let prior = materialize(&PriorSpec::Ridge { tau }, &moments.sigma_hat).unwrap();
            let fit = fit_grsir(&moments, &prior, 1).unwrap();
            let w_inv = crate::design::w_inverse_indicator(&moments.proportions).unwrap();
            let a = moments.m.transpose() * w_inv * &moments.m;
            let oracle = grid_argmax(&a, &moments.sigma_hat, tau, 3600);
            assert!(squared_cosine(&fit.b_hat(), &oracle) >= 1.0 - 1e-5);
        }
    }

    #[test]
    fn grsir_with_sir_prior_reproduces_sir() {
        for seed in 0..5 {
            let moments = random_moments(80 + seed, 100, 6, 5);
            let plain = fit_sir(&moments, 1).unwrap();
            for tau in [0.1, 1.0, 10.0] {
                let prior = materialize(&PriorSpec::Sir { tau }, &moments.sigma_hat).unwrap();
                let fit = fit_grsir(&moments, &prior, 1).unwrap();
                assert!(
                    squared_cosine(&fit.b_hat(), &plain.b_hat()) >= 1.0 - 1e-10,
                    "tau = {tau}"
                );
                // the eigenvalue is scaled by 1/(1+tau)
                assert_relative_eq!(
                    fit.lambda_hat() * (1.0 + tau),
                    plain.lambda_hat(),
                    max_relative = 1e-8
                );
            }
        }
    }

    #[test]
    fn pca_sir_equals_projected_sir() {
        for seed in 0..5 {
            let moments = random_moments(120 + seed, 150, 6, 5);
            let d = 3;
            let prior =
                materialize(&PriorSpec::PcaSir { d, tau: 1.0 }, &moments.sigma_hat).unwrap();
            let fit = fit_grsir(&moments, &prior, 1).unwrap();

            // independent path: project the raw data on the leading
            // eigenvectors, refit without regularization, lift back
            let mut rng = ChaCha8Rng::seed_from_u64(120 + seed);
            let n = 150;
            let x = DMatrix::from_fn(n, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
            let beta = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y: Vec<f64> = (0..n)
                .map(|i| {
                    let t = x.row(i).transpose().dot(&beta);
                    t.sin() + 0.1 * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            let basis_d = prior.basis().clone();
            let x_proj = &x * &basis_d;
            let data_proj = Dataset::new(x_proj, y).unwrap();
            let proj_moments = moments_for(&data_proj, 5);
            let proj_fit = fit_sir(&proj_moments, 1).unwrap();
            let lifted = &basis_d * proj_fit.b_hat();
            assert!(squared_cosine(&fit.b_hat(), &lifted) >= 1.0 - 1e-8);
        }
    }

    /// Power iteration on the dense regularized matrix
    /// (Omega Sigma + I)^{-1} Omega Gamma; an independent route to the top
    /// direction.
    fn dense_power_iteration(
        omega: &DMatrix<f64>,
        sigma: &DMatrix<f64>,
        gamma: &DMatrix<f64>,
    ) -> DVector<f64> {
        let p = sigma.nrows();
        let lhs = omega * sigma + DMatrix::<f64>::identity(p, p);
        let lu = lhs.lu();
        let rhs = omega * gamma;
        let mut v = DVector::from_element(p, 1.0 / (p as f64).sqrt());
        for _ in 0..20_000 {
            let mut w = lu.solve(&(&rhs * &v)).expect("regular matrix");
            let norm = w.norm();
            assert!(norm > 0.0);
            w /= norm;
            if w.dot(&v) < 0.0 {
                w.apply(|x| *x = -*x);
            }
            let delta = (&w - &v).norm();
            v = w;
            if delta < 1e-15 {
                break;
            }
        }
        v
    }

    #[test]
    fn tikhonov_matches_dense_eigensolve() {
        for seed in 0..5 {
            let moments = random_moments(200 + seed, 120, 5, 6);
            let tau = 0.3;
            let prior = materialize(&PriorSpec::Tikhonov { tau }, &moments.sigma_hat).unwrap();
            let fit = fit_grsir(&moments, &prior, 1).unwrap();

            // dense oracle straight from the (Sigma^2 + tau I)^{-1} Sigma Gamma form
            let p = 5;
            let w_inv = crate::design::w_inverse_indicator(&moments.proportions).unwrap();
            let gamma = moments.m.transpose() * w_inv * &moments.m;
            let lhs =
                &moments.sigma_hat * &moments.sigma_hat + tau * DMatrix::<f64>::identity(p, p);
            let dense = lhs.lu().solve(&(&moments.sigma_hat * &gamma)).unwrap();
            let mut v = DVector::from_element(p, 1.0 / (p as f64).sqrt());
            for _ in 0..20_000 {
                let mut w = &dense * &v;
                w /= w.norm();
                if w.dot(&v) < 0.0 {
                    w.apply(|x| *x = -*x);
                }
                let delta = (&w - &v).norm();
                v = w;
                if delta < 1e-15 {
                    break;
                }
            }
            assert!(squared_cosine(&fit.b_hat(), &v) >= 1.0 - 1e-8);
        }
    }

    #[test]
    fn subspace_lift_matches_dense_regularized_solve() {
        for seed in 0..5 {
            let moments = random_moments(300 + seed, 140, 6, 5);
            let prior =
                materialize(&PriorSpec::PcaRidge { d: 3, tau: 0.4 }, &moments.sigma_hat).unwrap();
            let fit = fit_grsir(&moments, &prior, 1).unwrap();
            let w_inv = crate::design::w_inverse_indicator(&moments.proportions).unwrap();
            let gamma = moments.m.transpose() * w_inv * &moments.m;
            let oracle = dense_power_iteration(&prior.omega_matrix(), &moments.sigma_hat, &gamma);
            assert!(squared_cosine(&fit.b_hat(), &oracle) >= 1.0 - 1e-8);
        }
    }

    #[test]
    fn pencil_identity_instance() {
        // Gamma = Sigma = I with ridge tau = 1: every unit vector solves
        // Gamma b = lambda (Sigma + I) b at lambda = 1/2
        let identity = DMatrix::<f64>::identity(3, 3);
        let prior = materialize(&PriorSpec::Ridge { tau: 1.0 }, &identity).unwrap();
        let (values, _) = solve_direction_problem(&identity, &identity, &prior, 1).unwrap();
        assert_relative_eq!(values[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn pencil_diagonal_instance() {
        let gamma = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let sigma = DMatrix::<f64>::identity(2, 2);
        let prior = materialize(&PriorSpec::Ridge { tau: 1.0 }, &sigma).unwrap();
        let (values, directions) = solve_direction_problem(&gamma, &sigma, &prior, 1).unwrap();
        assert_relative_eq!(values[0], 0.5, epsilon = 1e-12);
        assert!(directions.column(0)[0].abs() > 0.999_999);
    }

    #[test]
    fn lambda_theta_relation_and_proportionality() {
        for seed in 0..10 {
            let moments = random_moments(400 + seed, 100, 4, 5);
            let prior = materialize(&PriorSpec::Ridge { tau: 0.2 }, &moments.sigma_hat).unwrap();
            for fit in [
                fit_sir(&moments, 1).unwrap(),
                fit_grsir(&moments, &prior, 1).unwrap(),
            ] {
                let single = fit.single.as_ref().unwrap();
                assert!((fit.lambda_hat() - (1.0 - single.theta_b)).abs() <= 1e-8);

                let b = fit.b_hat();
                let v_b = &single.v_hat * &b;
                let sigma_b = &moments.sigma_hat * &b;
                let resid = &v_b - single.theta_b * &sigma_b;
                assert!(resid.norm() <= 1e-8 * v_b.norm());

                // Sigma - V is rank one and PSD
                let diff = &moments.sigma_hat - &single.v_hat;
                let eig = spectral_decompose(&diff).unwrap();
                assert!(eig.eigenvalues[0] >= -1e-12);
                for k in 1..4 {
                    assert!(
                        eig.eigenvalues[k].abs() <= 1e-8 * eig.eigenvalues[0].abs().max(1e-300)
                    );
                }
            }
        }
    }

    #[test]
    fn covariance_reconstruction_identity() {
        for seed in 0..10 {
            let moments = random_moments(500 + seed, 110, 4, 6);
            let prior = materialize(&PriorSpec::Tikhonov { tau: 0.5 }, &moments.sigma_hat).unwrap();
            for fit in [
                fit_sir(&moments, 1).unwrap(),
                fit_grsir(&moments, &prior, 1).unwrap(),
            ] {
                let single = fit.single.as_ref().unwrap();
                let b = fit.b_hat();
                let v_b = &single.v_hat * &b;
                let c_w_c = single.c_hat.dot(&(&moments.w * &single.c_hat));
                let recon = &single.v_hat + c_w_c * (1.0 + single.eta_b) * (&v_b * v_b.transpose());
                let diff = &moments.sigma_hat - recon;
                assert!(max_abs(&diff) <= 1e-8 * max_abs(&moments.sigma_hat));
            }
        }
    }

    #[test]
    fn objective_matches_closed_form_at_optimum() {
        for seed in 0..10 {
            let moments = random_moments(600 + seed, 100, 4, 5);
            let log_det_sigma: f64 = {
                let chol = Cholesky::new(moments.sigma_hat.clone()).unwrap();
                2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>()
            };
            let fit = fit_sir(&moments, 1).unwrap();
            let single = fit.single.as_ref().unwrap();
            let expected = 4.0 + log_det_sigma + (1.0 - fit.lambda_hat()).ln();
            assert!((single.objective - expected).abs() <= 1e-7 * expected.abs().max(1.0));

            let prior = materialize(&PriorSpec::Ridge { tau: 0.3 }, &moments.sigma_hat).unwrap();
            let rfit = fit_grsir(&moments, &prior, 1).unwrap();
            let rsingle = rfit.single.as_ref().unwrap();
            let rexpected = 4.0 + log_det_sigma + (1.0 - rfit.lambda_hat()).ln();
            assert!((rsingle.objective - rexpected).abs() <= 1e-7 * rexpected.abs().max(1.0));
        }
    }

    #[test]
    fn objective_scale_invariance() {
        let moments = random_moments(700, 100, 4, 5);
        let prior = materialize(&PriorSpec::Ridge { tau: 0.8 }, &moments.sigma_hat).unwrap();
        let fit = fit_grsir(&moments, &prior, 1).unwrap();
        let single = fit.single.as_ref().unwrap();
        let b = fit.b_hat();
        let base = objective_g_omega(
            &single.mu_hat,
            &single.v_hat,
            &b,
            &single.c_hat,
            &moments,
            &prior,
        )
        .unwrap();
        for t in [-3.0, 0.5, 7.0] {
            let scaled = objective_g_omega(
                &single.mu_hat,
                &single.v_hat,
                &(t * &b),
                &(&single.c_hat / t),
                &moments,
                &prior,
            )
            .unwrap();
            assert!((scaled - base).abs() <= 1e-10 * base.abs());
        }
    }

    #[test]
    fn perturbations_never_improve_the_optimum() {
        let moments = random_moments(800, 120, 4, 5);
        let prior = materialize(&PriorSpec::Ridge { tau: 0.5 }, &moments.sigma_hat).unwrap();
        let fit = fit_grsir(&moments, &prior, 1).unwrap();
        let single = fit.single.as_ref().unwrap();
        let b = fit.b_hat();
        let base = single.objective;
        let mut rng = ChaCha8Rng::seed_from_u64(801);
        for _ in 0..20 {
            let d_mu = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
            let d_b = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
            let d_c = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
            let e = DMatrix::from_fn(4, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
            let d_v = 0.5 * (&e + e.transpose());
            for sign in [-1.0, 1.0] {
                let step = sign * 1e-4;
                let value = objective_g_omega(
                    &(&single.mu_hat + step * &d_mu),
                    &(&single.v_hat + step * &d_v),
                    &(&b + step * &d_b),
                    &(&single.c_hat + step * &d_c),
                    &moments,
                    &prior,
                )
                .unwrap();
                assert!(value >= base - 1e-8);
            }
        }
    }

    #[test]
    fn multi_index_gram_is_diagonal() {
        for seed in 0..5 {
            let moments = random_moments(900 + seed, 160, 6, 6);
            let prior = materialize(&PriorSpec::Ridge { tau: 0.4 }, &moments.sigma_hat).unwrap();
            let fit = fit_grsir(&moments, &prior, 3).unwrap();
            assert!(fit.single.is_none());
            let omega_inv_mat = {
                // dense Omega^{-1} for the full-rank ridge prior: tau * I
                0.4 * DMatrix::<f64>::identity(6, 6)
            };
            let metric = &moments.sigma_hat + omega_inv_mat;
            for i in 0..3 {
                for j in 0..3 {
                    if i == j {
                        continue;
                    }
                    let bi = fit.directions.column(i);
                    let bj = fit.directions.column(j);
                    let cross = bi.dot(&(&metric * bj.clone_owned()));
                    let scale = bi.dot(&(&metric * bi.clone_owned()));
                    assert!(cross.abs() <= 1e-8 * scale.abs());
                }
            }
            // eigenvalues descending
            assert!(fit.eigenvalues[0] >= fit.eigenvalues[1]);
            assert!(fit.eigenvalues[1] >= fit.eigenvalues[2]);
        }
    }

    #[test]
    fn equivariance_under_rotation() {
        let moments = random_moments(1000, 130, 5, 5);
        // a fixed rotation of the predictor space
        let mut rng = ChaCha8Rng::seed_from_u64(1001);
        let raw = DMatrix::from_fn(5, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = nalgebra::QR::new(raw);
        let r_mat = qr.q();

        // rebuild the dataset rotated: easiest through the moments directly
        let rotated = crate::design::DesignMoments {
            w: moments.w.clone(),
            m: &moments.m * r_mat.transpose(),
            sigma_hat: &r_mat * &moments.sigma_hat * r_mat.transpose(),
            gamma_hat: &r_mat * &moments.gamma_hat * r_mat.transpose(),
            x_bar: &r_mat * &moments.x_bar,
            s_bar: moments.s_bar.clone(),
            slice_means: &moments.slice_means * r_mat.transpose(),
            proportions: moments.proportions.clone(),
            n: moments.n,
        };

        for (fit_a, fit_b) in [
            (fit_sir(&moments, 1).unwrap(), fit_sir(&rotated, 1).unwrap()),
            (
                fit_grsir(
                    &moments,
                    &materialize(&PriorSpec::Ridge { tau: 0.6 }, &moments.sigma_hat).unwrap(),
                    1,
                )
                .unwrap(),
                fit_grsir(
                    &rotated,
                    &materialize(&PriorSpec::Ridge { tau: 0.6 }, &rotated.sigma_hat).unwrap(),
                    1,
                )
                .unwrap(),
            ),
            (
                fit_grsir(
                    &moments,
                    &materialize(&PriorSpec::Tikhonov { tau: 0.6 }, &moments.sigma_hat).unwrap(),
                    1,
                )
                .unwrap(),
                fit_grsir(
                    &rotated,
                    &materialize(&PriorSpec::Tikhonov { tau: 0.6 }, &rotated.sigma_hat).unwrap(),
                    1,
                )
                .unwrap(),
            ),
            (
                fit_grsir(
                    &moments,
                    &materialize(&PriorSpec::PcaRidge { d: 3, tau: 0.6 }, &moments.sigma_hat)
                        .unwrap(),
                    1,
                )
                .unwrap(),
                fit_grsir(
                    &rotated,
                    &materialize(&PriorSpec::PcaRidge { d: 3, tau: 0.6 }, &rotated.sigma_hat)
                        .unwrap(),
                    1,
                )
                .unwrap(),
            ),
        ] {
            let expected = &r_mat * fit_a.b_hat();
            assert!(squared_cosine(&expected, &fit_b.b_hat()) >= 1.0 - 1e-8);
        }
    }

    #[test]
    fn snr_values() {
        assert_eq!(snr_estimate(0.0).unwrap(), 0.0);
        assert_eq!(snr_estimate(0.5).unwrap(), 1.0);
        let near_one = snr_estimate(0.999999).unwrap();
        assert!((near_one - 999_999.0).abs() <= 1e-6 * 999_999.0);
        assert!(matches!(snr_estimate(1.0), Err(Error::OutOfRange(_))));
        assert!(matches!(snr_estimate(-0.1), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn tied_eigenvalues_set_the_degenerate_gap_flag() {
        // hand-built moments whose between matrix has two equal leading
        // eigenvalues: M^t W^-1 M = diag(0.5, 0.5, 0) with W = I/4
        let c = 0.125f64.sqrt();
        let moments = crate::design::DesignMoments {
            w: DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 0.25])),
            m: DMatrix::from_row_slice(2, 3, &[c, 0.0, 0.0, 0.0, c, 0.0]),
            sigma_hat: DMatrix::identity(3, 3),
            gamma_hat: DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5, 0.0])),
            x_bar: DVector::zeros(3),
            s_bar: DVector::from_vec(vec![1.0 / 3.0, 1.0 / 3.0]),
            slice_means: DMatrix::zeros(3, 3),
            proportions: vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            n: 30,
        };
        let prior = materialize(&PriorSpec::Ridge { tau: 1.0 }, &moments.sigma_hat).unwrap();
        let tied = fit_grsir(&moments, &prior, 1).unwrap();
        assert!(tied.degenerate_gap);
        assert_relative_eq!(tied.lambda_hat(), 0.25, epsilon = 1e-12);
        // a generic instance has a clean gap
        let generic = random_moments(1200, 100, 4, 5);
        let prior = materialize(&PriorSpec::Ridge { tau: 1.0 }, &generic.sigma_hat).unwrap();
        assert!(!fit_grsir(&generic, &prior, 1).unwrap().degenerate_gap);
    }

    #[test]
    fn general_basis_fit_matches_indicator_fit() {
        // a centered polynomial basis in place of the indicators: the fit is
        // basis-generic and recovers essentially the same direction
        let (data, b_true) = model_dataset(21, 5000, 4, 0.5);
        let assignment = make_slices(data.y(), 3).unwrap();
        let poly = DMatrix::from_fn(data.n(), 2, |i, j| {
            let y = data.y()[i];
            if j == 0 {
                y
            } else {
                y * y
            }
        });
        let moments = compute_moments(&data, &poly, &assignment).unwrap();
        let fit = fit_sir(&moments, 1).unwrap();
        assert!(squared_cosine(&fit.b_hat(), &b_true) >= 0.99);

        let indicator = moments_for(&data, 3);
        let reference = fit_sir(&indicator, 1).unwrap();
        assert!(squared_cosine(&fit.b_hat(), &reference.b_hat()) >= 0.99);
    }

    #[test]
    fn directions_unit_norm_with_sign_convention() {
        let moments = random_moments(1300, 140, 5, 6);
        let prior = materialize(&PriorSpec::Ridge { tau: 0.3 }, &moments.sigma_hat).unwrap();
        for fit in [
            fit_sir(&moments, 2).unwrap(),
            fit_grsir(&moments, &prior, 2).unwrap(),
        ] {
            for k in 0..2 {
                let dir = fit.directions.column(k);
                assert!((dir.norm() - 1.0).abs() <= 1e-12);
                let (mut best, mut idx) = (f64::NEG_INFINITY, 0);
                for (i, &v) in dir.iter().enumerate() {
                    if v.abs() > best {
                        best = v.abs();
                        idx = i;
                    }
                }
                assert!(dir[idx] > 0.0);
            }
        }
    }

    #[test]
    fn requesting_too_many_directions_fails() {
        let moments = random_moments(1100, 100, 4, 5);
        let prior =
            materialize(&PriorSpec::PcaRidge { d: 2, tau: 1.0 }, &moments.sigma_hat).unwrap();
        assert!(matches!(
            fit_grsir(&moments, &prior, 3),
            Err(Error::SubspaceTooSmall {
                requested: 3,
                available: 2
            })
        ));
    }
}
