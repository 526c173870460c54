//! Slicing of the response, basis evaluation, and the empirical moment
//! matrices every estimator consumes.
//!
//! All moments use the 1/n divisor, so the closed-form identities between
//! the basis cross-moments and the between-slice covariance hold exactly.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A regression sample: an n x p predictor matrix paired with n scalar
/// responses.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset, validating shape and finiteness.
    pub fn new(x: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::ShapeMismatch(format!(
                "predictor rows ({}) != response length ({})",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() < 2 {
            return Err(Error::InvalidParameter(
                "need at least 2 observations".into(),
            ));
        }
        if x.ncols() < 1 {
            return Err(Error::InvalidParameter("need at least 1 predictor".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("predictor matrix".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("response".into()));
        }
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Reads a dataset from CSV: one header row, the response column selected
    /// by name, every remaining column a numeric predictor in file order.
    pub fn from_csv_path(path: &Path, response: &str) -> Result<(Self, Vec<String>)> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, response)
    }

    /// Same as [`Dataset::from_csv_path`] but from any reader.
    ///
    /// Returns the dataset together with the predictor column names in file
    /// order.
    pub fn from_csv_reader<R: Read>(reader: R, response: &str) -> Result<(Self, Vec<String>)> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let response_idx = headers
            .iter()
            .position(|name| name == response)
            .ok_or_else(|| {
                Error::InvalidParameter(format!("response column '{response}' not found"))
            })?;
        let predictor_names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != response_idx)
            .map(|(_, name)| name.to_string())
            .collect();
        let p = predictor_names.len();
        if p == 0 {
            return Err(Error::InvalidParameter(
                "csv has no predictor columns besides the response".into(),
            ));
        }

        let mut rows: Vec<f64> = Vec::new();
        let mut y = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != p + 1 {
                return Err(Error::ShapeMismatch(format!(
                    "row {} has {} fields, expected {}",
                    line + 2,
                    record.len(),
                    p + 1
                )));
            }
            for (i, field) in record.iter().enumerate() {
                let value: f64 = field.trim().parse().map_err(|_| {
                    Error::InvalidParameter(format!(
                        "row {}, column '{}': '{}' is not a number",
                        line + 2,
                        headers.get(i).unwrap_or(""),
                        field
                    ))
                })?;
                if i == response_idx {
                    y.push(value);
                } else {
                    rows.push(value);
                }
            }
        }
        let n = y.len();
        let x = DMatrix::from_row_slice(n.max(1), p, &rows);
        let data = Self::new(x, y)?;
        Ok((data, predictor_names))
    }
}

/// Partition of the observations into response slices.
///
/// Labels are 1-based slice indices in {1, ..., h+1}; `boundaries` holds the
/// h cut values separating adjacent slices on the response axis.
#[derive(Debug, Clone)]
pub struct SliceAssignment {
    labels: Vec<usize>,
    counts: Vec<usize>,
    proportions: Vec<f64>,
    boundaries: Vec<f64>,
}

impl SliceAssignment {
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Slice proportions f_j = n_j / n.
    pub fn proportions(&self) -> &[f64] {
        &self.proportions
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Number of slices, h+1.
    pub fn num_slices(&self) -> usize {
        self.counts.len()
    }

    /// Number of basis functions, h (the last slice is dropped).
    pub fn basis_size(&self) -> usize {
        self.counts.len() - 1
    }
}

/// Splits the response into `num_slices` equal-count slices.
///
/// Ties are never split across a boundary: a group of equal responses is
/// assigned wholly to the slice covering its middle rank. Fails with
/// [`Error::DegenerateResponse`] when there are fewer distinct values than
/// slices or a slice would come out empty after tie handling.
pub fn make_slices(y: &[f64], num_slices: usize) -> Result<SliceAssignment> {
    let n = y.len();
    if num_slices < 2 {
        return Err(Error::InvalidParameter(
            "num_slices must be at least 2".into(),
        ));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response".into()));
    }
    if n < num_slices {
        return Err(Error::DegenerateResponse(format!(
            "{n} observations cannot fill {num_slices} slices"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| y[i].total_cmp(&y[j]).then(i.cmp(&j)));

    let distinct = 1 + (1..n).filter(|&k| y[order[k]] != y[order[k - 1]]).count();
    if distinct < num_slices {
        return Err(Error::DegenerateResponse(format!(
            "only {distinct} distinct response values for {num_slices} slices"
        )));
    }

    // Tentative slice of sorted rank k is floor(k * S / n); a tie group takes
    // the slice of its middle rank so it is never split.
    let mut labels = vec![0usize; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && y[order[end]] == y[order[start]] {
            end += 1;
        }
        let mid = (start + end - 1) / 2;
        let slice = mid * num_slices / n;
        for &i in &order[start..end] {
            labels[i] = slice + 1;
        }
        start = end;
    }

    let mut counts = vec![0usize; num_slices];
    for &label in &labels {
        counts[label - 1] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::DegenerateResponse(
            "a slice is empty after tie handling".into(),
        ));
    }
    let proportions: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();

    let mut boundaries = Vec::with_capacity(num_slices - 1);
    for k in 1..n {
        if labels[order[k]] != labels[order[k - 1]] {
            boundaries.push(0.5 * (y[order[k - 1]] + y[order[k]]));
        }
    }
    debug_assert_eq!(boundaries.len(), num_slices - 1);

    Ok(SliceAssignment {
        labels,
        counts,
        proportions,
        boundaries,
    })
}

/// Indicator basis over the first h slices: row i carries a single 1 in
/// column `label(i) - 1` when label(i) <= h and is all zero for the dropped
/// last slice.
pub fn indicator_basis(assignment: &SliceAssignment) -> DMatrix<f64> {
    let n = assignment.labels.len();
    let h = assignment.basis_size();
    DMatrix::from_fn(n, h, |i, j| {
        if assignment.labels[i] == j + 1 {
            1.0
        } else {
            0.0
        }
    })
}

/// All empirical moments the estimators need, computed with divisor n.
#[derive(Debug, Clone)]
pub struct DesignMoments {
    /// h x h covariance of the basis evaluations, W.
    pub w: DMatrix<f64>,
    /// h x p cross-moment between centered basis and centered predictors, M.
    pub m: DMatrix<f64>,
    /// p x p predictor covariance.
    pub sigma_hat: DMatrix<f64>,
    /// p x p between-slice covariance.
    pub gamma_hat: DMatrix<f64>,
    /// Mean predictor.
    pub x_bar: DVector<f64>,
    /// Mean basis evaluation.
    pub s_bar: DVector<f64>,
    /// (h+1) x p matrix of per-slice predictor means.
    pub slice_means: DMatrix<f64>,
    /// Slice proportions f_1, ..., f_{h+1}.
    pub proportions: Vec<f64>,
    /// Sample size used for the 1/n divisors.
    pub n: usize,
}

impl DesignMoments {
    pub fn p(&self) -> usize {
        self.sigma_hat.nrows()
    }

    pub fn basis_size(&self) -> usize {
        self.w.nrows()
    }

    pub fn num_slices(&self) -> usize {
        self.slice_means.nrows()
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Computes W, M, the predictor covariance, the between-slice covariance and
/// the associated means from a dataset, a basis evaluation matrix and a slice
/// assignment.
pub fn compute_moments(
    data: &Dataset,
    basis: &DMatrix<f64>,
    assignment: &SliceAssignment,
) -> Result<DesignMoments> {
    let n = data.n();
    let p = data.p();
    let h = assignment.basis_size();
    if basis.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "basis has {} rows, dataset has {n}",
            basis.nrows()
        )));
    }
    if basis.ncols() != h {
        return Err(Error::ShapeMismatch(format!(
            "basis has {} columns, assignment implies {h}",
            basis.ncols()
        )));
    }
    if assignment.labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "assignment covers {} observations, dataset has {n}",
            assignment.labels.len()
        )));
    }

    let x = data.x();
    let nf = n as f64;

    let mut x_bar = DVector::zeros(p);
    for i in 0..n {
        for j in 0..p {
            x_bar[j] += x[(i, j)];
        }
    }
    x_bar /= nf;

    let mut s_bar = DVector::zeros(h);
    for i in 0..n {
        for j in 0..h {
            s_bar[j] += basis[(i, j)];
        }
    }
    s_bar /= nf;

    let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - x_bar[j]);
    let sc = DMatrix::from_fn(n, h, |i, j| basis[(i, j)] - s_bar[j]);

    let w = symmetrize(&(sc.transpose() * &sc / nf));
    let m = sc.transpose() * &xc / nf;
    let sigma_hat = symmetrize(&(xc.transpose() * &xc / nf));

    let num_slices = assignment.num_slices();
    let mut slice_means = DMatrix::zeros(num_slices, p);
    for i in 0..n {
        let j = assignment.labels[i] - 1;
        for k in 0..p {
            slice_means[(j, k)] += x[(i, k)];
        }
    }
    for j in 0..num_slices {
        let count = assignment.counts[j] as f64;
        for k in 0..p {
            slice_means[(j, k)] /= count;
        }
    }

    let mut gamma_hat = DMatrix::zeros(p, p);
    for j in 0..num_slices {
        let dev = slice_means.row(j).transpose() - &x_bar;
        gamma_hat += assignment.proportions[j] * (&dev * dev.transpose());
    }

    Ok(DesignMoments {
        w,
        m,
        sigma_hat,
        gamma_hat,
        x_bar,
        s_bar,
        slice_means,
        proportions: assignment.proportions.clone(),
        n,
    })
}

/// Closed-form inverse of the indicator-basis covariance W:
/// diag(1/f_1, ..., 1/f_h) + U / f_{h+1} with U the all-ones matrix.
pub fn w_inverse_indicator(proportions: &[f64]) -> Result<DMatrix<f64>> {
    let num_slices = proportions.len();
    if num_slices < 2 {
        return Err(Error::InvalidParameter(
            "need at least 2 slice proportions".into(),
        ));
    }
    for (j, &f) in proportions.iter().enumerate() {
        if !(f > 0.0) {
            return Err(Error::DegenerateSlice(j + 1));
        }
    }
    let h = num_slices - 1;
    let last = proportions[num_slices - 1];
    Ok(DMatrix::from_fn(h, h, |i, j| {
        let mut v = 1.0 / last;
        if i == j {
            v += 1.0 / proportions[i];
        }
        v
    }))
}
