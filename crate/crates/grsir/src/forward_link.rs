//! Piecewise-linear estimation of the scalar link between the fitted index
//! and the response, plus forward prediction for new predictors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A continuous piecewise-linear map given by knots and values; evaluation
/// interpolates between knots and extrapolates with the boundary slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinearLink {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinearLink {
    /// Builds a link from strictly increasing knots and matching values.
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} knots but {} values",
                knots.len(),
                values.len()
            )));
        }
        if knots.len() < 2 {
            return Err(Error::InvalidParameter("need at least 2 knots".into()));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter(
                "knots must be strictly increasing".into(),
            ));
        }
        if knots.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("link knots or values".into()));
        }
        Ok(Self { knots, values })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Evaluates the link at `t`.
    pub fn evaluate(&self, t: f64) -> f64 {
        let k = self.knots.len();
        // segment [i-1, i] with i clamped so boundary segments extrapolate
        let i = self.knots.partition_point(|&x| x <= t).clamp(1, k - 1);
        let (t0, t1) = (self.knots[i - 1], self.knots[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

/// Default number of link bins: min(25, n/10).
pub fn default_num_bins(n: usize) -> usize {
    25.min(n / 10).max(2)
}

/// Fits the link by piecewise-linear regression: the index is split into
/// `num_bins` equal-count bins, knots are the per-bin index means and values
/// the per-bin response means.
///
/// Bins whose means collide (massive ties) are merged; fails with
/// [`Error::DegenerateIndex`] when the index is nearly constant or fewer than
/// two knots survive.
pub fn fit_link(index: &[f64], y: &[f64], num_bins: usize) -> Result<PiecewiseLinearLink> {
    let n = index.len();
    if y.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "index length {n} != response length {}",
            y.len()
        )));
    }
    if num_bins < 2 {
        return Err(Error::InvalidParameter(
            "num_bins must be at least 2".into(),
        ));
    }
    if n < 2 * num_bins {
        return Err(Error::InvalidParameter(format!(
            "need at least {} observations for {num_bins} bins, got {n}",
            2 * num_bins
        )));
    }
    if index.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("index or response".into()));
    }

    let (lo, hi) = index
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let mean = index.iter().sum::<f64>() / n as f64;
    if hi - lo < 1e-12 * mean.abs() + 1e-300 {
        return Err(Error::DegenerateIndex);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| index[i].total_cmp(&index[j]).then(i.cmp(&j)));

    // equal-count bins over sorted ranks
    let mut bins: Vec<(f64, f64, usize)> = Vec::with_capacity(num_bins);
    for b in 0..num_bins {
        let start = b * n / num_bins;
        let end = (b + 1) * n / num_bins;
        let count = end - start;
        let mut t_sum = 0.0;
        let mut y_sum = 0.0;
        for &i in &order[start..end] {
            t_sum += index[i];
            y_sum += y[i];
        }
        bins.push((t_sum / count as f64, y_sum / count as f64, count));
    }

    // merge bins whose knot means collide (only possible under heavy ties)
    let mut merged: Vec<(f64, f64, usize)> = Vec::with_capacity(bins.len());
    for (t, v, c) in bins {
        match merged.last_mut() {
            Some((pt, pv, pc)) if !(t > *pt) => {
                let total = (*pc + c) as f64;
                *pt = (*pt * *pc as f64 + t * c as f64) / total;
                *pv = (*pv * *pc as f64 + v * c as f64) / total;
                *pc += c;
            }
            _ => merged.push((t, v, c)),
        }
    }
    if merged.len() < 2 {
        return Err(Error::DegenerateIndex);
    }

    PiecewiseLinearLink::new(
        merged.iter().map(|&(t, _, _)| t).collect(),
        merged.iter().map(|&(_, v, _)| v).collect(),
    )
}

/// Computes the centered index b^t (x - x_bar) for every row of `x`.
pub fn compute_index(
    b_hat: &DVector<f64>,
    x_bar: &DVector<f64>,
    x: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let p = b_hat.len();
    if x_bar.len() != p || x.ncols() != p {
        return Err(Error::ShapeMismatch(format!(
            "direction has {p} coordinates, x_bar has {}, predictors have {}",
            x_bar.len(),
            x.ncols()
        )));
    }
    let offset = b_hat.dot(x_bar);
    Ok((0..x.nrows())
        .map(|i| x.row(i).transpose().dot(b_hat) - offset)
        .collect())
}

/// Predicts responses for new predictor rows: evaluates the link at the
/// centered index of every row.
pub fn predict(
    link: &PiecewiseLinearLink,
    b_hat: &DVector<f64>,
    x_bar: &DVector<f64>,
    x_new: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let index = compute_index(b_hat, x_bar, x_new)?;
    Ok(index.into_iter().map(|t| link.evaluate(t)).collect())
}
