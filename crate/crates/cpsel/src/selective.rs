//! Selective inference for a detected change point.
//!
//! Conditional on the discrete outcome of detection (argmax cell, signs,
//! rank orders), the statistic `theta = delta' Y eta` is a normal variable
//! truncated to a computable interval `[L, U]`. This module computes that
//! interval two independent ways (closed forms per aggregation rule, and a
//! generic routine working from an explicit constraint system), the
//! truncated-normal p-value, a naive uncorrected p-value, and a local power
//! approximation.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::aggregation::{aggregate_with, AggregationSpec, DetectionResult};
use crate::error::{Error, Result};
use crate::model::{cusum_contrast, cusum_scores, KroneckerCovariance, SequenceMatrix};
use crate::stats::{ln_normal_sf, log_sub_exp, normal_pdf, normal_sf, normal_sf_quantile};

/// Rows with |slope| at or below this are constraints on the residual part
/// of the data, not on the statistic. Shared by the closed forms and the
/// generic route so both classify rows identically.
const ZERO_SLOPE_TOL: f64 = 1e-10;

/// Relative slack for "holds at the observed data" checks and for snapping
/// rounding-level boundary violations.
const SNAP_RTOL: f64 = 1e-8;

/// Standardized-statistic size beyond which p-values move to log-space.
const LOG_SPACE_SWITCH: f64 = 6.0;

fn ser_maybe_inf<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

/// The truncation interval of the conditional law of `theta`, together with
/// the conditional scale `v` and the observed statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncationInterval {
    lower: f64,
    #[serde(serialize_with = "ser_maybe_inf")]
    upper: f64,
    v: f64,
    theta: f64,
    snapped: bool,
}

impl TruncationInterval {
    /// Builds and validates an interval. `upper` may be `f64::INFINITY`.
    ///
    /// Rounding-level violations of `0 <= lower <= theta <= upper` (within
    /// 1e-8 relative to `max(1, |theta|)`) are snapped onto `theta` and
    /// flagged; larger violations are errors, since they indicate a wrong
    /// constraint system rather than floating-point noise.
    pub fn new(lower: f64, upper: f64, v: f64, theta: f64) -> Result<Self> {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "conditional scale must be a positive finite number, got {v}"
            )));
        }
        if !theta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "statistic must be finite, got {theta}"
            )));
        }
        if !lower.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lower truncation bound must be finite, got {lower}"
            )));
        }
        let tol = SNAP_RTOL * theta.abs().max(1.0);
        let mut snapped = false;
        let mut lower = lower;
        let mut upper = upper;
        if lower < 0.0 {
            if lower < -tol {
                return Err(Error::InvalidArgument(format!(
                    "lower truncation bound must be non-negative, got {lower}"
                )));
            }
            lower = 0.0;
            snapped = true;
        }
        if theta < lower {
            if lower - theta > tol {
                return Err(Error::InvalidInput(format!(
                    "statistic {theta} below lower truncation bound {lower}"
                )));
            }
            lower = theta;
            snapped = true;
        }
        if theta > upper {
            if theta - upper > tol {
                return Err(Error::InvalidInput(format!(
                    "statistic {theta} above upper truncation bound {upper}"
                )));
            }
            upper = theta;
            snapped = true;
        }
        // Negated form so NaN bounds fail the guard too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(upper > lower) {
            return Err(Error::Numerical(format!(
                "empty truncation interval: lower {lower} >= upper {upper}"
            )));
        }
        Ok(TruncationInterval {
            lower,
            upper,
            v,
            theta,
            snapped,
        })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    /// Upper bound; `f64::INFINITY` when no constraint binds from above.
    pub fn upper(&self) -> f64 {
        self.upper
    }

    /// Conditional standard deviation of the statistic.
    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// True when a bound was moved onto `theta` to absorb rounding noise.
    pub fn snapped(&self) -> bool {
        self.snapped
    }
}

/// Running max/min of interval candidates contributed by constraint rows.
///
/// Each row asserts `value + slope * (theta' - theta) <= 0` along the
/// statistic axis, where `value` is the row evaluated at the observed data
/// (so `value <= 0` must already hold). Negative slopes yield lower-bound
/// candidates `theta - value/slope`, positive slopes upper-bound candidates,
/// and near-zero slopes are residual feasibility checks.
struct BoundAccumulator {
    theta: f64,
    value_tol: f64,
    lower: f64,
    upper: f64,
    residual_ok: bool,
    worst_value: f64,
}

impl BoundAccumulator {
    fn new(theta: f64) -> Self {
        BoundAccumulator {
            theta,
            value_tol: SNAP_RTOL * theta.abs().max(1.0),
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            residual_ok: true,
            worst_value: f64::NEG_INFINITY,
        }
    }

    fn push(&mut self, value: f64, slope: f64) {
        if slope.abs() <= ZERO_SLOPE_TOL {
            if value > self.value_tol {
                self.residual_ok = false;
            }
            return;
        }
        if value > self.worst_value {
            self.worst_value = value;
        }
        let bound = self.theta - value / slope;
        if slope < 0.0 {
            if bound > self.lower {
                self.lower = bound;
            }
        } else if bound < self.upper {
            self.upper = bound;
        }
    }

    fn push_lower(&mut self, bound: f64) {
        if bound > self.lower {
            self.lower = bound;
        }
    }

    fn check(&self) -> Result<()> {
        if self.worst_value > self.value_tol {
            return Err(Error::InvalidInput(format!(
                "selection event does not hold at the observed data \
                 (worst constraint excess {:.3e})",
                self.worst_value
            )));
        }
        if self.lower > self.upper {
            return Err(Error::Numerical(format!(
                "incompatible truncation bounds: lower {} exceeds upper {}",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    /// Bounds plus the residual-feasibility flag, for the generic route.
    fn finish_raw(self) -> Result<(f64, f64, bool)> {
        self.check()?;
        Ok((self.lower, self.upper, self.residual_ok))
    }

    /// Validated interval for the closed forms, which own their constraint
    /// systems and treat a residual violation as an internal error.
    fn finish_interval(self, v: f64) -> Result<TruncationInterval> {
        self.check()?;
        if !self.residual_ok {
            return Err(Error::Numerical(
                "residual constraint violated while assembling the truncation interval".into(),
            ));
        }
        TruncationInterval::new(self.lower, self.upper, v, self.theta)
    }
}

/// Generic truncation computation from an explicit affine selection event
/// `{A vec(Y) <= b}` (column-major vec). Decomposes the data along the
/// direction `gamma = (Xi eta (x) Sigma delta) / v^2`, leaving the part
/// independent of `theta = delta' Y eta`, and intersects the half-lines the
/// rows impose on `theta`.
///
/// Returns `(L, U, residual_ok)`; `L` is `-inf` and `U` is `+inf` when no
/// row bounds that side, and `residual_ok` reports whether all rows with
/// zero slope along `gamma` hold at the observed data.
pub fn polyhedral_truncation(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    y: &SequenceMatrix,
    cov: &KroneckerCovariance,
    delta: &DVector<f64>,
    eta: &DVector<f64>,
) -> Result<(f64, f64, bool)> {
    let n = y.n_dims();
    let t = y.t_len();
    if delta.len() != n || eta.len() != t {
        return Err(Error::InvalidArgument(format!(
            "contrast sizes ({}, {}) do not match the {n} x {t} data",
            delta.len(),
            eta.len()
        )));
    }
    cov.check_dims(n, t)?;
    if a.ncols() != n * t {
        return Err(Error::InvalidArgument(format!(
            "constraint matrix has {} columns, expected {}",
            a.ncols(),
            n * t
        )));
    }
    if b.len() != a.nrows() {
        return Err(Error::InvalidArgument(format!(
            "constraint vector length {} does not match {} rows",
            b.len(),
            a.nrows()
        )));
    }

    let xi_eta = cov.xi() * eta;
    let sigma_delta = cov.sigma() * delta;
    let v2 = eta.dot(&xi_eta) * delta.dot(&sigma_delta);
    if !v2.is_finite() || v2 <= 0.0 {
        return Err(Error::Numerical(format!(
            "conditional variance of the statistic is not positive ({v2})"
        )));
    }
    let theta = delta.dot(&(y.values() * eta));

    let mut gamma = DVector::zeros(n * t);
    for u in 0..t {
        for i in 0..n {
            gamma[u * n + i] = xi_eta[u] * sigma_delta[i] / v2;
        }
    }
    let vec_y = DVector::from_column_slice(y.values().as_slice());

    // Row value at the observed data and slope along gamma; the candidate
    // bound theta - value/slope equals (b - A z)/(A gamma) exactly.
    let at_y = a * vec_y;
    let along = a * gamma;
    let mut acc = BoundAccumulator::new(theta);
    for l in 0..a.nrows() {
        acc.push(at_y[l] - b[l], along[l]);
    }
    acc.finish_raw()
}

/// Shared geometry of a detection under a Kronecker covariance: the time
/// correlation of every candidate contrast with the selected one, the
/// dimension-space image of `delta`, and the statistic's variance.
struct ContrastGeometry {
    /// `q[u-1] = eta_u' Xi eta_{t_hat}` for every candidate time `u`.
    q: Vec<f64>,
    sigma_delta: DVector<f64>,
    v2: f64,
    v: f64,
    theta: f64,
    t_hat: usize,
}

fn contrast_geometry(
    result: &DetectionResult,
    cov: &KroneckerCovariance,
) -> Result<ContrastGeometry> {
    let n = result.profile().n_dims();
    let t = result.eta().len();
    cov.check_dims(n, t)?;
    let xi_eta = cov.xi() * result.eta();
    // Every eta_u is itself a CUSUM contrast, so the whole correlation
    // profile u -> eta_u' (Xi eta) is one CUSUM pass over Xi eta.
    let q = cusum_scores(xi_eta.as_slice());
    let sigma_delta = cov.sigma() * result.delta();
    let v2 = q[result.t_hat() - 1] * result.delta().dot(&sigma_delta);
    if !v2.is_finite() || v2 <= 0.0 {
        return Err(Error::Numerical(format!(
            "conditional variance of the statistic is not positive ({v2})"
        )));
    }
    Ok(ContrastGeometry {
        q,
        sigma_delta,
        v2,
        v: v2.sqrt(),
        theta: result.theta(),
        t_hat: result.t_hat(),
    })
}

/// Closed-form truncation interval for a max-dimension (`LInf`) detection.
///
/// The selection event is that the selected signed score beats `|S_j(u)|`
/// for every candidate pair, so each pair contributes the two half-plane
/// rows of `|S_j(u)| <= theta'`. The selected pair itself pins the interval
/// at zero from below and is excluded from the sweep.
pub fn truncation_linf(
    result: &DetectionResult,
    cov: &KroneckerCovariance,
) -> Result<TruncationInterval> {
    if !matches!(result.spec(), AggregationSpec::LInf) {
        return Err(Error::InvalidArgument(
            "detection was not produced by the max-dimension rule".into(),
        ));
    }
    let geo = contrast_geometry(result, cov)?;
    let profile = result.profile();
    let scores = profile.scores();
    let selected_dim = profile.ranks()[geo.t_hat - 1][0];

    let mut acc = BoundAccumulator::new(geo.theta);
    acc.push_lower(0.0);
    for col in 0..profile.n_candidates() {
        let u = col + 1;
        for dim in 0..profile.n_dims() {
            if u == geo.t_hat && dim == selected_dim {
                continue;
            }
            let tau = geo.q[col] * geo.sigma_delta[dim] / geo.v2;
            let s = scores[(dim, col)];
            acc.push(s - geo.theta, tau - 1.0);
            acc.push(-s - geo.theta, -tau - 1.0);
        }
    }
    acc.finish_interval(geo.v)
}

/// Closed-form truncation interval for a sum-of-absolute-scores (`L1`)
/// detection. The event fixes the sign of every score at every candidate
/// time and makes the signed column sum maximal at `t_hat`.
pub fn truncation_l1(
    result: &DetectionResult,
    cov: &KroneckerCovariance,
) -> Result<TruncationInterval> {
    if !matches!(result.spec(), AggregationSpec::L1) {
        return Err(Error::InvalidArgument(
            "detection was not produced by the sum rule".into(),
        ));
    }
    let geo = contrast_geometry(result, cov)?;
    let profile = result.profile();
    let scores = profile.scores();
    let signs = profile.signs();
    let n = profile.n_dims();

    let mut acc = BoundAccumulator::new(geo.theta);
    acc.push_lower(0.0);
    for col in 0..profile.n_candidates() {
        let u = col + 1;
        let mut signed_sum = 0.0;
        let mut tau = 0.0;
        for dim in 0..n {
            let s = signs[(dim, col)];
            signed_sum += s * scores[(dim, col)];
            tau += s * geo.sigma_delta[dim];
            // Sign constraint: -s * S_dim(u) <= 0.
            acc.push(
                -s * scores[(dim, col)],
                -geo.q[col] * s * geo.sigma_delta[dim] / geo.v2,
            );
        }
        tau *= geo.q[col] / geo.v2;
        // Maximality against time u; at t_hat the row is 0 <= 0 with zero
        // slope by construction, so it is skipped rather than divided out.
        if u != geo.t_hat {
            acc.push(signed_sum - geo.theta, tau - 1.0);
        }
    }
    acc.finish_interval(geo.v)
}

/// Closed-form truncation interval for a top-`k` detection.
///
/// The event records, for every candidate time, which `k` dimensions form
/// the top set, the signs of those dimensions, and that the selected
/// column's top-set sum is maximal. Set membership reduces to pairwise
/// dominance `|S_l(u)| <= |S_j(u)|` between the set and its complement,
/// which stays affine after the signs are fixed.
pub fn truncation_topk(
    result: &DetectionResult,
    cov: &KroneckerCovariance,
    k: usize,
) -> Result<TruncationInterval> {
    match result.spec() {
        AggregationSpec::TopK { k: spec_k } if *spec_k == k => {}
        _ => {
            return Err(Error::InvalidArgument(format!(
                "detection was not produced by the top-{k} rule"
            )))
        }
    }
    let geo = contrast_geometry(result, cov)?;
    let profile = result.profile();
    let scores = profile.scores();
    let signs = profile.signs();
    let mut acc = BoundAccumulator::new(geo.theta);
    acc.push_lower(0.0);
    for col in 0..profile.n_candidates() {
        let u = col + 1;
        let ranks = &profile.ranks()[col];
        let slope_of = |dim: usize| geo.q[col] * geo.sigma_delta[dim] / geo.v2;

        let mut top_sum = 0.0;
        let mut tau = 0.0;
        for &j in &ranks[..k] {
            let s = signs[(j, col)];
            top_sum += s * scores[(j, col)];
            tau += s * geo.sigma_delta[j];
            acc.push(-s * scores[(j, col)], -s * slope_of(j));
        }
        tau *= geo.q[col] / geo.v2;

        for &j in &ranks[..k] {
            let sj = signs[(j, col)];
            let abs_j = sj * scores[(j, col)];
            for &l in &ranks[k..] {
                let sl = scores[(l, col)];
                acc.push(sl - abs_j, slope_of(l) - sj * slope_of(j));
                acc.push(-sl - abs_j, -slope_of(l) - sj * slope_of(j));
            }
        }

        if u != geo.t_hat {
            acc.push(top_sum - geo.theta, tau - 1.0);
        }
    }
    acc.finish_interval(geo.v)
}

/// Closed-form truncation interval for the general weighted-rank rules
/// (double CUSUM and custom weights).
///
/// The event fixes, at every candidate time, the rank order and signs of
/// all scores, and makes the selected weight row at the selected time beat
/// every other `(time, row)` cell. With order and signs fixed, every
/// aggregate cell is affine in the data.
pub fn truncation_general_wrag(
    result: &DetectionResult,
    cov: &KroneckerCovariance,
) -> Result<TruncationInterval> {
    if !matches!(
        result.spec(),
        AggregationSpec::DoubleCusum { .. } | AggregationSpec::CustomWrag { .. }
    ) {
        return Err(Error::InvalidArgument(
            "detection was not produced by a general weighted-rank rule".into(),
        ));
    }
    let geo = contrast_geometry(result, cov)?;
    let profile = result.profile();
    let scores = profile.scores();
    let signs = profile.signs();
    let n = profile.n_dims();
    let weights = result.weights();
    let agg = aggregate_with(weights, profile);

    let mut acc = BoundAccumulator::new(geo.theta);
    acc.push_lower(0.0);
    let mut sorted_abs = vec![0.0; n];
    let mut sorted_slope = vec![0.0; n];
    for col in 0..profile.n_candidates() {
        let u = col + 1;
        let ranks = &profile.ranks()[col];
        for l in 0..n {
            let dim = ranks[l];
            let s = signs[(dim, col)];
            sorted_abs[l] = s * scores[(dim, col)];
            sorted_slope[l] = geo.q[col] * s * geo.sigma_delta[dim] / geo.v2;
        }
        // Rank order: each sorted score dominates the next.
        for l in 0..n - 1 {
            acc.push(
                sorted_abs[l + 1] - sorted_abs[l],
                sorted_slope[l + 1] - sorted_slope[l],
            );
        }
        // Signs: every sorted score is non-negative.
        for l in 0..n {
            acc.push(-sorted_abs[l], -sorted_slope[l]);
        }
        // Maximality over every other aggregate cell.
        for row in 0..weights.nrows() {
            if u == geo.t_hat && row + 1 == result.k_hat() {
                continue;
            }
            let mut tau = 0.0;
            for l in 0..n {
                tau += weights[(row, l)] * sorted_slope[l];
            }
            acc.push(agg[(row, col)] - geo.theta, tau - 1.0);
        }
    }
    acc.finish_interval(geo.v)
}

/// Materializes the selection event of a detection as an explicit affine
/// system `{A vec(Y) <= 0}` over the column-major vectorized data.
///
/// Each row is built directly from the linear functionals involved (scores,
/// their signed sums, and the statistic itself), independently of the
/// closed-form interval algebra, so feeding the output to
/// [`polyhedral_truncation`] cross-checks the closed forms end to end.
pub fn event_system(result: &DetectionResult) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let profile = result.profile();
    let n = profile.n_dims();
    let t = result.eta().len();
    let signs = profile.signs();

    let etas: Vec<DVector<f64>> = (1..t)
        .map(|u| cusum_contrast(u, t).map(|c| c.eta().clone()))
        .collect::<Result<_>>()?;

    // Coefficient layout: entry (i, u) of Y sits at column u*n + i.
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let score_term = |row: &mut Vec<f64>, coeff: f64, dim: usize, col: usize| {
        let eta_u = &etas[col];
        for time in 0..t {
            row[time * n + dim] += coeff * eta_u[time];
        }
    };
    let statistic_term = |row: &mut Vec<f64>, delta: &DVector<f64>, eta: &DVector<f64>| {
        for time in 0..t {
            for dim in 0..n {
                row[time * n + dim] -= delta[dim] * eta[time];
            }
        }
    };

    match result.spec() {
        AggregationSpec::LInf => {
            for col in 0..profile.n_candidates() {
                for dim in 0..n {
                    for sign in [1.0, -1.0] {
                        let mut row = vec![0.0; n * t];
                        score_term(&mut row, sign, dim, col);
                        statistic_term(&mut row, result.delta(), result.eta());
                        rows.push(row);
                    }
                }
            }
        }
        AggregationSpec::L1 => {
            for col in 0..profile.n_candidates() {
                let mut max_row = vec![0.0; n * t];
                for dim in 0..n {
                    let s = signs[(dim, col)];
                    score_term(&mut max_row, s, dim, col);
                    let mut sign_row = vec![0.0; n * t];
                    score_term(&mut sign_row, -s, dim, col);
                    rows.push(sign_row);
                }
                statistic_term(&mut max_row, result.delta(), result.eta());
                rows.push(max_row);
            }
        }
        AggregationSpec::TopK { k } => {
            for col in 0..profile.n_candidates() {
                let ranks = &profile.ranks()[col];
                let mut max_row = vec![0.0; n * t];
                for &j in &ranks[..*k] {
                    let s = signs[(j, col)];
                    score_term(&mut max_row, s, j, col);
                    let mut sign_row = vec![0.0; n * t];
                    score_term(&mut sign_row, -s, j, col);
                    rows.push(sign_row);
                    for &l in &ranks[*k..] {
                        for sign in [1.0, -1.0] {
                            let mut pair_row = vec![0.0; n * t];
                            score_term(&mut pair_row, sign, l, col);
                            score_term(&mut pair_row, -s, j, col);
                            rows.push(pair_row);
                        }
                    }
                }
                statistic_term(&mut max_row, result.delta(), result.eta());
                rows.push(max_row);
            }
        }
        AggregationSpec::DoubleCusum { .. } | AggregationSpec::CustomWrag { .. } => {
            let weights = result.weights();
            for col in 0..profile.n_candidates() {
                let ranks = &profile.ranks()[col];
                for l in 0..n - 1 {
                    let mut row = vec![0.0; n * t];
                    score_term(&mut row, signs[(ranks[l + 1], col)], ranks[l + 1], col);
                    score_term(&mut row, -signs[(ranks[l], col)], ranks[l], col);
                    rows.push(row);
                }
                for l in 0..n {
                    let mut row = vec![0.0; n * t];
                    score_term(&mut row, -signs[(ranks[l], col)], ranks[l], col);
                    rows.push(row);
                }
                for w_row in 0..weights.nrows() {
                    let mut row = vec![0.0; n * t];
                    for l in 0..n {
                        score_term(
                            &mut row,
                            weights[(w_row, l)] * signs[(ranks[l], col)],
                            ranks[l],
                            col,
                        );
                    }
                    statistic_term(&mut row, result.delta(), result.eta());
                    rows.push(row);
                }
            }
        }
    }

    let n_rows = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let a = DMatrix::from_row_slice(n_rows, n * t, &flat);
    let b = DVector::zeros(n_rows);
    Ok((a, b))
}

/// The selective test for one detection: interval, p-values, and flags.
#[derive(Debug, Clone)]
pub struct SelectiveTest {
    detection: DetectionResult,
    interval: TruncationInterval,
    p_selective: f64,
    p_naive: f64,
    low_precision: bool,
}

impl SelectiveTest {
    pub fn detection(&self) -> &DetectionResult {
        &self.detection
    }

    pub fn interval(&self) -> &TruncationInterval {
        &self.interval
    }

    /// Truncated-normal tail probability of the statistic; exact
    /// conditional on the selection event.
    pub fn p_selective(&self) -> f64 {
        self.p_selective
    }

    /// Uncorrected normal tail probability of the same statistic.
    pub fn p_naive(&self) -> f64 {
        self.p_naive
    }

    /// True when the interval's normal mass underflowed and the selective
    /// p-value fell back to a tail approximation.
    pub fn low_precision(&self) -> bool {
        self.low_precision
    }

    pub fn t_hat(&self) -> usize {
        self.detection.t_hat()
    }

    pub fn k_hat(&self) -> usize {
        self.detection.k_hat()
    }

    pub fn aggregation(&self) -> &AggregationSpec {
        self.detection.spec()
    }

    /// Bonferroni correction over `m` simultaneous tests: multiplies the
    /// selective p-value by `m` and clamps to 1. The naive p-value is left
    /// alone, since it makes no validity claim to preserve.
    pub fn bonferroni_adjusted(mut self, m: usize) -> Self {
        self.p_selective = (self.p_selective * m as f64).min(1.0);
        self
    }
}

/// Truncated-normal p-value `P(X >= theta | X in [L, U])` for
/// `X ~ N(0, v^2)`, with the flag reporting precision loss.
///
/// Survival functions are used throughout; past 6 standard units the
/// computation moves to log-space, and if the interval's mass underflows
/// even there, an exponential tail approximation is returned with the flag
/// set.
pub fn selective_p_value(interval: &TruncationInterval) -> (f64, bool) {
    let t = interval.theta() / interval.v();
    let a = interval.lower() / interval.v();
    let b = interval.upper() / interval.v();
    if interval.theta() == interval.lower() {
        return (1.0, false);
    }
    if interval.theta() == interval.upper() {
        return (0.0, false);
    }

    if t <= LOG_SPACE_SWITCH {
        let sf_t = normal_sf(t);
        let sf_a = normal_sf(a);
        let sf_b = if b.is_finite() { normal_sf(b) } else { 0.0 };
        let den = sf_a - sf_b;
        if den > 0.0 {
            return (((sf_t - sf_b) / den).clamp(0.0, 1.0), false);
        }
    }

    let ln_t = ln_normal_sf(t);
    let ln_a = ln_normal_sf(a);
    let ln_b = if b.is_finite() {
        ln_normal_sf(b)
    } else {
        f64::NEG_INFINITY
    };
    let ln_den = log_sub_exp(ln_a, ln_b);
    if ln_den.is_finite() {
        let ln_num = log_sub_exp(ln_t, ln_b);
        if ln_num == f64::NEG_INFINITY {
            // theta is so deep in the tail that its mass is unresolvable.
            return (0.0, true);
        }
        return ((ln_num - ln_den).exp().clamp(0.0, 1.0), false);
    }

    // The interval is too narrow or too remote for log-space survival
    // differences. Conditional on [a, b], the standardized excess is
    // approximately exponential with rate a.
    let rate = a.max(1.0);
    let num = if b.is_finite() {
        (-rate * (t - a)).exp() - (-rate * (b - a)).exp()
    } else {
        (-rate * (t - a)).exp()
    };
    let den = if b.is_finite() {
        -(-rate * (b - a)).exp_m1()
    } else {
        1.0
    };
    if den > 0.0 && num.is_finite() {
        ((num / den).clamp(0.0, 1.0), true)
    } else {
        // Last resort: linear interpolation across the interval.
        (((b - t) / (b - a)).clamp(0.0, 1.0), true)
    }
}

/// Uncorrected p-value `P(N(0, v^2) >= theta)`. Requires `v > 0`.
pub fn naive_p_value(theta: f64, v: f64) -> f64 {
    normal_sf(theta / v)
}

/// Local power approximation of the level-`alpha` selective test around the
/// null, evaluated at alternative mean `mu` of the statistic.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PowerEstimate {
    alpha: f64,
    mu: f64,
    /// First-order sensitivity, stored non-positive: the rejection
    /// probability grows at rate `|kappa|` per standardized unit of mean.
    kappa: f64,
    /// Second-order Taylor expansion of the power in `mu`.
    power_quadratic: f64,
    /// Conservative closed-form lower bound on the local power.
    power_lower_bound: f64,
    /// Rejection threshold of the level-`alpha` test on the `theta` scale.
    z_alpha: f64,
}

impl PowerEstimate {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn power_quadratic(&self) -> f64 {
        self.power_quadratic
    }

    pub fn power_lower_bound(&self) -> f64 {
        self.power_lower_bound
    }

    pub fn z_alpha(&self) -> f64 {
        self.z_alpha
    }
}

/// Expands the power of the level-`alpha` truncated-normal test at
/// alternative mean `mu`, keeping the interval fixed at its observed value.
///
/// With `a = L/v`, `b = U/v`, the rejection threshold `z` satisfies
/// `Phi(z) = Phi(b) - alpha (Phi(b) - Phi(a))`, and the power
/// `P(m) = (Phi(b-m) - Phi(z-m)) / (Phi(b-m) - Phi(a-m))` in `m = mu/v` is
/// expanded to second order around `m = 0`, so `P(0) = alpha` exactly.
pub fn power_estimate(interval: &TruncationInterval, alpha: f64, mu: f64) -> Result<PowerEstimate> {
    if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "significance level must lie strictly between 0 and 1, got {alpha}"
        )));
    }
    if !mu.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "alternative mean must be finite, got {mu}"
        )));
    }
    let v = interval.v();
    let a = interval.lower() / v;
    let b = interval.upper() / v;
    let b_finite = b.is_finite();

    let sf_a = normal_sf(a);
    let sf_b = if b_finite { normal_sf(b) } else { 0.0 };
    let mass = sf_a - sf_b;
    // Negated form so a NaN mass fails the guard too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(mass > 0.0) {
        return Err(Error::Numerical(
            "truncation interval carries no resolvable normal mass".into(),
        ));
    }
    let z = normal_sf_quantile(sf_b + alpha * mass)?;

    let phi_a = normal_pdf(a);
    let phi_b = if b_finite { normal_pdf(b) } else { 0.0 };
    let phi_z = normal_pdf(z);
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(phi_a - phi_b > 0.0) {
        return Err(Error::Numerical(
            "truncation interval densities underflow; power expansion undefined".into(),
        ));
    }

    // First derivative of the power in m = mu/v at 0.
    let slope = (phi_z - phi_b + alpha * (phi_b - phi_a)) / mass;
    // Second derivative, from differentiating the power ratio twice.
    let b_phi_b = if b_finite { b * phi_b } else { 0.0 };
    let curv = (z * phi_z - b_phi_b - alpha * (a * phi_a - b_phi_b)) / mass
        - 2.0 * (phi_a - phi_b) * slope / mass;

    let m = mu / v;
    let power_quadratic = (alpha + slope * m + 0.5 * curv * m * m).clamp(0.0, 1.0);
    let power_lower_bound =
        (0.75 * alpha + 0.25 * (phi_z - phi_b) / (phi_a - phi_b)).clamp(0.0, 1.0);

    Ok(PowerEstimate {
        alpha,
        mu,
        kappa: -slope,
        power_quadratic,
        power_lower_bound,
        z_alpha: z * v,
    })
}

/// Builds the selective test for an existing detection.
pub fn test_from_detection(
    result: DetectionResult,
    cov: &KroneckerCovariance,
) -> Result<SelectiveTest> {
    let interval = match result.spec() {
        AggregationSpec::LInf => truncation_linf(&result, cov)?,
        AggregationSpec::L1 => truncation_l1(&result, cov)?,
        AggregationSpec::TopK { k } => truncation_topk(&result, cov, *k)?,
        AggregationSpec::DoubleCusum { .. } | AggregationSpec::CustomWrag { .. } => {
            truncation_general_wrag(&result, cov)?
        }
    };
    let (p_selective, low_precision) = selective_p_value(&interval);
    let p_naive = naive_p_value(interval.theta(), interval.v());
    Ok(SelectiveTest {
        detection: result,
        interval,
        p_selective,
        p_naive,
        low_precision,
    })
}

/// Detects a single change point and tests it: detection, the truncation
/// interval matched to the aggregation rule, and both p-values.
pub fn run_selective_test(
    y: &SequenceMatrix,
    spec: &AggregationSpec,
    cov: &KroneckerCovariance,
) -> Result<SelectiveTest> {
    let result = crate::aggregation::detect_single(y, spec)?;
    test_from_detection(result, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::detect_single;

    fn small_y() -> SequenceMatrix {
        SequenceMatrix::from_rows(&[vec![0.1, -0.4, 1.2, 0.9], vec![0.0, 0.3, -0.2, 0.5]]).unwrap()
    }

    #[test]
    fn accumulator_routes_rows_by_slope() {
        let mut acc = BoundAccumulator::new(2.0);
        acc.push(-1.0, 1.0); // theta' <= 3
        acc.push(-3.0, -2.0); // theta' >= 0.5
        acc.push(-0.5, 0.0); // residual, satisfied
        let (l, u, ok) = acc.finish_raw().unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(u, 3.0);
        assert!(ok);
    }

    #[test]
    fn accumulator_flags_residual_violation() {
        let mut acc = BoundAccumulator::new(1.0);
        acc.push(0.5, 0.0);
        let (_, _, ok) = acc.finish_raw().unwrap();
        assert!(!ok);
    }

    #[test]
    fn accumulator_rejects_violated_event() {
        let mut acc = BoundAccumulator::new(1.0);
        acc.push(0.5, -1.0);
        assert!(acc.finish_raw().is_err());
    }

    #[test]
    fn single_nonnegativity_constraint_gives_half_line() {
        let y = small_y();
        let cov = KroneckerCovariance::identity(2, 4).unwrap();
        let result = detect_single(&y, &AggregationSpec::L1).unwrap();
        let n = 2;
        let t = 4;
        let mut a = DMatrix::zeros(1, n * t);
        for time in 0..t {
            for dim in 0..n {
                a[(0, time * n + dim)] = -result.delta()[dim] * result.eta()[time];
            }
        }
        let b = DVector::zeros(1);
        let (l, u, ok) =
            polyhedral_truncation(&a, &b, &y, &cov, result.delta(), result.eta()).unwrap();
        assert!(ok);
        assert!((l - 0.0).abs() < 1e-12);
        assert_eq!(u, f64::INFINITY);
    }

    #[test]
    fn interval_snaps_rounding_noise_only() {
        let iv = TruncationInterval::new(1.0 + 1e-12, 2.0, 1.0, 1.0).unwrap();
        assert!(iv.snapped());
        assert_eq!(iv.lower(), 1.0);
        assert!(TruncationInterval::new(1.1, 2.0, 1.0, 1.0).is_err());
        assert!(TruncationInterval::new(0.0, 0.9, 1.0, 1.0).is_err());
        assert!(
            TruncationInterval::new(-1e-12, 2.0, 1.0, 1.0)
                .unwrap()
                .lower()
                == 0.0
        );
    }

    #[test]
    fn closed_form_matches_generic_on_fixed_input() {
        let y = small_y();
        let cov = KroneckerCovariance::identity(2, 4).unwrap();
        for spec in [
            AggregationSpec::LInf,
            AggregationSpec::L1,
            AggregationSpec::TopK { k: 1 },
            AggregationSpec::DoubleCusum { phi: 0.5 },
        ] {
            let result = detect_single(&y, &spec).unwrap();
            let closed = match &spec {
                AggregationSpec::LInf => truncation_linf(&result, &cov).unwrap(),
                AggregationSpec::L1 => truncation_l1(&result, &cov).unwrap(),
                AggregationSpec::TopK { k } => truncation_topk(&result, &cov, *k).unwrap(),
                _ => truncation_general_wrag(&result, &cov).unwrap(),
            };
            let (a, b) = event_system(&result).unwrap();
            let (l, u, ok) =
                polyhedral_truncation(&a, &b, &y, &cov, result.delta(), result.eta()).unwrap();
            assert!(ok, "{spec:?}");
            let l = l.max(0.0);
            assert!(
                (closed.lower() - l).abs() <= 1e-9 * l.abs().max(1.0),
                "{spec:?}: lower {} vs {}",
                closed.lower(),
                l
            );
            if u.is_finite() {
                assert!(
                    (closed.upper() - u).abs() <= 1e-9 * u.abs().max(1.0),
                    "{spec:?}: upper {} vs {}",
                    closed.upper(),
                    u
                );
            } else {
                assert!(!closed.upper().is_finite());
            }
        }
    }

    #[test]
    fn p_value_endpoints_are_exact() {
        let iv = TruncationInterval::new(1.0, 2.0, 1.0, 1.0).unwrap();
        assert_eq!(selective_p_value(&iv), (1.0, false));
        let iv = TruncationInterval::new(0.0, 2.0, 1.0, 2.0).unwrap();
        assert_eq!(selective_p_value(&iv), (0.0, false));
    }

    #[test]
    fn deep_tail_p_values_stay_in_range() {
        let iv = TruncationInterval::new(36.0, f64::INFINITY, 1.0, 37.0).unwrap();
        let (p, low) = selective_p_value(&iv);
        assert!(p > 0.0 && p < 1e-10);
        assert!(!low);

        let thin = TruncationInterval::new(40.0, 40.0 + 1e-13, 1.0, 40.0 + 0.5e-13).unwrap();
        let (p, _) = selective_p_value(&thin);
        assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn power_is_alpha_at_zero_mean() {
        let iv = TruncationInterval::new(0.2, 3.0, 1.0, 1.0).unwrap();
        let est = power_estimate(&iv, 0.05, 0.0).unwrap();
        assert_eq!(est.power_quadratic(), 0.05);
        assert!(est.kappa() <= 0.0);
    }
}
