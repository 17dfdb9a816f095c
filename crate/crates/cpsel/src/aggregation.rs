//! Weighted rank aggregation (WRAG) of CUSUM profiles and single
//! change-point detection.
//!
//! A WRAG rule scores each candidate time by a weighted sum of the sorted
//! absolute CUSUM values `rho_1(t) >= ... >= rho_N(t)`, maximized over a set
//! of weight rows: `F(S(t)) = max_k sum_j c_{k,j} rho_j(t)`. All weight
//! matrices map sorted non-negative inputs to non-negative scores, which the
//! selective machinery relies on.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cusum_contrast, cusum_profile, CusumContrast, CusumProfile, SequenceMatrix};

fn default_phi() -> f64 {
    0.5
}

/// Which member of the weighted-rank-aggregation family to use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggregationSpec {
    /// Largest absolute score: weight row `(1, 0, ..., 0)`.
    LInf,
    /// Sum of absolute scores: weight row of ones.
    L1,
    /// Sum of the `k` largest absolute scores, `1 <= k <= N`.
    TopK { k: usize },
    /// Second CUSUM across ranks; adaptively chooses how many dimensions
    /// carry the change. Exponent `phi > 0`, default 0.5.
    DoubleCusum {
        #[serde(default = "default_phi")]
        phi: f64,
    },
    /// User-supplied `(N - 1) x N` weight rows. At least one row must have
    /// all prefix sums non-negative so the aggregate stays non-negative on
    /// sorted non-negative inputs.
    CustomWrag { weights: Vec<Vec<f64>> },
}

impl AggregationSpec {
    /// Stable label used in tables and reports.
    pub fn label(&self) -> &'static str {
        match self {
            AggregationSpec::LInf => "l_inf",
            AggregationSpec::L1 => "l1",
            AggregationSpec::TopK { .. } => "top_k",
            AggregationSpec::DoubleCusum { .. } => "double_cusum",
            AggregationSpec::CustomWrag { .. } => "custom_wrag",
        }
    }

    /// The `k` parameter, for rules that have one.
    pub fn k_param(&self) -> Option<usize> {
        match self {
            AggregationSpec::TopK { k } => Some(*k),
            _ => None,
        }
    }

    /// Checks the rule's parameters against the dimension count.
    pub fn validate(&self, n_dims: usize) -> Result<()> {
        match self {
            AggregationSpec::LInf | AggregationSpec::L1 => Ok(()),
            AggregationSpec::TopK { k } => {
                if *k < 1 || *k > n_dims {
                    Err(Error::InvalidArgument(format!(
                        "top-k needs 1 <= k <= {n_dims}, got {k}"
                    )))
                } else {
                    Ok(())
                }
            }
            AggregationSpec::DoubleCusum { phi } => {
                if n_dims < 2 {
                    return Err(Error::InvalidArgument(
                        "double CUSUM needs at least 2 dimensions".into(),
                    ));
                }
                if !phi.is_finite() || *phi <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "double CUSUM exponent must be positive, got {phi}"
                    )));
                }
                Ok(())
            }
            AggregationSpec::CustomWrag { weights } => validate_custom_weights(weights, n_dims),
        }
    }
}

fn validate_custom_weights(weights: &[Vec<f64>], n_dims: usize) -> Result<()> {
    if n_dims < 2 {
        return Err(Error::InvalidArgument(
            "custom weights need at least 2 dimensions".into(),
        ));
    }
    if weights.len() != n_dims - 1 {
        return Err(Error::InvalidArgument(format!(
            "custom weights must have {} rows, got {}",
            n_dims - 1,
            weights.len()
        )));
    }
    if weights.iter().any(|r| r.len() != n_dims) {
        return Err(Error::InvalidArgument(format!(
            "custom weight rows must have {n_dims} entries"
        )));
    }
    if weights.iter().flatten().any(|w| !w.is_finite()) {
        return Err(Error::InvalidArgument(
            "custom weights must be finite".into(),
        ));
    }
    // max_k sum_j c_{k,j} rho_j >= 0 for every sorted non-negative rho if and
    // only if some row has all prefix sums non-negative (Abel summation over
    // the extremal directions rho = (1,...,1,0,...,0)).
    let has_witness = weights.iter().any(|row| {
        let scale = row.iter().fold(1.0f64, |m, w| m.max(w.abs()));
        let mut prefix = 0.0;
        row.iter().all(|w| {
            prefix += w;
            prefix >= -1e-12 * scale
        })
    });
    if !has_witness {
        return Err(Error::InvalidArgument(
            "custom weights must keep the aggregate non-negative on sorted non-negative \
             inputs: at least one row needs all prefix sums non-negative"
                .into(),
        ));
    }
    Ok(())
}

/// Builds the weight matrix `c_{k,j}` for a rule at dimension count `n_dims`.
/// Fixed-weight rules produce a single row; the double CUSUM and custom rules
/// produce `N - 1` rows indexed by the rank cutoff `k`.
pub fn wrag_weights(spec: &AggregationSpec, n_dims: usize) -> Result<DMatrix<f64>> {
    if n_dims == 0 {
        return Err(Error::InvalidArgument(
            "dimension count must be positive".into(),
        ));
    }
    spec.validate(n_dims)?;
    let m = match spec {
        AggregationSpec::LInf => DMatrix::from_fn(1, n_dims, |_, j| if j == 0 { 1.0 } else { 0.0 }),
        AggregationSpec::L1 => DMatrix::from_element(1, n_dims, 1.0),
        AggregationSpec::TopK { k } => {
            DMatrix::from_fn(1, n_dims, |_, j| if j < *k { 1.0 } else { 0.0 })
        }
        AggregationSpec::DoubleCusum { phi } => {
            let nf = n_dims as f64;
            DMatrix::from_fn(n_dims - 1, n_dims, |k0, j| {
                let kf = (k0 + 1) as f64;
                let gamma = kf * (2.0 * nf - kf) / (2.0 * nf);
                let amp = gamma.powf(*phi);
                if j <= k0 {
                    amp / kf
                } else {
                    -amp / (2.0 * nf - kf)
                }
            })
        }
        AggregationSpec::CustomWrag { weights } => {
            let flat: Vec<f64> = weights.iter().flatten().copied().collect();
            DMatrix::from_row_slice(n_dims - 1, n_dims, &flat)
        }
    };
    Ok(m)
}

/// The sorted-absolute-score matrix: column `j` is `rho(t)` for `t = j + 1`.
fn rho_matrix(profile: &CusumProfile) -> DMatrix<f64> {
    let n = profile.n_dims();
    DMatrix::from_fn(n, profile.n_candidates(), |l, j| {
        profile.scores()[(profile.ranks()[j][l], j)].abs()
    })
}

pub(crate) fn aggregate_with(weights: &DMatrix<f64>, profile: &CusumProfile) -> DMatrix<f64> {
    weights * rho_matrix(profile)
}

/// Aggregate scores `theta_k(t)`: entry `(k, j)` is the weighted rank
/// aggregation of row `k` at candidate time `t = j + 1`.
pub fn aggregate(profile: &CusumProfile, spec: &AggregationSpec) -> Result<DMatrix<f64>> {
    let weights = wrag_weights(spec, profile.n_dims())?;
    Ok(aggregate_with(&weights, profile))
}

/// Everything detection selected: the argmax cell, the statistic, and the
/// contrast vectors that express it as a linear functional of the data.
#[derive(Debug, Clone)]
pub struct DetectionResult {
    t_hat: usize,
    k_hat: usize,
    theta: f64,
    delta: DVector<f64>,
    eta: CusumContrast,
    profile: CusumProfile,
    weights: DMatrix<f64>,
    spec: AggregationSpec,
    degenerate: bool,
}

impl DetectionResult {
    /// Detected change time, 1-based.
    pub fn t_hat(&self) -> usize {
        self.t_hat
    }

    /// Selected weight row (rank cutoff), 1-based. Always 1 for fixed-weight
    /// rules.
    pub fn k_hat(&self) -> usize {
        self.k_hat
    }

    /// The statistic `theta = delta' Y eta`, the maximal aggregate score.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// The dimension contrast: `delta_i` is the selected weight of dimension
    /// `i` times the observed sign of its score at `t_hat`.
    pub fn delta(&self) -> &DVector<f64> {
        &self.delta
    }

    /// The time contrast `eta_{t_hat}`, length `T`.
    pub fn eta(&self) -> &DVector<f64> {
        self.eta.eta()
    }

    pub fn contrast(&self) -> &CusumContrast {
        &self.eta
    }

    pub fn profile(&self) -> &CusumProfile {
        &self.profile
    }

    /// The weight matrix of the rule, one row per candidate cutoff.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn spec(&self) -> &AggregationSpec {
        &self.spec
    }

    /// True when the statistic is numerically zero (all scores vanish), in
    /// which case the tie-break argmax was returned and callers should not
    /// read significance into the result.
    pub fn degenerate(&self) -> bool {
        self.degenerate
    }

    /// Dimensions with positive selected weight, in rank order at `t_hat`.
    pub fn selected_dimensions(&self) -> Vec<usize> {
        let col = self.t_hat - 1;
        (0..self.profile.n_dims())
            .filter(|&l| self.weights[(self.k_hat - 1, l)] > 0.0)
            .map(|l| self.profile.ranks()[col][l])
            .collect()
    }
}

/// Detects a single change point: maximizes the aggregate score over all
/// `(t, k)`, ties broken toward smaller `t` then smaller `k`. All-zero data
/// still returns the tie-break argmax, flagged degenerate.
pub fn detect_single(y: &SequenceMatrix, spec: &AggregationSpec) -> Result<DetectionResult> {
    let n = y.n_dims();
    let weights = wrag_weights(spec, n)?;
    let profile = cusum_profile(y);
    let agg = aggregate_with(&weights, &profile);

    let mut best = (0usize, 0usize, f64::NEG_INFINITY);
    for j in 0..agg.ncols() {
        for k0 in 0..agg.nrows() {
            let v = agg[(k0, j)];
            if v > best.2 {
                best = (j, k0, v);
            }
        }
    }
    let (j, k0, theta_agg) = best;
    let t_hat = j + 1;
    let k_hat = k0 + 1;

    let mut delta = DVector::zeros(n);
    for l in 0..n {
        let dim = profile.ranks()[j][l];
        delta[dim] = weights[(k0, l)] * profile.signs()[(dim, j)];
    }
    let eta = cusum_contrast(t_hat, y.t_len())?;

    // The argmax aggregate and the linear statistic are the same number by
    // construction; a mismatch means the selection metadata is corrupt.
    let theta_linear = delta.dot(&(y.values() * eta.eta()));
    if (theta_agg - theta_linear).abs() > 1e-10 * theta_agg.abs().max(1.0) {
        return Err(Error::Numerical(format!(
            "aggregate maximum {theta_agg} and contrast statistic {theta_linear} disagree"
        )));
    }

    let theta = theta_agg.max(0.0);
    let degenerate = theta <= 1e-12 * y.max_abs().max(1.0);
    Ok(DetectionResult {
        t_hat,
        k_hat,
        theta,
        delta,
        eta,
        profile,
        weights,
        spec: spec.clone(),
        degenerate,
    })
}
