//! Gaussian sequence model: observation matrices, CUSUM contrasts and
//! profiles, and Kronecker covariance construction and estimation.
//!
//! The observation is an `N x T` matrix `Y` (rows = dimensions, columns =
//! time points) with `cov(vec(Y)) = Xi (x) Sigma`, where `Xi` is the `T x T`
//! time covariance and `Sigma` the `N x N` dimension covariance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance for symmetry validation of covariance factors.
const SYMMETRY_RTOL: f64 = 1e-10;

/// An `N x T` observation matrix: rows are dimensions, columns time points.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMatrix {
    values: DMatrix<f64>,
}

impl SequenceMatrix {
    /// Validates shape (`N >= 1`, `T >= 2`) and finiteness.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::InvalidInput(
                "sequence needs at least one dimension (row)".into(),
            ));
        }
        if values.ncols() < 2 {
            return Err(Error::InvalidInput(
                "sequence needs at least two time points (columns)".into(),
            ));
        }
        if let Some((i, j)) = (0..values.nrows())
            .flat_map(|i| (0..values.ncols()).map(move |j| (i, j)))
            .find(|&(i, j)| !values[(i, j)].is_finite())
        {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at row {i}, column {j}"
            )));
        }
        Ok(Self { values })
    }

    /// Builds from per-dimension rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidInput("no rows supplied".into()));
        }
        let t_len = rows[0].len();
        if rows.iter().any(|r| r.len() != t_len) {
            return Err(Error::InvalidInput("rows have unequal lengths".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(rows.len(), t_len, &flat))
    }

    pub fn n_dims(&self) -> usize {
        self.values.nrows()
    }

    pub fn t_len(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Largest absolute entry; the scale used by degeneracy thresholds.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// The pair `(Xi, Sigma)` defining `cov(vec(Y)) = Xi (x) Sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct KroneckerCovariance {
    xi: DMatrix<f64>,
    sigma: DMatrix<f64>,
}

impl KroneckerCovariance {
    /// Validates both factors: square, symmetric within a relative tolerance
    /// of 1e-10, and positive definite (Cholesky succeeds).
    pub fn new(xi: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        validate_spd(&xi, "time covariance")?;
        validate_spd(&sigma, "dimension covariance")?;
        Ok(Self { xi, sigma })
    }

    /// Identity factors: i.i.d. standard Gaussian entries.
    pub fn identity(n_dims: usize, t_len: usize) -> Result<Self> {
        Self::new(
            DMatrix::identity(t_len, t_len),
            DMatrix::identity(n_dims, n_dims),
        )
    }

    /// The `T x T` time covariance.
    pub fn xi(&self) -> &DMatrix<f64> {
        &self.xi
    }

    /// The `N x N` dimension covariance.
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn t_len(&self) -> usize {
        self.xi.nrows()
    }

    pub fn n_dims(&self) -> usize {
        self.sigma.nrows()
    }

    /// Errors unless the factors match an `n_dims x t_len` data matrix.
    pub fn check_dims(&self, n_dims: usize, t_len: usize) -> Result<()> {
        if self.n_dims() != n_dims || self.t_len() != t_len {
            return Err(Error::InvalidArgument(format!(
                "covariance factors are for {} x {} data, got {} x {}",
                self.n_dims(),
                self.t_len(),
                n_dims,
                t_len
            )));
        }
        Ok(())
    }
}

fn validate_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(Error::InvalidInput(format!(
            "{what} must be square and non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "{what} has non-finite entries"
        )));
    }
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let a = m[(i, j)];
            let b = m[(j, i)];
            if (a - b).abs() > SYMMETRY_RTOL * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "{what} is not symmetric at ({i},{j}): {a} vs {b}"
                )));
            }
        }
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::InvalidInput(format!(
            "{what} is not positive definite"
        )));
    }
    Ok(())
}

/// The contrast vector for a change at time `t`: `Y * eta_t` is the vector of
/// per-dimension CUSUM scores
/// `S_i(t) = sqrt(t (T - t) / T) * (mean(y_i, 1..=t) - mean(y_i, t+1..=T))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CusumContrast {
    t: usize,
    eta: DVector<f64>,
}

impl CusumContrast {
    /// Candidate change time, 1-based: the change sits between columns `t`
    /// and `t + 1`.
    pub fn t(&self) -> usize {
        self.t
    }

    /// The length-`T` contrast; entries sum to 0 and the Euclidean norm is 1.
    pub fn eta(&self) -> &DVector<f64> {
        &self.eta
    }
}

/// Builds the CUSUM contrast `eta_t` for sequence length `t_len`.
pub fn cusum_contrast(t: usize, t_len: usize) -> Result<CusumContrast> {
    if t_len < 2 {
        return Err(Error::InvalidArgument(format!(
            "sequence length must be at least 2, got {t_len}"
        )));
    }
    if t < 1 || t > t_len - 1 {
        return Err(Error::InvalidArgument(format!(
            "change time must lie in [1, {}], got {t}",
            t_len - 1
        )));
    }
    let tf = t as f64;
    let total = t_len as f64;
    let scale = (tf * (total - tf) / total).sqrt();
    let pre = scale / tf;
    let post = -scale / (total - tf);
    let eta = DVector::from_fn(t_len, |u, _| if u < t { pre } else { post });
    Ok(CusumContrast { t, eta })
}

/// Per-dimension CUSUM scores of one series, for every candidate time:
/// output entry `t - 1` holds `S(t)`, `t` in `[1, len - 1]`.
pub fn cusum_scores(series: &[f64]) -> Vec<f64> {
    let t_len = series.len();
    debug_assert!(t_len >= 2);
    let total: f64 = series.iter().sum();
    let total_f = t_len as f64;
    let mut prefix = 0.0;
    let mut out = Vec::with_capacity(t_len - 1);
    for t in 1..t_len {
        prefix += series[t - 1];
        let tf = t as f64;
        let scale = (tf * (total_f - tf) / total_f).sqrt();
        out.push(scale * (prefix / tf - (total - prefix) / (total_f - tf)));
    }
    out
}

/// The full multivariate CUSUM record: raw scores, their signs, and the
/// per-time permutation sorting absolute scores in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct CusumProfile {
    scores: DMatrix<f64>,
    signs: DMatrix<f64>,
    ranks: Vec<Vec<usize>>,
}

impl CusumProfile {
    /// Raw scores, `N x (T - 1)`; column `j` is `S(t)` for `t = j + 1`.
    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    /// Signs of the scores (`+1`/`-1`, with `sgn(0) = +1`), same shape.
    pub fn signs(&self) -> &DMatrix<f64> {
        &self.signs
    }

    /// Per-column rank permutations: `ranks()[j][l]` is the dimension with
    /// the `l`-th largest absolute score at column `j` (ties to the smaller
    /// dimension index).
    pub fn ranks(&self) -> &[Vec<usize>] {
        &self.ranks
    }

    pub fn n_dims(&self) -> usize {
        self.scores.nrows()
    }

    /// Number of candidate change times, `T - 1`.
    pub fn n_candidates(&self) -> usize {
        self.scores.ncols()
    }

    /// Sorted absolute score column `rho` at column `j` (descending,
    /// non-negative).
    pub fn sorted_abs(&self, col: usize) -> DVector<f64> {
        DVector::from_fn(self.n_dims(), |l, _| {
            self.scores[(self.ranks[col][l], col)].abs()
        })
    }
}

/// Computes the CUSUM profile of a sequence: scores for every candidate time,
/// their signs, and the descending-absolute-value rank permutations.
pub fn cusum_profile(y: &SequenceMatrix) -> CusumProfile {
    let n = y.n_dims();
    let t_len = y.t_len();
    let mut scores = DMatrix::zeros(n, t_len - 1);
    for i in 0..n {
        let row: Vec<f64> = (0..t_len).map(|u| y.values()[(i, u)]).collect();
        for (j, s) in cusum_scores(&row).into_iter().enumerate() {
            scores[(i, j)] = s;
        }
    }
    let signs = scores.map(|s| if s < 0.0 { -1.0 } else { 1.0 });
    let ranks = (0..t_len - 1)
        .map(|j| {
            let mut order: Vec<usize> = (0..n).collect();
            // Stable sort: ties keep the smaller dimension index first.
            order.sort_by(|&a, &b| {
                scores[(b, j)]
                    .abs()
                    .partial_cmp(&scores[(a, j)].abs())
                    .expect("finite scores")
            });
            order
        })
        .collect();
    CusumProfile {
        scores,
        signs,
        ranks,
    }
}

/// AR(1) correlation matrix: entry `(i, j) = rho^|i - j|`.
pub fn ar1_covariance(rho: f64, size: usize) -> Result<DMatrix<f64>> {
    if !rho.is_finite() || rho.abs() >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "AR(1) parameter must satisfy |rho| < 1, got {rho}"
        )));
    }
    if size == 0 {
        return Err(Error::InvalidArgument(
            "matrix size must be positive".into(),
        ));
    }
    Ok(DMatrix::from_fn(size, size, |i, j| {
        rho.powi((i as i32 - j as i32).abs())
    }))
}

/// Stationary covariance model fitted from control data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceModel {
    /// One-parameter AR(1) fit: averaged lag-1 autocorrelation.
    Ar1,
    /// Tapered Toeplitz fit: averaged lag-k autocovariances, lags beyond
    /// `target_len / 4` zeroed, diagonal jitter until positive definite.
    Toeplitz,
}

/// Estimates a `target_len x target_len` time covariance from control data
/// whose rows are independent replicates of the same stationary series.
/// Numerically constant rows carry no correlation information and are
/// excluded.
pub fn estimate_time_covariance(
    control: &SequenceMatrix,
    model: CovarianceModel,
    target_len: usize,
) -> Result<DMatrix<f64>> {
    if control.n_dims() < 2 {
        return Err(Error::InsufficientData(
            "covariance estimation needs at least 2 control rows".into(),
        ));
    }
    if target_len == 0 {
        return Err(Error::InvalidArgument(
            "target length must be positive".into(),
        ));
    }
    let centered = centered_rows(control);
    if centered.is_empty() {
        return Err(Error::InsufficientData(
            "all control rows are constant; autocorrelation is undefined".into(),
        ));
    }
    match model {
        CovarianceModel::Ar1 => {
            let mut sum = 0.0;
            for row in &centered {
                let var: f64 = row.iter().map(|x| x * x).sum();
                let lag1: f64 = row.windows(2).map(|w| w[0] * w[1]).sum();
                sum += lag1 / var;
            }
            let rho = (sum / centered.len() as f64).clamp(-0.99, 0.99);
            ar1_covariance(rho, target_len)
        }
        CovarianceModel::Toeplitz => {
            let t_c = control.t_len();
            let max_lag = (target_len / 4).min(t_c - 1);
            // Biased autocovariance averaged across rows, normalized to lag 0.
            let mut acov = vec![0.0f64; max_lag + 1];
            for row in &centered {
                for (k, a) in acov.iter_mut().enumerate() {
                    let s: f64 = (0..t_c - k).map(|u| row[u] * row[u + k]).sum();
                    *a += s / t_c as f64;
                }
            }
            let c0 = acov[0];
            let mut gamma = vec![0.0f64; target_len];
            gamma[0] = 1.0;
            for k in 1..=max_lag.min(target_len - 1) {
                gamma[k] = acov[k] / c0;
            }
            let mut m = DMatrix::from_fn(target_len, target_len, |i, j| {
                gamma[(i as i64 - j as i64).unsigned_abs() as usize]
            });
            // Diagonal jitter until Cholesky succeeds; the taper can leave the
            // raw Toeplitz estimate indefinite.
            let mut eps = 1e-10;
            while m.clone().cholesky().is_none() {
                if eps > 1.0 {
                    return Err(Error::Numerical(
                        "tapered Toeplitz estimate could not be made positive definite".into(),
                    ));
                }
                for i in 0..target_len {
                    m[(i, i)] += eps;
                }
                eps *= 10.0;
            }
            Ok(m)
        }
    }
}

/// Rows centered at their means, with numerically constant rows dropped.
fn centered_rows(control: &SequenceMatrix) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..control.n_dims() {
        let row: Vec<f64> = (0..control.t_len())
            .map(|u| control.values()[(i, u)])
            .collect();
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let centered: Vec<f64> = row.iter().map(|x| x - mean).collect();
        let spread = centered.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if spread > 1e-12 * mean.abs().max(1.0) {
            out.push(centered);
        }
    }
    out
}
