//! Sliding-window localization of multiple change points.
//!
//! A time `t` is a local estimate when it is the aggregate-score argmax of
//! its own window. Each estimate is then tested on its window alone: data
//! columns and the time covariance are restricted to the window, contrasts
//! are rebuilt for the window length, and the single-change selective test
//! runs on that restricted problem, so the conditioning matches exactly the
//! event that produced the estimate.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::aggregation::{aggregate, AggregationSpec};
use crate::error::{Error, Result};
use crate::model::{cusum_profile, KroneckerCovariance, SequenceMatrix};
use crate::selective::{run_selective_test, SelectiveTest};

/// Window half-width and multiplicity handling for local tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WindowConfig {
    h: usize,
    bonferroni: bool,
}

impl WindowConfig {
    /// Half-width `h >= 2`; the window around `t` spans `[t-h+1, t+h]`.
    pub fn new(h: usize, bonferroni: bool) -> Result<Self> {
        if h < 2 {
            return Err(Error::InvalidArgument(format!(
                "window half-width must be at least 2, got {h}"
            )));
        }
        Ok(WindowConfig { h, bonferroni })
    }

    /// Default half-width for a length-`t_len` sequence: `round(ln T)`,
    /// floored at 2.
    pub fn default_for(t_len: usize) -> Result<Self> {
        let h = (t_len as f64).ln().round() as usize;
        Self::new(h.max(2), false)
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn bonferroni(&self) -> bool {
        self.bonferroni
    }

    fn check_len(&self, t_len: usize) -> Result<()> {
        if 2 * self.h > t_len {
            return Err(Error::InvalidArgument(format!(
                "window of half-width {} does not fit a length-{} sequence",
                self.h, t_len
            )));
        }
        Ok(())
    }
}

/// Times `t` in `[h, T-h]` that maximize the aggregate score over their own
/// open window `[t-h+1, t+h-1]`, computed on the full sequence. Ties go to
/// the smallest time in the window, so a tied center does not qualify.
pub fn local_estimates(
    y: &SequenceMatrix,
    spec: &AggregationSpec,
    cfg: &WindowConfig,
) -> Result<Vec<usize>> {
    cfg.check_len(y.t_len())?;
    let profile = cusum_profile(y);
    let agg = aggregate(&profile, spec)?;
    let score: Vec<f64> = (0..agg.ncols())
        .map(|j| {
            agg.column(j)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();

    let h = cfg.h();
    let mut estimates = Vec::new();
    for t in h..=y.t_len() - h {
        let lo = t - h + 1;
        let hi = t + h - 1;
        let mut best = lo;
        for u in lo + 1..=hi {
            if score[u - 1] > score[best - 1] {
                best = u;
            }
        }
        if best == t {
            estimates.push(t);
        }
    }
    Ok(estimates)
}

fn window_test(
    y: &SequenceMatrix,
    spec: &AggregationSpec,
    cov: &KroneckerCovariance,
    t: usize,
    h: usize,
) -> Result<SelectiveTest> {
    let first = t - h;
    let width = 2 * h;
    let y_w = SequenceMatrix::new(y.values().columns(first, width).into_owned())?;
    let xi_w = DMatrix::from_fn(width, width, |a, b| cov.xi()[(first + a, first + b)]);
    let cov_w = KroneckerCovariance::new(xi_w, cov.sigma().clone())?;
    run_selective_test(&y_w, spec, &cov_w)
}

/// Selective test of one local estimate on its window `[t-h+1, t+h]`.
///
/// `t` must come from [`local_estimates`] under the same configuration.
/// With `bonferroni` set, the selective p-value is multiplied by the number
/// of local estimates and clamped to 1.
pub fn test_local(
    y: &SequenceMatrix,
    spec: &AggregationSpec,
    cov: &KroneckerCovariance,
    t: usize,
    cfg: &WindowConfig,
) -> Result<SelectiveTest> {
    cov.check_dims(y.n_dims(), y.t_len())?;
    let estimates = local_estimates(y, spec, cfg)?;
    if !estimates.contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "time {t} is not a window-local estimate"
        )));
    }
    let test = window_test(y, spec, cov, t, cfg.h())?;
    if cfg.bonferroni() {
        Ok(test.bonferroni_adjusted(estimates.len()))
    } else {
        Ok(test)
    }
}

/// One row of a multi-change report: a local estimate and its window test.
#[derive(Debug, Clone, Serialize)]
pub struct LocalEstimate {
    /// Estimated change time on the full sequence, 1-based.
    pub t: usize,
    /// Weight row selected by the window-local detection.
    pub k_hat: usize,
    /// Window-local statistic.
    pub theta: f64,
    pub p_selective: f64,
    pub p_naive: f64,
    pub low_precision: bool,
    /// Dimensions the window-local detection put positive weight on.
    pub selected_dimensions: Vec<usize>,
}

/// All local estimates of a sequence with their window tests, sorted by
/// strictly increasing time.
#[derive(Debug, Clone, Serialize)]
pub struct MultiCpReport {
    estimates: Vec<LocalEstimate>,
    window: WindowConfig,
}

impl MultiCpReport {
    pub fn estimates(&self) -> &[LocalEstimate] {
        &self.estimates
    }

    pub fn window(&self) -> &WindowConfig {
        &self.window
    }
}

/// Runs the full pipeline: locate window-local estimates, test each on its
/// window, and collect the rows.
pub fn multi_cp_report(
    y: &SequenceMatrix,
    spec: &AggregationSpec,
    cov: &KroneckerCovariance,
    cfg: &WindowConfig,
) -> Result<MultiCpReport> {
    cov.check_dims(y.n_dims(), y.t_len())?;
    let times = local_estimates(y, spec, cfg)?;
    let m = times.len();
    let mut estimates = Vec::with_capacity(m);
    for &t in &times {
        let mut test = window_test(y, spec, cov, t, cfg.h())?;
        if cfg.bonferroni() {
            test = test.bonferroni_adjusted(m);
        }
        estimates.push(LocalEstimate {
            t,
            k_hat: test.k_hat(),
            theta: test.detection().theta(),
            p_selective: test.p_selective(),
            p_naive: test.p_naive(),
            low_precision: test.low_precision(),
            selected_dimensions: test.detection().selected_dimensions(),
        });
    }
    Ok(MultiCpReport {
        estimates,
        window: *cfg,
    })
}
