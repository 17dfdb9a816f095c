//! Synthetic sequences under the Kronecker Gaussian model and the Monte
//! Carlo harnesses built on them: false-positive-rate grids over AR(1)
//! correlation settings and null p-value histograms.
//!
//! Determinism contract: every replicate draws from its own counter-based
//! substream keyed by (seed, cell index, replicate index), so results are
//! bit-identical for a given grid and seed regardless of thread count.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationSpec;
use crate::error::{Error, Result};
use crate::model::{ar1_covariance, KroneckerCovariance, SequenceMatrix};
use crate::selective::run_selective_test;
use crate::stats::{ks_pvalue, ks_statistic, substream_seed};

fn default_replicates() -> usize {
    1000
}

fn default_alpha() -> f64 {
    0.05
}

/// A full factorial experiment: AR(1) time correlations x AR(1) dimension
/// correlations x aggregation rules, on null data of a fixed shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    pub n_dims: usize,
    pub t_len: usize,
    /// AR(1) parameters for the time covariance, each in [0, 1).
    pub xi_values: Vec<f64>,
    /// AR(1) parameters for the dimension covariance, each in [0, 1).
    pub sigma_values: Vec<f64>,
    pub specs: Vec<AggregationSpec>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.n_dims < 1 || self.t_len < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid shape must be at least 1 x 2, got {} x {}",
                self.n_dims, self.t_len
            )));
        }
        if self.replicates < 1 {
            return Err(Error::InvalidArgument(
                "replicate count must be at least 1".into(),
            ));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 || self.alpha >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "significance level must lie strictly between 0 and 1, got {}",
                self.alpha
            )));
        }
        if self.xi_values.is_empty() || self.sigma_values.is_empty() || self.specs.is_empty() {
            return Err(Error::InvalidArgument("grid axes must be non-empty".into()));
        }
        for &rho in self.xi_values.iter().chain(&self.sigma_values) {
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::InvalidArgument(format!(
                    "AR(1) parameters must lie in [0, 1), got {rho}"
                )));
            }
        }
        for spec in &self.specs {
            spec.validate(self.n_dims)?;
        }
        Ok(())
    }
}

/// One cell of a grid, addressed by value: a single covariance setting and
/// aggregation rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    pub n_dims: usize,
    pub t_len: usize,
    pub xi: f64,
    pub sigma: f64,
    pub spec: AggregationSpec,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
}

impl GridCell {
    pub fn covariance(&self) -> Result<KroneckerCovariance> {
        KroneckerCovariance::new(
            ar1_covariance(self.xi, self.t_len)?,
            ar1_covariance(self.sigma, self.n_dims)?,
        )
    }
}

/// Precomputed Cholesky factors for repeated sampling from one covariance.
struct KroneckerSampler {
    chol_sigma: DMatrix<f64>,
    chol_xi_t: DMatrix<f64>,
}

impl KroneckerSampler {
    fn new(cov: &KroneckerCovariance) -> Result<Self> {
        let factor = |m: &DMatrix<f64>| {
            m.clone().cholesky().map(|c| c.l()).ok_or_else(|| {
                Error::Numerical("covariance factor lost positive definiteness".into())
            })
        };
        Ok(KroneckerSampler {
            chol_sigma: factor(cov.sigma())?,
            chol_xi_t: factor(cov.xi())?.transpose(),
        })
    }

    /// Draws `mean + A Z B'` with `Z` i.i.d. standard normal, so the
    /// vectorized sample has covariance exactly `Xi (x) Sigma`. Entries of
    /// `Z` are drawn column-major; the draw order is part of the
    /// determinism contract.
    fn sample<R: Rng + ?Sized>(&self, mean: &DMatrix<f64>, rng: &mut R) -> Result<SequenceMatrix> {
        let n = self.chol_sigma.nrows();
        let t = self.chol_xi_t.nrows();
        let mut z = DMatrix::zeros(n, t);
        for col in 0..t {
            for row in 0..n {
                z[(row, col)] = rng.sample(StandardNormal);
            }
        }
        SequenceMatrix::new(mean + &self.chol_sigma * z * &self.chol_xi_t)
    }
}

/// One draw of `vec(Y) ~ N(vec(mean), Xi (x) Sigma)`.
pub fn sample_sequence<R: Rng + ?Sized>(
    mean: &DMatrix<f64>,
    cov: &KroneckerCovariance,
    rng: &mut R,
) -> Result<SequenceMatrix> {
    cov.check_dims(mean.nrows(), mean.ncols())?;
    KroneckerSampler::new(cov)?.sample(mean, rng)
}

/// One row of a false-positive-rate table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FprRow {
    pub xi: f64,
    pub sigma: f64,
    /// Aggregation rule label.
    pub spec: String,
    /// Rank-count parameter for rules that have one.
    pub k: Option<usize>,
    pub fpr_selective: f64,
    pub fpr_naive: f64,
    /// Binomial Monte Carlo standard error of `fpr_selective`.
    pub stderr: f64,
    pub replicates: usize,
}

/// Rejection frequencies on null data, one row per grid cell, in grid
/// iteration order (time correlation outermost, rule innermost).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FprTable {
    rows: Vec<FprRow>,
}

impl FprTable {
    pub fn rows(&self) -> &[FprRow] {
        &self.rows
    }

    /// Writes the table with the fixed column order
    /// `xi,sigma,spec,k,fpr_selective,fpr_naive,stderr,replicates`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "xi",
            "sigma",
            "spec",
            "k",
            "fpr_selective",
            "fpr_naive",
            "stderr",
            "replicates",
        ])?;
        for r in &self.rows {
            w.write_record([
                format!("{}", r.xi),
                format!("{}", r.sigma),
                r.spec.clone(),
                r.k.map_or_else(String::new, |k| k.to_string()),
                format!("{}", r.fpr_selective),
                format!("{}", r.fpr_naive),
                format!("{}", r.stderr),
                r.replicates.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the grid on null data: for every cell, `replicates` sequences are
/// drawn with zero mean and the cell's exact covariance, tested, and the
/// rejection frequencies of both p-values recorded at the grid's level.
pub fn fpr_experiment(grid: &ExperimentGrid) -> Result<FprTable> {
    grid.validate()?;
    let mean = DMatrix::zeros(grid.n_dims, grid.t_len);
    let mut rows = Vec::new();
    for (xi_idx, &xi) in grid.xi_values.iter().enumerate() {
        let xi_m = ar1_covariance(xi, grid.t_len)?;
        for (sigma_idx, &sigma) in grid.sigma_values.iter().enumerate() {
            let cov = KroneckerCovariance::new(xi_m.clone(), ar1_covariance(sigma, grid.n_dims)?)?;
            let sampler = KroneckerSampler::new(&cov)?;
            for (spec_idx, spec) in grid.specs.iter().enumerate() {
                let cell = ((xi_idx * grid.sigma_values.len() + sigma_idx) * grid.specs.len()
                    + spec_idx) as u64;
                let (hits_sel, hits_naive) = (0..grid.replicates)
                    .into_par_iter()
                    .map(|rep| -> Result<(u64, u64)> {
                        let mut rng =
                            ChaCha8Rng::seed_from_u64(substream_seed(grid.seed, cell, rep as u64));
                        let y = sampler.sample(&mean, &mut rng)?;
                        let test = run_selective_test(&y, spec, &cov)?;
                        Ok((
                            u64::from(test.p_selective() <= grid.alpha),
                            u64::from(test.p_naive() <= grid.alpha),
                        ))
                    })
                    .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
                let reps = grid.replicates as f64;
                let fpr_selective = hits_sel as f64 / reps;
                rows.push(FprRow {
                    xi,
                    sigma,
                    spec: spec.label().to_string(),
                    k: spec.k_param(),
                    fpr_selective,
                    fpr_naive: hits_naive as f64 / reps,
                    stderr: (fpr_selective * (1.0 - fpr_selective) / reps).sqrt(),
                    replicates: grid.replicates,
                });
            }
        }
    }
    Ok(FprTable { rows })
}

/// Draws `replicates` null sequences for one cell and returns
/// `(p_selective, p_naive)` per replicate, in replicate order.
pub fn pvalue_samples(cell: &GridCell) -> Result<Vec<(f64, f64)>> {
    cell.spec.validate(cell.n_dims)?;
    let cov = cell.covariance()?;
    let sampler = KroneckerSampler::new(&cov)?;
    let mean = DMatrix::zeros(cell.n_dims, cell.t_len);
    (0..cell.replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(cell.seed, 0, rep as u64));
            let y = sampler.sample(&mean, &mut rng)?;
            let test = run_selective_test(&y, &cell.spec, &cov)?;
            Ok((test.p_selective(), test.p_naive()))
        })
        .collect()
}

/// Which p-value stream a histogram summarizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PvalueKind {
    Selective,
    Naive,
}

/// Equal-width histogram of null p-values on [0, 1] with a one-sample
/// Kolmogorov-Smirnov uniformity check.
#[derive(Debug, Clone, Serialize)]
pub struct PvalueHistogram {
    bins: usize,
    counts: Vec<u64>,
    ks_statistic: f64,
    ks_p_value: f64,
    replicates: usize,
}

impl PvalueHistogram {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn ks_statistic(&self) -> f64 {
        self.ks_statistic
    }

    pub fn ks_p_value(&self) -> f64 {
        self.ks_p_value
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    /// Bin edges as `(left, right)` pairs in bin order.
    pub fn edges(&self) -> Vec<(f64, f64)> {
        (0..self.bins)
            .map(|i| {
                (
                    i as f64 / self.bins as f64,
                    (i + 1) as f64 / self.bins as f64,
                )
            })
            .collect()
    }
}

/// Histogram from already-computed p-values.
pub fn histogram_from_pvalues(p_values: &[f64], bins: usize) -> Result<PvalueHistogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bin count must be positive".into()));
    }
    let d = ks_statistic(p_values)?;
    let ks_p = ks_pvalue(d, p_values.len());
    let mut counts = vec![0u64; bins];
    for &p in p_values {
        let idx = ((p * bins as f64).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(PvalueHistogram {
        bins,
        counts,
        ks_statistic: d,
        ks_p_value: ks_p,
        replicates: p_values.len(),
    })
}

/// Null p-value histogram for one grid cell. Requires at least 50
/// replicates so the asymptotic Kolmogorov-Smirnov p-value is meaningful.
pub fn pvalue_histogram(cell: &GridCell, bins: usize, kind: PvalueKind) -> Result<PvalueHistogram> {
    if cell.replicates < 50 {
        return Err(Error::InvalidArgument(format!(
            "p-value histograms need at least 50 replicates, got {}",
            cell.replicates
        )));
    }
    let samples = pvalue_samples(cell)?;
    let picked: Vec<f64> = match kind {
        PvalueKind::Selective => samples.iter().map(|s| s.0).collect(),
        PvalueKind::Naive => samples.iter().map(|s| s.1).collect(),
    };
    histogram_from_pvalues(&picked, bins)
}
