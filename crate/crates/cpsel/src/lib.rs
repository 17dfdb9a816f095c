//! Exact selective inference for change-point detection in
//! multi-dimensional Gaussian sequences.
//!
//! The pipeline: per-dimension CUSUM scores are aggregated across
//! dimensions by a weighted-rank rule, the aggregate argmax detects a
//! single change point, and the detection is then tested *conditionally on
//! having been selected*. Because the selection event is an affine
//! condition on the data, the test statistic is truncated normal on a
//! computable interval, and the resulting selective p-value is exact at
//! finite sample size, with no asymptotics.
//!
//! Module map:
//! - [`model`]: sequence and covariance types, CUSUM contrasts and profiles,
//!   AR(1)/Toeplitz covariance construction and estimation.
//! - [`aggregation`]: weighted-rank aggregation rules and single-change
//!   detection.
//! - [`selective`]: truncation intervals (closed forms and a generic
//!   polyhedral routine), selective and naive p-values, power diagnostics.
//! - [`multi_cp`]: sliding-window localization of multiple change points
//!   with per-window selective tests.
//! - [`simulation`]: Kronecker Gaussian sampling and Monte Carlo harnesses
//!   (false-positive-rate grids, p-value histograms).
//! - [`io`]: CSV matrix ingestion and emission.
//! - [`stats`]: scalar normal-distribution and Kolmogorov-Smirnov
//!   utilities.
//!
//! ```
//! use cpsel::{AggregationSpec, KroneckerCovariance, SequenceMatrix};
//!
//! let y = SequenceMatrix::from_rows(&[
//!     vec![0.2, -0.1, 0.3, 2.1, 1.8, 2.4],
//!     vec![0.0, 0.1, -0.2, 0.1, 0.0, -0.1],
//! ])?;
//! let cov = KroneckerCovariance::identity(2, 6)?;
//! let test = cpsel::run_selective_test(&y, &AggregationSpec::TopK { k: 1 }, &cov)?;
//! assert_eq!(test.t_hat(), 3);
//! assert!(test.p_selective() > 0.0 && test.p_selective() <= 1.0);
//! # Ok::<(), cpsel::Error>(())
//! ```

pub mod aggregation;
pub mod error;
pub mod io;
pub mod model;
pub mod multi_cp;
pub mod selective;
pub mod simulation;
pub mod stats;

/// The linear-algebra crate used in all public signatures.
pub use nalgebra;

pub use aggregation::{aggregate, detect_single, wrag_weights, AggregationSpec, DetectionResult};
pub use error::{Error, Result};
pub use model::{
    ar1_covariance, cusum_contrast, cusum_profile, estimate_time_covariance, CovarianceModel,
    CusumContrast, CusumProfile, KroneckerCovariance, SequenceMatrix,
};
pub use multi_cp::{local_estimates, multi_cp_report, test_local, MultiCpReport, WindowConfig};
pub use selective::{
    event_system, naive_p_value, polyhedral_truncation, power_estimate, run_selective_test,
    selective_p_value, test_from_detection, truncation_general_wrag, truncation_l1,
    truncation_linf, truncation_topk, PowerEstimate, SelectiveTest, TruncationInterval,
};
pub use simulation::{
    fpr_experiment, pvalue_histogram, pvalue_samples, sample_sequence, ExperimentGrid, FprTable,
    GridCell, PvalueHistogram, PvalueKind,
};
