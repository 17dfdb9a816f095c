use cpsel::nalgebra::DMatrix;
use cpsel::{
    ar1_covariance, estimate_time_covariance, CovarianceModel, Error, KroneckerCovariance,
    SequenceMatrix,
};

use crate::args::CovArgs;

/// Builds the Kronecker covariance from whichever source the flags select
/// and checks it against the input shape.
pub fn resolve(args: &CovArgs, n_dims: usize, t_len: usize) -> cpsel::Result<KroneckerCovariance> {
    let scalars = args.xi.is_some() || args.sigma.is_some();
    let files = args.xi_file.is_some() || args.sigma_file.is_some();
    let control = args.control_file.is_some();
    if usize::from(scalars) + usize::from(files) + usize::from(control) != 1 {
        return Err(Error::InvalidArgument(
            "exactly one covariance source is required: --xi with --sigma, \
             --xi-file with --sigma-file, or --control-file"
                .into(),
        ));
    }
    let (xi, sigma) = if scalars {
        match (args.xi, args.sigma) {
            (Some(x), Some(s)) => (ar1_covariance(x, t_len)?, ar1_covariance(s, n_dims)?),
            _ => {
                return Err(Error::InvalidArgument(
                    "--xi and --sigma must be given together".into(),
                ))
            }
        }
    } else if files {
        match (&args.xi_file, &args.sigma_file) {
            (Some(xp), Some(sp)) => (
                cpsel::io::read_matrix_file(xp)?,
                cpsel::io::read_matrix_file(sp)?,
            ),
            _ => {
                return Err(Error::InvalidArgument(
                    "--xi-file and --sigma-file must be given together".into(),
                ))
            }
        }
    } else {
        let path = args.control_file.as_ref().expect("source counted above");
        let data = cpsel::io::read_sequence_file(path)?;
        if data.n_dims() != n_dims {
            return Err(Error::InvalidArgument(format!(
                "control data has {} rows but the input has {n_dims} dimensions",
                data.n_dims()
            )));
        }
        let xi = estimate_time_covariance(&data, CovarianceModel::Ar1, t_len)?;
        // Dimension correlation comes from the same estimator with rows and
        // columns swapped; a single dimension has nothing to estimate.
        let sigma = if n_dims == 1 {
            DMatrix::identity(1, 1)
        } else {
            let flipped = SequenceMatrix::new(data.values().transpose())?;
            estimate_time_covariance(&flipped, CovarianceModel::Ar1, n_dims)?
        };
        (xi, sigma)
    };
    let cov = KroneckerCovariance::new(xi, sigma)?;
    cov.check_dims(n_dims, t_len)?;
    Ok(cov)
}
