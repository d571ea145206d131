pub mod convert;
pub mod estimate;
pub mod gradcheck;
pub mod sweep;
pub mod train;

pub use convert::{cmd_convert, ConvertArgs};
pub use estimate::{cmd_estimate, EstimateArgs};
pub use gradcheck::{cmd_gradcheck, GradcheckArgs};
pub use sweep::{cmd_sweep, SweepArgs};
pub use train::{cmd_train, TrainArgs};

use crate::{CliError, CliResult};

/// Parse a comma-separated list of positive integers (`"20,10,5"`).
pub fn parse_usize_list(s: &str, flag: &str) -> CliResult<Vec<usize>> {
    let mut out = Vec::new();
    for piece in s.split(',') {
        let v: usize = piece
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("bad {flag} entry '{piece}'")))?;
        if v == 0 {
            return Err(CliError::Usage(format!("{flag} entries must be >= 1")));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("{flag} list is empty")));
    }
    Ok(out)
}
