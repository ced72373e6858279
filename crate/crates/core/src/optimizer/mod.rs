//! Schedule optimization against the layered rate-distortion loss.

mod file;
mod loss;
mod search;

pub use file::FitSettings;
pub use loss::{distortion_term, rate_term, total_loss, Corpus, LossConfig, LossReport, RateModel};
pub use search::{optimize_schedule, trit_baseline, FitResult, OptimizerConfig, TRIT_GRID};
