//! Progressive latent codec built on learned hierarchical quantization.
//!
//! A latent `y` with per-component Gaussian parameters `(mu, sigma)` is
//! centred, then refined layer by layer: every layer splits each selected
//! component's current interval into sub-intervals of a learned per-channel
//! step, and the index of the sub-interval holding the value is range coded
//! with its conditional Gaussian probability. Layers are stored as separate
//! segments in component order of decreasing sigma, so any byte prefix of a
//! container decodes to a well-defined, possibly fractional, quality level.
//!
//! Modules:
//! - [`latent`]: tensors, Gaussian parameters, synthetic sources
//! - [`schedule`]: step, inverse-scale and selection-exponent tables
//! - [`quant`]: nested interval quantizer
//! - [`entropy`]: interval probabilities and the range coder
//! - [`selection`]: importance maps and inclusive layer masks
//! - [`stream`]: container encoding, decoding, truncation and measurement
//! - [`optimizer`]: rate-distortion schedule fitting

// `!(a <= b)` is deliberate: NaN must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod bytes;
pub mod entropy;
pub mod error;
pub mod hql;
pub mod latent;
pub mod optimizer;
pub mod quant;
pub mod schedule;
pub mod selection;
pub mod stream;

pub use error::{Error, Result};
pub use hql::{load_latent, store_latent, LatentFile};
pub use latent::{center, sample_source, GaussianParams, LatentTensor, MuSpec, Shape, SigmaSpec, SourceConfig, UnbiasedLatent};
pub use optimizer::{optimize_schedule, total_loss, Corpus, FitResult, LossConfig, LossReport, OptimizerConfig, RateModel};
pub use quant::{IntervalState, QuantConfig};
pub use schedule::{ScheduleFile, ScheduleViolation, StepSchedule};
pub use selection::{ImportanceMap, SelectionMask};
pub use stream::{
    decode, encode, measure, truncate, Container, Decoded, EncodeConfig, ProgressPoint, RdRow, Target,
};
