//! Progressive containers: encode, decode at any prefix, truncate, measure.

mod codec;
mod container;
mod measure;
mod plan;

pub use codec::{
    decode, decode_traced, encode, encode_traced, layer_counts, selected_by, truncate, CodingTrace, ComponentStep,
    Decoded, EncodeConfig, Target, Truncation,
};
pub use container::{Container, ContainerView, Header, SegmentView, HQS_MAGIC, HQS_VERSION};
pub use measure::{from_csv, level_grid, measure, sig9, to_csv, RdRow, CSV_HEADER};
pub use plan::{plan_order, OrderPlan, ProgressPoint};
