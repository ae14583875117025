//! Draft, verify and accept: the speculative decoding loop and its
//! acceptance telemetry.

mod decode;
mod measure;
mod telemetry;
mod tree;
mod verify;

pub use decode::{
    baseline_decode, decode, DecodeMode, DecodeOptions, DecodeOutput, DecodeStatus, StopCondition,
};
pub use measure::{measure_acceptance, AcceptanceMeasurement};
pub use telemetry::{
    AcceptanceRecord, DepthCount, DepthSummary, IterationRecord, TelemetrySummary,
};
pub use tree::{build_tree, BranchSpec, DraftNode, DraftTree};
pub use verify::{
    acceptance_probability, residual_distribution, sample_categorical, verify_greedy,
    verify_sampling, GreedyOutcome, SamplingOutcome,
};
