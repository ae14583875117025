//! Skippy simultaneous speculative decoding (S3D) at desk scale.
//!
//! A decoder-only transformer drafts several future tokens in one pass by
//! feeding `<M>` mask tokens at future positions and skipping a band of
//! middle layers; the full model then verifies a tree of candidates in a
//! single tree-attention pass, so greedy output is token-for-token identical
//! to plain decoding. Alongside the decoder sit the trainer for the draft
//! objective and an analytic throughput model with a planner for the draft
//! depth and skip fraction.
//!
//! Modules:
//! - [`kernels`]: dense numeric primitives.
//! - [`model`]: the transformer, its KV cache and the `S3DW` weight format.
//! - [`specdec`]: drafting, tree construction, verification and decoding.
//! - [`perf`]: acceptance and speedup model, Monte-Carlo oracle, planner.
//! - [`train`]: synthetic corpus, masked batches, loss, gradients, AdamW.

pub mod error;
pub mod exec;
pub mod kernels;
pub mod model;
pub mod perf;
pub mod specdec;
pub mod train;

pub use error::{Error, Result};
pub use exec::Exec;
pub use kernels::Real;
pub use model::{KvCache, Model, ModelConfig, SkipSpec, TokenId};
