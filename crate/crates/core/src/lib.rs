//! Decomposed-reasoning relevance assessment pipeline.
//!
//! Scores query-document pairs on a 0/1/2 relevance scale through a
//! two-round interaction with a text-generation backend: first infer the
//! query intent from auxiliary in-platform documents, then extract a
//! verbatim fragment of the candidate document and emit a score. A
//! rule-based reward (strict tag grammar, verbatim-extraction check, graded
//! label match) drives group-relative policy optimization, demonstrated
//! end-to-end on an analytically differentiable toy policy. The companion
//! modules build citation-signal datasets and compute the evaluation
//! metrics the pipeline reports.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod grpo;
pub mod io;
pub mod policy;
pub mod reward;
pub mod rollout;
pub mod tagparse;

pub use policy::{CompletionBackend, CompletionResult, Message, SamplingConfig};
pub use reward::{RewardBreakdown, RewardConfig};
pub use rollout::{GroupRollout, QueryDocPair, Trajectory};
pub use tagparse::{Extraction, Label, Variant};
