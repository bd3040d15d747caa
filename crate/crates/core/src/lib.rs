//! Building blocks for a data-driven function-calling pipeline: corpus
//! management in the xLAM triple format, embedding-based dedup and retrieval,
//! consistency triage of online queries, entropy-based blind-spot detection,
//! multi-round distribution-aware augmentation, and rule-based reward scoring
//! with GRPO advantage math.
//!
//! Model calls (chat completion, embeddings) sit behind pluggable backends so
//! the whole pipeline runs deterministically against scripted mocks and talks
//! to any OpenAI-compatible endpoint in production.

pub mod augmentor;
pub mod config;
pub mod constructor;
pub mod corpus;
pub mod diversity;
pub mod gateway;
pub mod scoring;
pub mod semantics;
pub mod templates;

pub use corpus::{Buffer, Origin, ParamKind, ParamSpec, Sample, ScalarValue, ToolCall, ToolSpec};
pub use diversity::BlindSpot;
pub use scoring::{OutputMode, RewardBreakdown};
pub use semantics::{Clustering, Embedding};
