//! Exact, enumerable laboratory for studying verbalized-confidence calibration
//! under on-policy self-distillation.
//!
//! The crate is organized bottom-up:
//!
//! - [`world`]: finite synthetic tasks, a deterministic verifier and privileged
//!   context distributions.
//! - [`policy`]: a tabular autoregressive softmax policy that plays both the
//!   student (prompt only) and the teacher (prompt plus privileged context).
//! - [`infotheory`]: exact conditional entropies, mutual informations,
//!   projection error and optimism gap over enumerated worlds.
//! - [`distill`]: reverse-KL distillation losses, empirical confidence targets,
//!   target replacement and the training loop.
//! - [`metrics`]: accuracy, ECE, Brier, overconfidence gap, SPR and AUROC.
//! - [`transcripts`]: parsing and scoring of verbalized-confidence transcripts.

pub mod distill;
pub mod error;
pub mod grid;
pub mod infotheory;
pub mod math;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod thresholds;
pub mod transcripts;
pub mod world;

pub use distill::{
    ConfidenceTarget, ContextBuilder, LossBreakdown, Regime, StepRecord, TargetSource,
    TrainConfig, Trainer, TrainingLog,
};
pub use error::{Error, Result};
pub use grid::ConfidenceGrid;
pub use infotheory::{PropositionReport, TrajectoryScope};
pub use metrics::{CalibrationReport, PredictionRecord, ReliabilityBin};
pub use policy::{ConditioningKey, ParamMap, Policy, RowKey, Trajectory};
pub use thresholds::Thresholds;
pub use transcripts::{EvalMode, TranscriptEvaluation, TranscriptRecord};
pub use world::{ContextKind, PrivilegedContext, PromptId, Token, World, WorldSpec};
