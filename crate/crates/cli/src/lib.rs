//! Command implementations behind the `tripletgen` binary, exposed as a
//! library so integration tests can drive full runs in-process.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{
    cmd_analyze, cmd_evaluate, cmd_generate, cmd_make_toy, cmd_train, AnalyzeArgs, EvaluateArgs,
    GenerateArgs, GenerateOutcome, MakeToyArgs, TrainArgs, TrainOutcome,
};
pub use config::{RunConfig, Stage};
pub use manifest::Manifest;
