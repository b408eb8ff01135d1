//! Stage orchestration for the phantom enhancement pipeline: configs,
//! run directories with an append-only manifest, numerical verification
//! and reports.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod verify;

pub use config::{RunConfig, PRESETS};
pub use error::{Error, Result};
pub use manifest::{RunManifest, StageRecord};
pub use pipeline::{read_benchmark, run_pipeline, BenchmarkRow, BenchmarkSummary, Run, Stage, StageStatus};
pub use verify::{verify_suite, Check, VerifyReport};
