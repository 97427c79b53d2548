//! Configuration, session orchestration and report emission.

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{default_config_text, RunConfig, Schedule, OUT_DIR_ENV};
pub use pipeline::{
    daily_cycle, derive_seed, prepare_state, run_pipeline, run_session, visibility, PreparedState, MeanStd, ModeReport, SessionReport,
    StateMetrics, Visibility,
};
pub use report::emit_reports;
