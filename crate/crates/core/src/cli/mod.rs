//! Batch front end: config parsing, stage orchestration and export.

mod config;
mod export;
mod pipeline;

pub use config::{
    normalize_stages, parse_config, ChecksConfig, GridConfig, OutputsConfig, ProblemConfig, RunConfig, Stage,
    TermConfig,
};
pub use export::{export_results, grid_csv, read_grid_csv};
pub use pipeline::{
    run_pipeline, Check, DpeSummary, EigenSummary, ManifoldSummary, OracleSummary, PipelineOutput, Report,
    RiccatiSummary, SpectralSummary, StageOutcome, StageStatus,
};
