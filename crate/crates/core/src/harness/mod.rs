//! Benchmark harness: estimator runs, panel metrics and CSV ingestion.

pub mod ingest;
pub mod metrics;
pub mod panel;
pub mod pipeline;

pub use ingest::{ingest_csv, write_sample_csv, ColumnMapping, Ingested};
pub use metrics::{allocation_error, bootstrap_relative_mae, cell_metrics, CellMetrics, RelativeSummary};
pub use panel::{compare_estimators, run_panel, summarize, write_cells_csv, CellResult, PanelConfig};
pub use pipeline::{
    fit_core, label_regime, run_estimator, run_tail_pipeline, treatment_grid, EstimatorKind, EstimatorOutput,
    FitConfig, TailPipeline,
};
