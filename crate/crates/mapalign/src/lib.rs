//! File formats, session IO, a rayon executor and the `mapalign` command
//! line on top of [`mapalign_core`].

pub mod app;
pub mod config;
pub mod exec;
pub mod formats;
pub mod ingest;
pub mod report;

pub use app::{run_align, run_metrics, run_synth, AlignRequest, AppError, MetricsRequest};
pub use exec::RayonExecutor;
pub use ingest::{load_session, write_session, IngestError, SessionManifest};
pub use report::{write_outputs, OutputPaths};
