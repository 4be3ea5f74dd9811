//! Experiment orchestration: configs, seeded runs with periodic zero-shot
//! evaluation, sweeps, post-hoc analysis and plots.

pub mod analyze;
pub mod config;
pub mod plot;
pub mod run;
pub mod sweep;

pub use analyze::{analyze, AnalysisOutputs, AnalyzeOptions, TrainedNet};
pub use config::{apply_override, Algorithm, AnalysisConfig, ExperimentConfig, ModelConfig};
pub use run::{check_disjoint, load_run, read_metrics, run, run_dir, run_in, MetricsRecord, RunArtifact};
pub use sweep::{apply_axis, sweep, SweepAxis, SweepRow};
