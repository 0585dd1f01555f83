//! Experiment runner: configs, training loops, telemetry and sweeps.

pub mod config;
pub mod metrics;
pub mod sweep;
pub mod train;

pub use config::{ExperimentConfig, MnistConfig, Task, TransformerConfig, Variant};
pub use metrics::{detect_phase, export_metrics, parse_metrics, EpochRecord, ExportFormat, MetricsLog, StepRow};
pub use sweep::{fit_exponential, fit_linear, sweep_beta, sweep_init_norm, ExpFit, LinearFit, SweepReport};
pub use train::{post_memorization_calls, run, run_baseline, run_ppm, Checkpoint, ModelDesc, RunOutput, Workload};
