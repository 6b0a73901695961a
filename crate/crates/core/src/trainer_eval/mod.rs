//! Optimization, metrics and the experiment harnesses.

mod experiments;
mod metrics;
mod optim;
mod train;

pub use experiments::{
    density_sweep, runtime_csv, runtime_report, sensitivity_probe, DensitySweep, ProbeResult, Region, RuntimeRow,
    SweepRun, SweepSummary, RUNTIME_WARMUP,
};
pub use metrics::{evaluate, metrics_for, DepthMetrics, DisparityMetrics, MetricsAccumulator, MetricsReport, MIN_PRED_DISPARITY};
pub use optim::{rmsprop_step, RmsProp, RMSPROP_ALPHA, RMSPROP_EPS};
pub use train::{format_log, train, LogRecord, TrainConfig, TrainOutcome};
