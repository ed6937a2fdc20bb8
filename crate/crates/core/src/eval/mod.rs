//! AUROC metrics, evaluation reports and latency benchmarking.

mod auroc;
mod bench;
mod report;

pub use auroc::{image_auroc, pixel_auroc};
pub use bench::{
    benchmark_inference, benchmark_interleaved, device_descriptor, LatencyReport, MIN_RUNS,
    MIN_WARMUP, NOISY_CV,
};
pub use report::{evaluate, key_values, write_scores_csv, EvalReport, ScoreRow};
