use std::hint::black_box;
use std::time::Instant;

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anomaly::infer_tensor;
use crate::error::{Error, Result};
use crate::model::DistillModel;

pub const MIN_RUNS: usize = 10;
pub const MIN_WARMUP: usize = 1;
/// Coefficient of variation above which a run is flagged as noisy.
pub const NOISY_CV: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub fps: f64,
    pub latency_mean_ms: f64,
    pub latency_median_ms: f64,
    pub latency_p95_ms: f64,
    pub latency_std_ms: f64,
    pub n_runs: usize,
    pub warmup_runs: usize,
    pub noisy: bool,
    pub device_descriptor: String,
}

impl LatencyReport {
    /// Summarizes per-run latencies in milliseconds (warmup already discarded).
    pub fn from_samples(samples_ms: &[f64], warmup_runs: usize) -> Self {
        let n = samples_ms.len();
        let mean = samples_ms.iter().sum::<f64>() / n as f64;
        let var = samples_ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let mut sorted = samples_ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let p95 = sorted[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
        let std = var.sqrt();
        Self {
            fps: 1000.0 / mean,
            latency_mean_ms: mean,
            latency_median_ms: median,
            latency_p95_ms: p95,
            latency_std_ms: std,
            n_runs: n,
            warmup_runs,
            noisy: std / mean >= NOISY_CV,
            device_descriptor: device_descriptor(),
        }
    }
}

/// CPU model and worker-thread count.
pub fn device_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|v| v.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    format!("cpu: {cpu}, {} threads", rayon::current_num_threads())
}

fn check_counts(n_runs: usize, warmup: usize) -> Result<()> {
    if n_runs < MIN_RUNS {
        return Err(Error::config(
            "runs",
            format!("{n_runs} is below the minimum of {MIN_RUNS}"),
        ));
    }
    if warmup < MIN_WARMUP {
        return Err(Error::config(
            "warmup",
            format!("{warmup} is below the minimum of {MIN_WARMUP}"),
        ));
    }
    Ok(())
}

fn bench_input(input_size: usize) -> Array4<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Array4::from_shape_simple_fn((1, 3, input_size, input_size), || {
        rng.random_range(-2.0f32..2.0)
    })
}

/// Single-image latency of forward passes, map construction and scoring.
/// Preprocessing is excluded.
pub fn benchmark_inference(
    model: &DistillModel,
    input_size: usize,
    n_runs: usize,
    warmup: usize,
) -> Result<LatencyReport> {
    Ok(benchmark_interleaved(&[model], input_size, n_runs, warmup)?.remove(0))
}

/// Benchmarks several models round-robin, so slow drifts in machine load hit
/// all of them alike. Reports are returned in input order.
pub fn benchmark_interleaved(
    models: &[&DistillModel],
    input_size: usize,
    n_runs: usize,
    warmup: usize,
) -> Result<Vec<LatencyReport>> {
    check_counts(n_runs, warmup)?;
    let x = bench_input(input_size);
    for _ in 0..warmup {
        for m in models {
            black_box(infer_tensor(m, x.view())?);
        }
    }
    let mut samples = vec![Vec::with_capacity(n_runs); models.len()];
    for _ in 0..n_runs {
        for (m, s) in models.iter().zip(samples.iter_mut()) {
            let t0 = Instant::now();
            black_box(infer_tensor(m, black_box(x.view()))?);
            s.push(t0.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(samples
        .iter()
        .map(|s| LatencyReport::from_samples(s, warmup))
        .collect())
}
