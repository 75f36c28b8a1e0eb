//! Per-image inference latency.

use std::time::Instant;

use candle_core::{DType, Device};
use serde::{Deserialize, Serialize};

use crate::data::{batch_tensor, SampleSource};
use crate::error::{Error, Result};
use crate::fusion::Classifier;
use crate::nn::Ctx;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub warmup: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { warmup: 3, repeats: 10 }
    }
}

pub const FORWARD_BOUNDARY: &str = "forward pass only, batch size 1; image decoding and preprocessing excluded";
pub const END_TO_END_BOUNDARY: &str = "file read, decode, resize, normalize and forward pass, batch size 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub timed_region: String,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Mean per-image latency of each pass over the image set.
    pub per_repeat_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model_ref: String,
    pub n_images: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub forward: Timing,
    pub end_to_end: Timing,
    pub hardware: String,
}

impl BenchReport {
    pub fn mean_ms(&self) -> f64 {
        self.forward.mean_ms
    }

    pub fn std_ms(&self) -> f64 {
        self.forward.std_ms
    }
}

/// Mean and sample standard deviation; a single value has spread 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn timing(region: &str, per_repeat_ms: Vec<f64>) -> Timing {
    let (mean_ms, std_ms) = mean_std(&per_repeat_ms);
    Timing {
        timed_region: region.to_string(),
        mean_ms,
        std_ms,
        per_repeat_ms,
    }
}

pub fn hardware_note() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("CPU: {cpu}; {threads} hardware thread(s)")
}

/// Time single-image inference over `indices`, `cfg.repeats` times, after
/// `cfg.warmup` untimed passes.
pub fn benchmark_inference(
    model: &dyn Classifier,
    source: &dyn SampleSource,
    indices: &[usize],
    cfg: &BenchConfig,
    model_ref: &str,
) -> Result<BenchReport> {
    if indices.is_empty() {
        return Err(Error::Empty("benchmark image set".into()));
    }
    if cfg.repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    let dev = Device::Cpu;
    let inputs = indices
        .iter()
        .map(|&i| batch_tensor(&[source.load(i)?], DType::F32, &dev))
        .collect::<Result<Vec<_>>>()?;
    let ctx = Ctx::eval();
    for x in inputs.iter().cycle().take(cfg.warmup) {
        model.logits(x, &ctx)?;
    }

    let mut forward = Vec::with_capacity(cfg.repeats);
    for _ in 0..cfg.repeats {
        let mut total = 0.0;
        for x in &inputs {
            let t = Instant::now();
            let logits = model.logits(x, &ctx)?;
            logits.to_vec2::<f32>()?;
            total += t.elapsed().as_secs_f64() * 1e3;
        }
        forward.push(total / inputs.len() as f64);
    }

    let mut end_to_end = Vec::with_capacity(cfg.repeats);
    for _ in 0..cfg.repeats {
        let mut total = 0.0;
        for &i in indices {
            let t = Instant::now();
            let x = batch_tensor(&[source.load(i)?], DType::F32, &dev)?;
            model.logits(&x, &ctx)?.to_vec2::<f32>()?;
            total += t.elapsed().as_secs_f64() * 1e3;
        }
        end_to_end.push(total / indices.len() as f64);
    }

    Ok(BenchReport {
        model_ref: model_ref.to_string(),
        n_images: indices.len(),
        repeats: cfg.repeats,
        warmup: cfg.warmup,
        forward: timing(FORWARD_BOUNDARY, forward),
        end_to_end: timing(END_TO_END_BOUNDARY, end_to_end),
        hardware: hardware_note(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_value_has_no_spread() {
        assert_eq!(mean_std(&[4.2]), (4.2, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
