use std::time::Instant;

use serde::{Deserialize, Serialize};

/// Per-frame processing stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Pred,
    Track,
    Update,
    Creation,
    Opt,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Pred, Stage::Track, Stage::Update, Stage::Creation, Stage::Opt];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pred => "Pred",
            Stage::Track => "Track",
            Stage::Update => "Update",
            Stage::Creation => "Creation",
            Stage::Opt => "Opt",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub name: String,
    pub mean_ms: f64,
    pub std_ms: f64,
}

/// Collects wall-clock samples per stage on a monotonic clock.
#[derive(Clone, Debug, Default)]
pub struct StageTimer {
    samples: [Vec<f64>; 5],
}

impl StageTimer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, stage: Stage, ms: f64) {
        self.samples[stage as usize].push(ms);
    }

    pub fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.record(stage, t0.elapsed().as_secs_f64() * 1e3);
        out
    }

    pub fn samples(&self, stage: Stage) -> &[f64] {
        &self.samples[stage as usize]
    }

    /// Mean and sample standard deviation per stage, in `Stage::ALL` order.
    pub fn summary(&self) -> Vec<TimingRecord> {
        Stage::ALL
            .iter()
            .map(|&s| {
                let (mean_ms, std_ms) = mean_std(self.samples(s));
                TimingRecord { name: s.name().to_string(), mean_ms, std_ms }
            })
            .collect()
    }
}

pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
