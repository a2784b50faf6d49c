use serde::{Deserialize, Serialize};

use crate::error::{bail_arg, Result};

/// One-cycle shape: linear warm-up from `peak / initial_div` to `peak` over
/// the first `warmup_fraction` of steps, then cosine anneal to
/// `peak / final_div` at the last step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub warmup_fraction: f64,
    pub initial_div: f64,
    pub final_div: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { warmup_fraction: 0.3, initial_div: 25.0, final_div: 1e4 }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            bail_arg!("warm-up fraction must lie in [0, 1), got {}", self.warmup_fraction);
        }
        if !(self.initial_div >= 1.0 && self.final_div >= 1.0) {
            bail_arg!("schedule divisors must be at least 1");
        }
        Ok(())
    }
}

/// Learning rate at `step` of `total` (`0 ≤ step < total`).
pub fn one_cycle(step: usize, total: usize, peak: f64, cfg: &ScheduleConfig) -> f64 {
    let start = peak / cfg.initial_div;
    let end = peak / cfg.final_div;
    let s = step.min(total.saturating_sub(1)) as f64;
    let warm = cfg.warmup_fraction * total as f64;
    if s < warm {
        return start + (peak - start) * s / warm;
    }
    let span = (total as f64 - 1.0) - warm;
    let progress = if span > 0.0 { ((s - warm) / span).min(1.0) } else { 1.0 };
    end + (peak - end) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
