use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;

/// `Σ_i Σ_j |φ_i − φ_j| / (2N Σ φ)`, computed on the sorted vector in linear time.
/// `None` when every entry is zero.
pub fn gini(counts: &[u64]) -> Option<f64> {
    let total: u128 = counts.iter().map(|&c| c as u128).sum();
    if total == 0 {
        return None;
    }
    let mut v = counts.to_vec();
    v.sort_unstable();
    let n = v.len() as i128;
    // Σ_i Σ_j |x_i − x_j| = 2 Σ_i (2i − n + 1) x_(i)
    let pairs: i128 = v
        .iter()
        .enumerate()
        .map(|(i, &x)| (2 * i as i128 - n + 1) * x as i128)
        .sum();
    Some((2 * pairs) as f64 / (2 * n * total as i128) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleSpendStats {
    pub pairs: usize,
    pub regular: usize,
    pub detected: usize,
    pub false_alarms: usize,
    pub p_detect: f64,
    pub p_false_alarm: f64,
    /// Seconds; `None` when nothing was detected.
    pub mean_delay_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub honest_epochs: u64,
    pub honest_blocks: u64,
    pub adversarial_blocks: u64,
    pub injected_blocks: u64,
    pub confirmed_blocks: u64,
    pub labeled_blocks: u64,
    pub stage1_timeouts: u64,
    pub stage2_timeouts: u64,
    pub vote_timeouts: u64,
    pub coded_mismatches: u64,
    pub superblock_mismatches: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conservation {
    pub genesis_total: String,
    pub final_total: String,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub mu_crit: f64,
    /// Validated blocks per honest chain per minute.
    pub intra_throughput: f64,
    /// Confirmed honest blocks per minute.
    pub inter_throughput: f64,
    /// Coefficient of the last ledger window with data.
    pub gini: Option<f64>,
    pub gini_series: Vec<(u64, Option<f64>)>,
    /// `(seconds, tips)`.
    pub tip_pool_series: Vec<(u64, usize)>,
    pub final_tip_pool: usize,
    pub finality_samples: Vec<(u64, f64)>,
    pub mean_finality_s: Option<f64>,
    /// `(minute, confirmed blocks)`.
    pub throughput_series: Vec<(u64, u64)>,
    pub double_spend: Option<DoubleSpendStats>,
    pub counters: Counters,
    pub conservation: Conservation,
}
