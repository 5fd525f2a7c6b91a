use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nodes::LinkModel;

/// A config field that failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: &'static str,
    pub message: String,
}

fn err(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleSpendConfig {
    pub pairs: usize,
    pub regular: usize,
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Chains.
    #[serde(rename = "N")]
    pub chains: usize,
    /// Workers per chain.
    #[serde(rename = "n")]
    pub workers: usize,
    /// Accounts per chain.
    #[serde(rename = "M")]
    pub accounts: usize,
    /// Tips processed per epoch.
    #[serde(rename = "K")]
    pub tips: usize,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "defaults::adversary_fraction")]
    pub adversary_fraction: f64,
    /// Network-wide DAG issuance, blocks per minute.
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    /// Per honest chain block rate override, blocks per minute.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incoming_rate: Option<f64>,
    /// Minutes.
    #[serde(default = "defaults::duration")]
    pub duration: f64,
    /// Milliseconds.
    #[serde(default = "defaults::latency")]
    pub link_latency: f64,
    /// Mbit/s.
    #[serde(default = "defaults::bandwidth")]
    pub bandwidth: f64,
    /// Milliseconds.
    #[serde(default = "defaults::timeout")]
    pub task_timeout: f64,
    /// Milliseconds.
    #[serde(default = "defaults::timeout")]
    pub vote_timeout: f64,
    #[serde(default = "defaults::yes")]
    pub coding_enabled: bool,
    #[serde(default)]
    pub seed: u64,
    /// Initial balance of every account.
    #[serde(default = "defaults::genesis")]
    pub genesis_balance: u64,
    /// Per-account genesis vector, length `M`, shared by all chains.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genesis_balances: Option<Vec<u64>>,
    /// Chain stakes; equal when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stakes: Option<Vec<u64>>,
    #[serde(default = "defaults::txs_per_block")]
    pub txs_per_block: usize,
    /// Microseconds of worker compute per row of one matrix.
    #[serde(default = "defaults::row_cost")]
    pub row_cost_us: u64,
    #[serde(default = "defaults::invalid_tx_fraction")]
    pub invalid_tx_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub double_spend: Option<DoubleSpendConfig>,
}

mod defaults {
    pub fn lambda() -> f64 {
        0.1
    }
    pub fn eta() -> f64 {
        0.67
    }
    pub fn adversary_fraction() -> f64 {
        0.2
    }
    pub fn gamma() -> f64 {
        100.0
    }
    pub fn duration() -> f64 {
        5.0
    }
    pub fn latency() -> f64 {
        100.0
    }
    pub fn bandwidth() -> f64 {
        20.0
    }
    pub fn timeout() -> f64 {
        500.0
    }
    pub fn yes() -> bool {
        true
    }
    pub fn genesis() -> u64 {
        1_000_000
    }
    pub fn txs_per_block() -> usize {
        10
    }
    pub fn row_cost() -> u64 {
        2_000
    }
    pub fn invalid_tx_fraction() -> f64 {
        0.5
    }
}

impl ScenarioConfig {
    /// Defaults for everything but the four sizes.
    pub fn new(chains: usize, workers: usize, accounts: usize, tips: usize) -> Self {
        ScenarioConfig {
            chains,
            workers,
            accounts,
            tips,
            lambda: defaults::lambda(),
            eta: defaults::eta(),
            mu: 0.0,
            adversary_fraction: defaults::adversary_fraction(),
            gamma: defaults::gamma(),
            incoming_rate: None,
            duration: defaults::duration(),
            link_latency: defaults::latency(),
            bandwidth: defaults::bandwidth(),
            task_timeout: defaults::timeout(),
            vote_timeout: defaults::timeout(),
            coding_enabled: true,
            seed: 0,
            genesis_balance: defaults::genesis(),
            genesis_balances: None,
            stakes: None,
            txs_per_block: defaults::txs_per_block(),
            row_cost_us: defaults::row_cost(),
            invalid_tx_fraction: defaults::invalid_tx_fraction(),
            double_spend: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, LoadError> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| LoadError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Adversarial share of issuance above which honest tips can be starved.
    pub fn mu_crit(&self) -> f64 {
        (self.tips as f64 - 1.0) / self.tips as f64
    }

    /// Adversarial chains; none when nobody spams.
    pub fn adversarial_chains(&self) -> usize {
        if self.mu > 0.0 {
            ((self.adversary_fraction * self.chains as f64).round() as usize)
                .clamp(1, self.chains - 1)
        } else {
            0
        }
    }

    pub fn duration_us(&self) -> u64 {
        (self.duration * 60e6).round() as u64
    }

    pub fn link(&self) -> LinkModel {
        LinkModel {
            latency_us: (self.link_latency * 1e3).round() as u64,
            bandwidth_bps: (self.bandwidth * 1e6).round() as u64,
        }
    }

    pub fn task_timeout_us(&self) -> u64 {
        (self.task_timeout * 1e3).round() as u64
    }

    pub fn vote_timeout_us(&self) -> u64 {
        (self.vote_timeout * 1e3).round() as u64
    }

    /// Length of one ledger window: the time the network needs to issue `N` blocks.
    pub fn window_us(&self) -> u64 {
        (60e6 * self.chains as f64 / self.gamma).round().max(1.0) as u64
    }

    pub fn genesis(&self) -> Vec<u64> {
        self.genesis_balances
            .clone()
            .unwrap_or_else(|| vec![self.genesis_balance; self.accounts])
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let count = |field, v: usize| {
            if v >= 1 {
                Ok(())
            } else {
                Err(err(field, "must be at least 1"))
            }
        };
        count("N", self.chains)?;
        count("n", self.workers)?;
        count("M", self.accounts)?;
        count("K", self.tips)?;
        count("txs_per_block", self.txs_per_block)?;
        if self.chains > crate::dag::MAX_CHAINS {
            return Err(err(
                "N",
                format!("at most {} chains", crate::dag::MAX_CHAINS),
            ));
        }
        let frac = |field, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(err(field, format!("{v} must lie in [0, 1]")))
            }
        };
        frac("lambda", self.lambda)?;
        frac("adversary_fraction", self.adversary_fraction)?;
        if !(0.0..1.0).contains(&self.mu) {
            return Err(err("mu", format!("{} must lie in [0, 1)", self.mu)));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(err("eta", format!("{} must lie in (0, 1]", self.eta)));
        }
        if !(self.invalid_tx_fraction > 0.0 && self.invalid_tx_fraction <= 1.0) {
            return Err(err(
                "invalid_tx_fraction",
                format!("{} must lie in (0, 1]", self.invalid_tx_fraction),
            ));
        }
        let positive = |field, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(err(field, format!("{v} must be positive")))
            }
        };
        positive("gamma", self.gamma)?;
        positive("duration", self.duration)?;
        positive("bandwidth", self.bandwidth)?;
        positive("task_timeout", self.task_timeout)?;
        positive("vote_timeout", self.vote_timeout)?;
        if let Some(r) = self.incoming_rate {
            positive("incoming_rate", r)?;
        }
        if !(self.link_latency >= 0.0 && self.link_latency.is_finite()) {
            return Err(err("link_latency", "must be non-negative"));
        }
        if self.mu > 0.0 && self.chains < 2 {
            return Err(err(
                "mu",
                "spamming needs at least one honest and one adversarial chain",
            ));
        }
        if let Some(g) = &self.genesis_balances {
            if g.len() != self.accounts {
                return Err(err(
                    "genesis_balances",
                    format!("has {} entries for M = {}", g.len(), self.accounts),
                ));
            }
        }
        if let Some(s) = &self.stakes {
            if s.len() != self.chains || s.contains(&0) {
                return Err(err(
                    "stakes",
                    format!("needs {} positive entries", self.chains),
                ));
            }
        }
        if let Some(ds) = &self.double_spend {
            if ds.pairs < 1 {
                return Err(err("double_spend", "pairs must be at least 1"));
            }
            if self.chains - self.adversarial_chains() < 2 {
                return Err(err("double_spend", "needs at least two honest chains"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LoadError {
    #[error("cannot read config: {0}")]
    Io(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error(transparent)]
    Invalid(#[from] ConfigError),
}

/// Reads, fills defaults and validates.
pub fn load_config(path: &std::path::Path) -> Result<ScenarioConfig, LoadError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LoadError::Io(format!("{}: {e}", path.display())))?;
    ScenarioConfig::from_json(&text)
}
