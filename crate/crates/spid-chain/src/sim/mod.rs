//! Discrete-event simulation of interoperating chains sharing one DAG ledger.

mod artifacts;
mod config;
mod engine;
mod metrics;
mod presets;

pub use artifacts::{write_artifacts, Emit};
pub use config::{load_config, ConfigError, DoubleSpendConfig, LoadError, ScenarioConfig};
pub use engine::{stream_rng, BlockPayload, Origin, SimOutput, Simulation};
pub use metrics::{gini, Conservation, Counters, DoubleSpendStats, MetricsReport};
pub use presets::{preset, preset_names, Preset};

/// Runs a scenario to completion.
pub fn run_scenario(config: ScenarioConfig) -> Result<MetricsReport, ConfigError> {
    Ok(Simulation::new(config)?.run().report)
}
