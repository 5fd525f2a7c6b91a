use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use spid_chain::sim::{write_artifacts, Emit, MetricsReport, ScenarioConfig, Simulation};

/// One scenario run under one seed.
#[derive(Debug, Clone)]
pub struct Job {
    pub scenario: String,
    pub seed: u64,
    pub config: ScenarioConfig,
}

impl Job {
    fn dir(&self, out: &Path) -> PathBuf {
        out.join(&self.scenario).join(format!("seed-{}", self.seed))
    }
}

/// Per-metric means over the seeds of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub intra_throughput: f64,
    pub inter_throughput: f64,
    pub gini: Option<f64>,
    pub final_tip_pool: f64,
    pub mean_finality_s: Option<f64>,
    pub p_detect: Option<f64>,
    pub p_false_alarm: Option<f64>,
    pub detection_delay_s: Option<f64>,
    pub conservation_holds: bool,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn aggregate(scenario: &str, reports: &[MetricsReport]) -> Aggregate {
    let ds = || reports.iter().filter_map(|r| r.double_spend.as_ref());
    Aggregate {
        scenario: scenario.to_string(),
        seeds: reports.iter().map(|r| r.seed).collect(),
        intra_throughput: mean(reports.iter().map(|r| r.intra_throughput)).unwrap_or(0.0),
        inter_throughput: mean(reports.iter().map(|r| r.inter_throughput)).unwrap_or(0.0),
        gini: mean(reports.iter().filter_map(|r| r.gini)),
        final_tip_pool: mean(reports.iter().map(|r| r.final_tip_pool as f64)).unwrap_or(0.0),
        mean_finality_s: mean(reports.iter().filter_map(|r| r.mean_finality_s)),
        p_detect: mean(ds().map(|d| d.p_detect)),
        p_false_alarm: mean(ds().map(|d| d.p_false_alarm)),
        detection_delay_s: mean(ds().filter_map(|d| d.mean_delay_s)),
        conservation_holds: reports.iter().all(|r| r.conservation.holds),
    }
}

/// Creates `out` and proves it accepts files.
pub fn ensure_writable(out: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    let probe = out.join(".spid-write-check");
    std::fs::write(&probe, b"")?;
    std::fs::remove_file(probe)
}

/// Runs every job and writes its artifacts plus one `aggregate.json` per
/// scenario. Jobs sharing a scenario label are aggregated in input order.
pub fn run_jobs(
    jobs: &[Job],
    out: &Path,
    emit: &[Emit],
    parallelism: usize,
) -> Result<Vec<Aggregate>, String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| e.to_string())?;
    let results: Vec<Result<MetricsReport, String>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let mut config = job.config.clone();
                config.seed = job.seed;
                let output = Simulation::new(config)
                    .map_err(|e| format!("{}: {e}", job.scenario))?
                    .run();
                let dir = job.dir(out);
                write_artifacts(&output, &dir, emit)
                    .map_err(|e| format!("{}: {e}", dir.display()))?;
                Ok(output.report)
            })
            .collect()
    });

    let mut labels: Vec<&str> = Vec::new();
    for j in jobs {
        if !labels.contains(&j.scenario.as_str()) {
            labels.push(&j.scenario);
        }
    }
    let mut aggregates = Vec::new();
    for label in labels {
        let mut reports = Vec::new();
        for (job, r) in jobs.iter().zip(&results) {
            if job.scenario == label {
                reports.push(r.clone()?);
            }
        }
        let agg = aggregate(label, &reports);
        let path = out.join(label).join("aggregate.json");
        let mut text = serde_json::to_string_pretty(&agg).map_err(|e| e.to_string())?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))?;
        aggregates.push(agg);
    }
    Ok(aggregates)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_skips_missing_values() {
        assert_eq!(mean([1.0, 2.0, 6.0]), Some(3.0));
        assert_eq!(mean(std::iter::empty()), None);
    }
}
