use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::engine::SimOutput;
use super::metrics::MetricsReport;

/// Artifact families a run can write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Emit {
    Metrics,
    EventLog,
    DagSnapshot,
    CsvSeries,
}

impl Emit {
    pub const ALL: [Emit; 4] = [
        Emit::Metrics,
        Emit::EventLog,
        Emit::DagSnapshot,
        Emit::CsvSeries,
    ];
}

fn write_csv<R: Serialize>(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = R>,
) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}

pub fn write_report(report: &MetricsReport, path: &Path) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(report).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

/// Writes the selected artifacts into `dir`, creating it if needed.
pub fn write_artifacts(out: &SimOutput, dir: &Path, emit: &[Emit]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let r = &out.report;
    for e in emit {
        match e {
            Emit::Metrics => write_report(r, &dir.join("metrics.json"))?,
            Emit::EventLog => {
                let mut f =
                    std::io::BufWriter::new(std::fs::File::create(dir.join("events.jsonl"))?);
                for ev in &out.events {
                    serde_json::to_writer(&mut f, ev).map_err(std::io::Error::other)?;
                    f.write_all(b"\n")?;
                }
                f.flush()?;
            }
            Emit::DagSnapshot => std::fs::write(dir.join("dag.txt"), &out.dag_snapshot)?,
            Emit::CsvSeries => {
                write_csv(
                    &dir.join("tip_pool.csv"),
                    &["time_s", "count"],
                    &r.tip_pool_series,
                )?;
                write_csv(
                    &dir.join("finality.csv"),
                    &["block_id", "seconds"],
                    &r.finality_samples,
                )?;
                write_csv(
                    &dir.join("throughput.csv"),
                    &["minute", "blocks"],
                    &r.throughput_series,
                )?;
            }
        }
    }
    Ok(())
}
