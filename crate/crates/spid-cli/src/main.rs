mod batch;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spid_chain::sim::{load_config, preset, preset_names, Emit, LoadError};

use batch::{ensure_writable, run_jobs, Aggregate, Job};
use manifest::{scenario_label, RunManifest, Seeds};

#[derive(Parser)]
#[command(name = "spid", version, about = "Run interoperating-chain simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scenario of a manifest under every seed.
    Run { manifest: PathBuf },
    /// Run a built-in scenario family.
    Preset {
        /// One of: fig2, fig3, fig4, fig5, fig6, fig7-k2, fig7-k4, fig8.
        name: String,
        #[arg(long, env = "SPID_OUT", default_value = "spid-out")]
        out: PathBuf,
        /// Use n = 100 workers and M = 1000 accounts.
        #[arg(long)]
        paper_scale: bool,
        /// Number of consecutive seeds, starting at 0.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Worker threads; 0 means one per core.
        #[arg(long, default_value_t = 0)]
        parallelism: usize,
    },
    /// Check a scenario file and print its derived parameters.
    Validate { config: PathBuf },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

fn load_error(e: LoadError) -> Failure {
    match e {
        LoadError::Io(_) => Failure::Runtime(e.to_string()),
        _ => Failure::Validation(e.to_string()),
    }
}

fn default_out() -> PathBuf {
    std::env::var_os("SPID_OUT").map_or_else(|| PathBuf::from("spid-out"), PathBuf::from)
}

fn print_aggregates(aggs: &[Aggregate]) {
    for a in aggs {
        let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{}: runs={} intra={:.2} inter={:.2} gini={} tips={:.1} finality_s={} conservation={}",
            a.scenario,
            a.seeds.len(),
            a.intra_throughput,
            a.inter_throughput,
            opt(a.gini),
            a.final_tip_pool,
            opt(a.mean_finality_s),
            if a.conservation_holds { "ok" } else { "BROKEN" },
        );
    }
}

fn run_manifest(path: &Path) -> Result<(), Failure> {
    let m = RunManifest::load(path).map_err(|e| match e {
        manifest::ManifestError::Io { .. } => Failure::Runtime(e.to_string()),
        _ => Failure::Validation(e.to_string()),
    })?;
    let out = m.output.clone().unwrap_or_else(default_out);
    ensure_writable(&out).map_err(|e| {
        Failure::Validation(format!(
            "output directory {} is not writable: {e}",
            out.display()
        ))
    })?;

    let mut jobs = Vec::new();
    let mut invalid = Vec::new();
    for p in &m.scenarios {
        match load_config(p) {
            Ok(config) => {
                let label = scenario_label(p);
                for seed in m.seeds.expand(config.seed) {
                    jobs.push(Job {
                        scenario: label.clone(),
                        seed,
                        config: config.clone(),
                    });
                }
            }
            Err(e) => {
                eprintln!("skipping {}: {e}", p.display());
                invalid.push(e);
            }
        }
    }
    let aggs = run_jobs(&jobs, &out, &m.emit, m.parallelism).map_err(Failure::Runtime)?;
    print_aggregates(&aggs);
    match invalid.into_iter().next() {
        Some(e) => Err(load_error(e)),
        None => Ok(()),
    }
}

fn run_preset(
    name: &str,
    out: &Path,
    paper_scale: bool,
    seeds: u64,
    parallelism: usize,
) -> Result<(), Failure> {
    let p = preset(name, paper_scale).ok_or_else(|| {
        Failure::Validation(format!(
            "unknown preset `{name}`; available: {}",
            preset_names().join(", ")
        ))
    })?;
    if seeds == 0 {
        return Err(Failure::Validation("--seeds must be at least 1".into()));
    }
    let out = out.join(p.name);
    ensure_writable(&out).map_err(|e| {
        Failure::Validation(format!(
            "output directory {} is not writable: {e}",
            out.display()
        ))
    })?;
    let mut jobs = Vec::new();
    for (label, config) in &p.scenarios {
        for seed in Seeds::Count(seeds).expand(config.seed) {
            jobs.push(Job {
                scenario: label.clone(),
                seed,
                config: config.clone(),
            });
        }
    }
    eprintln!("{}: {} ({} runs)", p.name, p.description, jobs.len());
    let aggs = run_jobs(&jobs, &out, &Emit::ALL, parallelism).map_err(Failure::Runtime)?;
    print_aggregates(&aggs);
    Ok(())
}

fn validate(path: &Path) -> Result<(), Failure> {
    let c = load_config(path).map_err(load_error)?;
    println!(
        "ok: N={} n={} M={} K={} mu={} mu_crit={} adversarial_chains={} window_s={}",
        c.chains,
        c.workers,
        c.accounts,
        c.tips,
        c.mu,
        c.mu_crit(),
        c.adversarial_chains(),
        c.window_us() as f64 / 1e6,
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { manifest } => run_manifest(manifest),
        Command::Preset {
            name,
            out,
            paper_scale,
            seeds,
            parallelism,
        } => run_preset(name, out, *paper_scale, *seeds, *parallelism),
        Command::Validate { config } => validate(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Validation(msg) | Failure::Runtime(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
