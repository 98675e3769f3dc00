use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use kme_filter::harness::{run_experiment, write_outputs, ExperimentOptions};
use kme_filter::scenarios::{load_bundled, Overrides, Scenario, ScenarioConfig};

/// Monte Carlo target tracking with the distributed kernel-embedding filter.
#[derive(Parser, Debug)]
#[command(name = "kme-track", version)]
struct Cli {
    /// Scenario JSON file, or the name of a bundled scenario (a1, a2, b).
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, value_parser = ["gaussian", "laplace", "polynomial"])]
    kernel: Option<String>,
    /// Kernel bandwidth.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Fixed number of consensus rounds (0 = until the tolerance is met).
    #[arg(long)]
    consensus_rounds: Option<usize>,
    /// Stop consensus once the node values agree to this tolerance.
    #[arg(long)]
    consensus_tol: Option<f64>,
    #[arg(long)]
    with_centralized: bool,
    #[arg(long)]
    with_baseline: bool,
    /// Output directory for summary.json, placements.json and traces/.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn load(spec: &str) -> kme_filter::Result<ScenarioConfig> {
    let path = PathBuf::from(spec);
    if path.exists() {
        return ScenarioConfig::from_path(&path).map_err(|e| match e {
            kme_filter::Error::Parse(p) => kme_filter::Error::Config(format!("{}: {p}", path.display())),
            other => other,
        });
    }
    let name = spec.trim_end_matches(".json");
    load_bundled(name)
}

fn run(cli: Cli) -> kme_filter::Result<()> {
    let mut config = load(&cli.scenario)?;
    config.apply(&Overrides {
        runs: cli.runs,
        horizon: cli.horizon,
        seed: cli.seed,
        kernel: cli.kernel,
        sigma: cli.sigma,
        samples: cli.samples,
        consensus_rounds: cli.consensus_rounds,
        consensus_tol: cli.consensus_tol,
    })?;
    let scenario = Scenario::from_config(config)?;
    let opts = ExperimentOptions {
        with_centralized: cli.with_centralized,
        with_baseline: cli.with_baseline,
    };
    let exp = run_experiment(&scenario, opts)?;
    write_outputs(&cli.out, &scenario, &exp)?;

    let s = &exp.summary;
    println!("scenario {} | runs {} | horizon {} | seed {}", s.scenario, s.runs, s.horizon, s.seed);
    println!("{:<10} {:>10} {:>10} {:>10} {:>10}", "method", "rmse_pos", "rmse_vel", "aee_pos", "aee_vel");
    for (name, t) in &s.methods {
        println!(
            "{:<10} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            name, t.rmse_pos, t.rmse_vel, t.aee_pos, t.aee_vel
        );
    }
    println!(
        "consensus rounds/step {:.1} | divergences {} | outputs in {}",
        s.comm.rounds_mean,
        s.divergences,
        cli.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
