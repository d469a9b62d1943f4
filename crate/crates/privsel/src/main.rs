use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use privsel::certify::{all_pass, run_certification, CertifyOptions};
use privsel::config::{load_constants, ExperimentConfig, Overrides};
use privsel::error::{Error, Result};
use privsel::formats::{
    write_equal_budget_csv, write_instance_csv, write_query_log_csv, write_report_csv, write_summary_csv,
    write_trials_jsonl,
};
use privsel::harness::{run_one, run_trials, summarize_all, trial_instance};
use privsel_core::verify::GridSpec;
use privsel_core::{generate_instance, InstanceFamily};

/// Private selection experiments and certification.
#[derive(Parser)]
#[command(name = "privsel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Number of trials (overrides the config file; Monte Carlo draws for `verify`).
    #[arg(long, global = true)]
    trials: Option<u64>,

    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// JSON file with mechanism constants for every recursive mechanism.
    #[arg(long, global = true)]
    constants: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write the per-mechanism summary CSV.
    Run { config: PathBuf },
    /// Certify the recursion inequalities, subset probabilities and sensitivity bounds.
    Verify {
        /// `default`, `quick`, or a JSON file with `k`, `beta` and `rho` lists.
        #[arg(long, default_value = "default")]
        grid: String,
        /// Trials per sensitivity fuzzing family.
        #[arg(long, default_value_t = 10_000)]
        fuzz_trials: u64,
    },
    /// Write an instance as CSV (`index,loss`).
    Gen { family: InstanceFamily, size: usize, scale: f64, seed: u64 },
    /// Replay the configured mechanisms through the equal-budget adapter.
    SimulateEqualBudget { config: PathBuf },
}

enum Outcome {
    Pass,
    Fail,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(p)?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_config(path: &Path, cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    let overrides = Overrides {
        seed: cli.seed,
        trials: cli.trials,
        out: cli.out.clone(),
        constants: cli.constants.as_deref().map(load_constants).transpose()?,
    };
    config.apply(&overrides)?;
    Ok(config)
}

fn run(config: &ExperimentConfig) -> Result<Outcome> {
    let grouped = run_trials(config)?;
    let summary = summarize_all(&grouped, config.failure_threshold)?;
    write_summary_csv(output(config.output.summary.as_deref())?, &summary)?;
    if let Some(path) = &config.output.trials {
        let all: Vec<_> = grouped.into_iter().flatten().collect();
        write_trials_jsonl(output(Some(path))?, &all)?;
    }
    if let Some(dir) = &config.output.query_log_dir {
        fs::create_dir_all(dir)?;
        let inst = trial_instance(config, 0)?;
        for (m, label) in config.mechanisms.iter().zip(config.labels()) {
            let (_, log) = run_one(m, &inst, config.privacy, config.master_seed, 0)?;
            write_query_log_csv(output(Some(&dir.join(format!("{label}.csv"))))?, &log)?;
        }
    }
    Ok(Outcome::Pass)
}

fn parse_grid(spec: &str) -> Result<GridSpec> {
    match spec {
        "default" => Ok(GridSpec::default()),
        "quick" => Ok(GridSpec { k: vec![1000, 1_000_000], beta: vec![1e-3, 1e-6], rho: vec![1.0] }),
        path => {
            let path = Path::new(path);
            let text = fs::read_to_string(path).map_err(|source| Error::Read { path: path.into(), source })?;
            serde_json::from_str(&text).map_err(|source| Error::Parse { path: path.into(), source })
        }
    }
}

fn verify(cli: &Cli, grid: &str, fuzz_trials: u64) -> Result<Outcome> {
    let mut opts = CertifyOptions { grid: parse_grid(grid)?, fuzz_trials, ..CertifyOptions::default() };
    if let Some(seed) = cli.seed {
        opts.seed = seed;
    }
    if let Some(trials) = cli.trials {
        if trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        opts.monte_carlo_draws = trials;
        opts.lemma7_trials = trials;
    }
    if let Some(path) = &cli.constants {
        opts.sampling_constants = load_constants(path)?;
    }
    let rows = run_certification(&opts)?;
    write_report_csv(output(cli.out.as_deref())?, &rows)?;
    Ok(if all_pass(&rows) { Outcome::Pass } else { Outcome::Fail })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => load_config(config, &cli).and_then(|c| run(&c)),
        Command::Verify { grid, fuzz_trials } => verify(&cli, grid, *fuzz_trials),
        Command::Gen { family, size, scale, seed } => generate_instance(*family, *size, *scale, *seed)
            .map_err(Error::from)
            .and_then(|inst| write_instance_csv(output(cli.out.as_deref())?, &inst))
            .map(|_| Outcome::Pass),
        Command::SimulateEqualBudget { config } => load_config(config, &cli).and_then(|c| {
            let rows = privsel::equal_budget::simulate(&c)?;
            write_equal_budget_csv(output(c.output.summary.as_deref())?, &rows)?;
            Ok(if rows.iter().all(|r| r.consistent) { Outcome::Pass } else { Outcome::Fail })
        }),
    };
    match result {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
