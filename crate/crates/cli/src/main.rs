use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use sdpso_core::experiment::{sweep_dir, SWEEP_CSV};
use sdpso_core::report::{format_table, recompute_summary, RUNS_CSV};
use sdpso_core::{run_experiment, sweep_sprob, ConfigFile, ExperimentOptions, RunConfig};

/// Surrogate-assisted distributed particle swarm optimisation.
#[derive(Parser)]
#[command(name = "sdpso", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (num_runs repetitions) and write its logs.
    Run(RunArgs),
    /// Repeat the experiment for several surrogate probabilities.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated surrogate probabilities.
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75")]
        probs: Vec<f64>,
    },
    /// Recompute summaries from the logs in an output directory.
    Report {
        #[arg(long, default_value = "results")]
        dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for config.toml and the CSV logs.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Run repetitions concurrently (wall times then include contention).
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    swarms: Option<usize>,
    #[arg(long)]
    pop_size: Option<usize>,
    #[arg(long)]
    s_prob: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    psi: Option<usize>,
    #[arg(long)]
    phi: Option<usize>,
    #[arg(long)]
    t_max: Option<usize>,
    /// Injected delay per true evaluation, in seconds.
    #[arg(long)]
    delay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    num_runs: Option<usize>,
    /// Any other configuration key, as `key=value` in TOML syntax.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn config_file(&self) -> Result<ConfigFile> {
        let mut file = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        if !self.set.is_empty() {
            let text = self.set.join("\n");
            file = file.overlay(ConfigFile::parse(&text).context("parsing --set values")?);
        }
        let flags = ConfigFile {
            mode: self.mode.clone(),
            problem: self.problem.clone(),
            dim: self.dim,
            swarms: self.swarms,
            pop_size: self.pop_size,
            s_prob: self.s_prob,
            beta: self.beta,
            psi: self.psi,
            phi: self.phi,
            t_max: self.t_max,
            delay: self.delay,
            seed: self.seed,
            num_runs: self.num_runs,
            ..ConfigFile::default()
        };
        Ok(file.overlay(flags))
    }

    /// Resolves the configuration and records it in the output directory.
    fn prepare(&self) -> Result<(RunConfig, ExperimentOptions)> {
        let file = self.config_file()?;
        let config = RunConfig::from_file(file.clone())?;
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        fs::write(self.out.join("config.toml"), file.to_toml())?;
        let options = ExperimentOptions {
            out_dir: Some(self.out.clone()),
            parallel: self.parallel,
        };
        Ok((config, options))
    }
}

fn report(dir: &Path) -> Result<String> {
    if dir.join(RUNS_CSV).exists() {
        return Ok(format_table(&[recompute_summary(dir)?]));
    }
    if !dir.join(SWEEP_CSV).exists() {
        bail!("{} holds neither run logs nor a sweep", dir.display());
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(RUNS_CSV).exists())
        .collect();
    subdirs.sort();
    let rows = subdirs
        .iter()
        .map(|d| recompute_summary(d).with_context(|| format!("summarizing {}", d.display())))
        .collect::<Result<Vec<_>>>()?;
    Ok(format_table(&rows))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let (config, options) = args.prepare()?;
            let report = run_experiment(&config, &options)?;
            print!("{}", format_table(&[report.summary]));
            info!("logs written to {}", args.out.display());
        }
        Command::Sweep { run, probs } => {
            let (config, options) = run.prepare()?;
            let results = sweep_sprob(&config, &probs, &options)?;
            let rows: Vec<_> = results.into_iter().map(|(_, r)| r.summary).collect();
            print!("{}", format_table(&rows));
            for p in &probs {
                info!("logs for s_prob {p} in {}", sweep_dir(&run.out, *p).display());
            }
        }
        Command::Report { dir } => print!("{}", report(&dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
