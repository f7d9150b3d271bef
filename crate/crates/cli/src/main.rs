use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hawkes_bvm::harness::{efficiency_from_palm, emit_outputs, exit_code, refine, run_experiment, ExperimentConfig};
use hawkes_bvm::io::write_atomic;
use hawkes_bvm::mcmc::{posterior_functional, run_chain};
use hawkes_bvm::palm::estimate_palm;
use hawkes_bvm::rng::derive_seed;
use hawkes_bvm::simulate::simulate_thinning;
use hawkes_bvm::{Error, EventStream, Result};

#[derive(Parser)]
#[command(name = "hawkes", version, about = "Hawkes-process posterior and efficiency experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config file (flat TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides HAWKES_SEED and the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replications and Palm batches.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one path of the configured model at the first horizon.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Sample the posterior for an event file, or for a fresh simulated path.
    Infer {
        #[command(flatten)]
        common: Common,
        /// `time,mark` CSV observed on [-A, T] with T the first horizon.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Estimate Palm quantities and the efficient variance of the functional.
    Palm {
        #[command(flatten)]
        common: Common,
    },
    /// Run the full coverage experiment and write the report.
    Bvm {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = ExperimentConfig::from_path(&common.config)?.with_env_seed()?;
    if let Some(seed) = common.seed {
        config = config.with_seed(seed);
    }
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let out = common.out.clone().unwrap_or_else(|| config.out_dir.clone());
    std::fs::create_dir_all(&out)?;
    Ok((config, out))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

fn simulate(common: &Common) -> Result<()> {
    let (config, out) = load(common)?;
    let horizon = config.horizons[0];
    let a = config.model.support_end();
    let stream = simulate_thinning(&config.model, horizon, config.sim_burn_in * a, derive_seed(config.seed, 0))?;
    let mut buf = Vec::new();
    stream.write_csv(&mut buf)?;
    write_atomic(&out.join("events.csv"), &buf)?;
    write_atomic(&out.join("model.json"), config.model.to_json()?.as_bytes())?;
    log::info!("{} events on [-{a}, {horizon}]", stream.len());
    Ok(())
}

fn infer(common: &Common, data: Option<&Path>) -> Result<()> {
    let (config, out) = load(common)?;
    let horizon = config.horizons[0];
    let a = config.model.support_end();
    let stream = match data {
        Some(path) => EventStream::read_csv(File::open(path)?, config.model.dim(), -a, horizon)?,
        None => simulate_thinning(&config.model, horizon, config.sim_burn_in * a, derive_seed(config.seed, 0))?,
    };
    let draws = run_chain(&stream, &config.prior, a, &config.mcmc)?;
    let mut buf = Vec::new();
    draws.write_csv(&mut buf)?;
    write_atomic(&out.join("posterior.csv"), &buf)?;
    write_json(&out.join("summary.json"), &draws.summary())?;
    let mut functional = posterior_functional(&draws, &config.functional, 0.95)?;
    functional.samples.clear();
    write_json(&out.join("functional.json"), &functional)?;
    log::info!("{} draws; psi mean {:.6}, sd {:.6}", draws.len(), functional.mean, functional.sd);
    Ok(())
}

fn palm(common: &Common) -> Result<()> {
    let (config, out) = load(common)?;
    let refined = refine(&config.model, config.palm_cells)?;
    let estimates = estimate_palm(&refined, &config.palm, config.palm_cells)?;
    write_atomic(&out.join("palm.json"), estimates.to_json()?.as_bytes())?;
    let (eff, _, _) = efficiency_from_palm(&refined, &config.functional, &estimates, &config.palm)?;
    write_json(&out.join("efficiency.json"), &eff)?;
    log::info!("V0 = {:.6}", eff.v0);
    Ok(())
}

fn bvm(common: &Common) -> Result<()> {
    let (config, out) = load(common)?;
    let report = run_experiment(&config)?;
    emit_outputs(&report, &out)?;
    for agg in &report.aggregates {
        for row in &agg.coverage {
            println!(
                "T={} level={:.2} coverage={:.3} (se {:.3}, n={})",
                agg.horizon, row.level, row.coverage, row.std_error, row.total
            );
        }
        println!(
            "T={} mean sd*sqrt(T)={:.4} sqrt(V0)={:.4} median KS={:.4}",
            agg.horizon, agg.mean_sd_sqrt_t, agg.sqrt_v0, agg.median_ks
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { common } => simulate(common),
        Command::Infer { common, data } => infer(common, data.as_deref()),
        Command::Palm { common } => palm(common),
        Command::Bvm { common } => bvm(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
