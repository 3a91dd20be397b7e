use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use dualhash_cli::compare::{compare, write_table};
use dualhash_cli::experiment::{run_experiment, write_artifacts, write_diagnostics};
use dualhash_cli::{CliError, ExperimentConfig};
use dualhash_core::verify::{run_all, VerifyParams};

#[derive(Parser)]
#[command(name = "dualhash", version, about = "Stochastic primal-dual deep hashing experiments")]
struct Cli {
    /// Worker threads for gradient and metric evaluation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its diagnostics and report.
    Run(Common),
    /// Run several configurations over a seed list and tabulate them.
    Compare {
        /// Configurations to compare (repeatable).
        #[arg(long = "config", required = true, num_args = 1..)]
        configs: Vec<PathBuf>,
        /// Comma-separated seeds; defaults to the first configuration's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// A single seed, shorthand for `--seeds N`.
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in oracle suites and print a JSON summary.
    Verify(Common),
}

fn env_vars() -> Vec<(String, String)> {
    std::env::vars().collect()
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref(), env_vars())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn cmd_run(common: &Common) -> Result<(), CliError> {
    let cfg = load(common)?;
    let dir = cfg.output.dir.clone();
    let mut rows = Vec::new();
    info!("{} for {} iterations, seed {}", cfg.solver.method.name(), cfg.solver.iterations, cfg.seed);
    match run_experiment(&cfg, &mut rows) {
        Ok(out) => {
            for w in &out.report.warnings {
                warn!("{w}");
            }
            write_artifacts(&dir, &cfg, &rows, &out)?;
            let r = &out.report.retrieval;
            println!(
                "{}: mAP {:.4}, AP@r2 {:.4}, quantization error {:.4}, written to {}",
                out.report.method,
                r.map,
                r.ap_at_r2,
                out.report.train_quant_error,
                dir.display()
            );
            Ok(())
        }
        Err(e) => {
            if !rows.is_empty() {
                fs::create_dir_all(&dir)?;
                write_diagnostics(&rows, fs::File::create(dir.join("diagnostics.csv"))?)?;
                fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
            }
            Err(e)
        }
    }
}

fn cmd_compare(configs: &[PathBuf], seeds: &[u64], seed: Option<u64>, out: Option<&Path>) -> Result<(), CliError> {
    if configs.len() < 2 {
        return Err(CliError::Usage("compare needs at least two --config files".into()));
    }
    let env = env_vars();
    let loaded = configs
        .iter()
        .map(|p| Ok((p.display().to_string(), ExperimentConfig::load(Some(p), env.clone())?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let seeds = match (seed, seeds.is_empty()) {
        (Some(s), _) => vec![s],
        (None, false) => seeds.to_vec(),
        (None, true) => loaded[0].1.compare.seeds.clone(),
    };
    let rows = compare(&loaded, &seeds);
    write_table(&rows, io::stdout().lock())?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_table(&rows, fs::File::create(dir.join("compare.csv"))?)?;
    }
    if rows.iter().any(|r| r.failures > 0) {
        warn!("some runs failed; see the errors column");
    }
    Ok(())
}

fn cmd_verify(common: &Common) -> Result<bool, CliError> {
    let mut cfg = ExperimentConfig::load_unchecked(common.config.as_deref(), env_vars())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let suites = run_all(&VerifyParams {
        lambda: cfg.solver.lambda,
        delta: cfg.solver.delta,
        nu: cfg.solver.nu,
        seed: cfg.seed,
    });
    let passed = suites.iter().all(|s| s.passed);
    let summary = serde_json::json!({ "passed": passed, "suites": suites });
    let text = serde_json::to_string_pretty(&summary)?;
    writeln!(io::stdout().lock(), "{text}")?;
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("verify.json"), text + "\n")?;
    }
    Ok(passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.threads > 0 && !dualhash_core::par::init_threads(cli.threads) {
        warn!("thread pool already initialized");
    }
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c).map(|_| true),
        Command::Compare {
            configs,
            seeds,
            seed,
            out,
        } => cmd_compare(configs, seeds, *seed, out.as_deref()).map(|_| true),
        Command::Verify(c) => cmd_verify(c),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
