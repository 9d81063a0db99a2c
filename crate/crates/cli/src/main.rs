use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use trialoffer::dataset::Setting;
use trialoffer::equilibrium::{self, SearchMethod};
use trialoffer::model::{Ranking, SignalSpec};
use trialoffer_cli::experiment::search_json;
use trialoffer_cli::{run_experiment, validate_config, write_outputs, MarketSource};

#[derive(Parser)]
#[command(
    name = "trialoffer",
    version,
    about = "Trial-offer market simulations and equilibrium analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SettingArg {
    Independent,
    AntiCorrelated,
}

impl From<SettingArg> for Setting {
    fn from(s: SettingArg) -> Self {
        match s {
            SettingArg::Independent => Setting::Independent,
            SettingArg::AntiCorrelated => Setting::AntiCorrelated,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Exhaustive,
    Local,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        worlds: Option<u64>,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config and list every problem found.
    Validate { config: PathBuf },
    /// Closed-form equilibrium under the quality ranking.
    Equilibrium {
        /// Builtin market name or dataset directory.
        #[arg(long)]
        market: String,
        #[arg(long, value_enum)]
        setting: Option<SettingArg>,
        #[arg(long)]
        r: f64,
        /// 1-based items of the support, comma separated.
        #[arg(long, value_delimiter = ',')]
        support: Option<Vec<usize>>,
    },
    /// Search static rankings for the best efficiency at equilibrium.
    RankSearch {
        #[arg(long)]
        market: String,
        #[arg(long, value_enum)]
        setting: Option<SettingArg>,
        #[arg(long)]
        r: f64,
        #[arg(long, value_enum, default_value = "exhaustive")]
        method: MethodArg,
    },
}

fn load(config: &Path) -> Result<trialoffer_cli::ExperimentConfig> {
    validate_config(config)
        .map_err(|errs| anyhow::anyhow!("invalid config:\n  {}", errs.join("\n  ")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            worlds,
            iterations,
            threads,
            out,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(w) = worlds {
                cfg.worlds = w;
            }
            if let Some(l) = iterations {
                cfg.iterations = l;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let files = run_experiment(&cfg)?;
            for path in write_outputs(&cfg.output_dir, &files)? {
                println!("{}", path.display());
            }
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            println!("ok: {} (config hash {})", config.display(), cfg.hash());
        }
        Command::Equilibrium {
            market,
            setting,
            r,
            support,
        } => {
            let spec = MarketSource::from_arg(&market, setting.map(Into::into))
                .resolve()
                .map_err(anyhow::Error::msg)?;
            let rank = Ranking::by_quality(&spec);
            let eq = match support {
                Some(items) => {
                    if items.contains(&0) {
                        bail!("support items are 1-based");
                    }
                    let zero: Vec<usize> = items.iter().map(|i| i - 1).collect();
                    equilibrium::equilibrium_for_support(&spec, &rank, r, &zero)?
                }
                None => equilibrium::inner_equilibrium(&spec, &rank, r)?,
            };
            let sig = SignalSpec::power(r)?;
            let residual = equilibrium::fixed_point_residual(&spec, &rank, &sig, &eq.shares)?;
            let out = json!({
                "r": r,
                "support": eq.support.iter().map(|i| i + 1).collect::<Vec<_>>(),
                "shares": eq.shares,
                "trace": eq.trace,
                "classification": eq.classification,
                "fixed_point_residual": residual,
                "efficiency_with_signal": equilibrium::expected_purchases_at(&spec, &rank, &sig, &eq.shares)?,
                "efficiency_without_signal": equilibrium::no_signal_efficiency(&spec, &rank)?,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::RankSearch {
            market,
            setting,
            r,
            method,
        } => {
            let spec = MarketSource::from_arg(&market, setting.map(Into::into))
                .resolve()
                .map_err(anyhow::Error::msg)?;
            let method = match method {
                MethodArg::Exhaustive => SearchMethod::Exhaustive,
                MethodArg::Local => SearchMethod::LocalSearchSwap,
            };
            let out = search_json(&spec, r, method).context("ranking search failed")?;
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
