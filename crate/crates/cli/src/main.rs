use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fieldinv::sampler::Mode;
use fieldinv_cli::{stages, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "fieldinv", about = "Hierarchical Gaussian-field inversion in a fixed KL basis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run config, merged over its case preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Averaged-kernel KL basis -> basis.bin, basis_report.json
    BuildBasis,
    /// Prior, CoC and forward PC surrogates -> prior/, coc.bin, forward.bin
    BuildSurrogates,
    /// Synthetic observations -> observations.csv, truth.json
    MakeData,
    /// MH chain -> chain_<label>.json/csv
    Sample,
    /// Quantile maps and scores -> quantiles_<label>.csv, summary_<label>.json
    Post,
}

#[derive(ValueEnum, Clone, Copy)]
enum ModeArg {
    Com,
    Coc,
}

fn load(cli: &Cli) -> CliResult<RunConfig> {
    let Some(path) = &cli.config else {
        return Err(fieldinv_cli::CliError::config("--config is required"));
    };
    let mut cfg = RunConfig::load(path)?;
    if let Some(w) = &cli.workdir {
        cfg.paths.workdir = w.clone();
    }
    if let Some(s) = cli.seed {
        cfg.mcmc.seed = s;
    }
    if let Some(m) = cli.mode {
        cfg.mcmc.mode = match m {
            ModeArg::Com => Mode::Com,
            ModeArg::Coc => Mode::Coc,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<String> {
    let cfg = load(cli)?;
    Ok(match cli.command {
        Command::BuildBasis => {
            let r = stages::build_basis(&cfg)?;
            format!("basis: r={} captured variance {:.4}%", r.r, 100.0 * r.captured_variance)
        }
        Command::BuildSurrogates => {
            let r = stages::build_surrogates(&cfg)?;
            let p = r.prior_attempts.last().expect("one attempt at least");
            format!(
                "prior order {} (worst RRMSE {:.3e}); forward level {} with {} nodes ({} solved, {} cached), RRMSE {:.3e}",
                r.prior_order,
                p.rrmse.worst(),
                r.forward_level,
                r.forward_nodes,
                r.forward_solved,
                r.forward_cached,
                r.forward_rrmse
            )
        }
        Command::MakeData => match stages::make_data(&cfg)? {
            Some(t) => format!("observations written; truth projection error {:.3e}", t.projection_error),
            None => "observations copied".to_string(),
        },
        Command::Sample => {
            let c = stages::sample(&cfg)?;
            format!("{} steps, acceptance {:.3}, {} stored states", c.steps, c.acceptance_rate(), c.samples.len())
        }
        Command::Post => {
            let s = stages::post(&cfg)?;
            format!("{}: acceptance {:.3}, multiESS {:.0}, sigma mode {:.4}", s.label, s.acceptance_rate, s.multi_ess, s.sigma_mode)
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
