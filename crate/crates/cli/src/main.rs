use std::fs;
use std::path::PathBuf;

use acuc_core::case_io::parse_case;
use acuc_core::instance::generate_instance;
use acuc_core::pipeline::{load_instance, reports_to_csv, reports_to_table, run_mode, Mode, RunOptions};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

/// Unit commitment with AC power flow constraints.
#[derive(Parser)]
#[command(name = "acuc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// DC unit commitment, then AC recovery.
    Dc(RunArgs),
    /// MISOCP relaxation, then AC recovery.
    Misocp(RunArgs),
    /// MISOCP with envelopes and cycle cuts, then AC recovery.
    #[command(name = "misocp++")]
    MisocpPlus(RunArgs),
    /// Temporal Lagrangian decomposition.
    Decomp(RunArgs),
    /// Generate a 24-period instance from a MATPOWER case.
    Generate {
        #[arg(long)]
        case: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Instance JSON, or a MATPOWER case to generate from.
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value_t = 4)]
    blocks: usize,
    #[arg(long, default_value_t = 5)]
    cut_rounds: usize,
    #[arg(long, default_value_t = 0.001)]
    mip_gap: f64,
    #[arg(long, default_value_t = 3600.0)]
    time_limit: f64,
    /// Seed used when `--instance` is a MATPOWER case.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(mode: Mode, args: RunArgs) -> Result<()> {
    let text = fs::read_to_string(&args.instance).with_context(|| format!("reading {}", args.instance.display()))?;
    let inst = load_instance(&text, args.seed)?;
    let opts = RunOptions {
        mip_gap: args.mip_gap,
        time_limit_s: args.time_limit,
        cut_rounds: args.cut_rounds,
        blocks: args.blocks,
        ..Default::default()
    };
    let out = run_mode(mode, &inst, &opts)?;
    if mode == Mode::Decomp {
        for it in &out.iterations {
            for (b, bound) in it.block_bounds.iter().enumerate() {
                println!(
                    "iter {}, block {b}, block_bound {bound:.4}, lb {:.4}, ub {}, gap {}, alpha {}",
                    it.iter,
                    it.lb,
                    it.best_ub.map_or("-".into(), |v| format!("{v:.4}")),
                    it.gap.map_or("-".into(), |g| format!("{:.4}%", 100.0 * g)),
                    it.alpha
                );
            }
        }
    }
    let reports = [out.report];
    print!("{}", reports_to_table(&reports));
    if let Some(path) = args.out {
        fs::write(&path, reports_to_csv(&reports)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Dc(a) => run(Mode::Dc, a),
        Command::Misocp(a) => run(Mode::Misocp, a),
        Command::MisocpPlus(a) => run(Mode::MisocpPlus, a),
        Command::Decomp(a) => run(Mode::Decomp, a),
        Command::Generate { case, seed, out } => {
            let text = fs::read_to_string(&case).with_context(|| format!("reading {}", case.display()))?;
            let inst = generate_instance(&parse_case(&text)?, seed);
            fs::write(&out, inst.to_json()?).with_context(|| format!("writing {}", out.display()))?;
            Ok(())
        }
    }
}
