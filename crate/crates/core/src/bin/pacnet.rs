//! Experiment harness CLI.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pacnet::harness::{aggregate, format_summary, run, Budgets, ExperimentConfig, TaskSpec};
use pacnet::tasks::duffing::SystemKind;
use pacnet::transfer::StrategyKind;

#[derive(Parser)]
#[command(name = "pacnet", version, about = "Pruned-transfer learning workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Modified Friedman #1 regression benchmark.
    Friedman {
        /// Distance between source and target coefficients.
        #[arg(long, default_value_t = 1.0)]
        d: f64,
        /// Target label noise standard deviation.
        #[arg(long, default_value_t = 1.0)]
        noise_std: f64,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Duffing oscillator calibration benchmark.
    Duffing {
        /// Oscillator family: linear or nonlinear.
        #[arg(long, default_value = "linear")]
        system: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Diffusion-equation benchmark with a physics-informed source model.
    Diffusion {
        /// Source-task diffusivity.
        #[arg(long, default_value_t = 0.01)]
        nu_source: f64,
        /// Target-task diffusivity.
        #[arg(long, default_value_t = 0.1)]
        nu_target: f64,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the invariant suite and exit nonzero on any failure.
    Props,
}

#[derive(Args)]
struct CommonArgs {
    /// Strategies to run (repeatable or comma-separated).
    #[arg(long = "strategy", value_delimiter = ',')]
    strategies: Vec<String>,
    /// Target sample grid, e.g. "10,50,100" or "10..100:10".
    #[arg(long = "n-target")]
    n_target: Option<String>,
    /// Seeds, e.g. "0..4" (inclusive) or "0,1,2".
    #[arg(long)]
    seeds: Option<String>,
    /// JSON config file; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for results.csv, manifest.json and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    prune_ratio: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Source pre-training epochs.
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    /// Allocation re-training epochs.
    #[arg(long)]
    allocate_epochs: Option<usize>,
    /// Target-phase epochs.
    #[arg(long)]
    target_epochs: Option<usize>,
}

fn parse_range_list(text: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        if let Some((a, rest)) = part.split_once("..") {
            let (b, step) = match rest.split_once(':') {
                Some((b, s)) => (b, s.parse::<u64>().map_err(|e| e.to_string())?),
                None => (rest, 1),
            };
            let a: u64 = a.trim().parse().map_err(|_| format!("bad range start in '{part}'"))?;
            let b: u64 = b.trim().parse().map_err(|_| format!("bad range end in '{part}'"))?;
            if step == 0 || b < a {
                return Err(format!("bad range '{part}'"));
            }
            let mut x = a;
            while x <= b {
                out.push(x);
                x += step;
            }
        } else {
            out.push(part.parse().map_err(|_| format!("bad number '{part}'"))?);
        }
    }
    if out.is_empty() {
        return Err(format!("no values in '{text}'"));
    }
    Ok(out)
}

fn apply_common(config: &mut ExperimentConfig, common: &CommonArgs) -> Result<(), String> {
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| format!("--config: {e}"))?;
        *config = serde_json::from_str(&text).map_err(|e| format!("--config: {e}"))?;
    }
    if !common.strategies.is_empty() {
        config.strategies = common
            .strategies
            .iter()
            .map(|s| StrategyKind::parse(s).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
    }
    if let Some(text) = &common.n_target {
        config.n_target_grid = parse_range_list(text)?
            .into_iter()
            .map(|x| x as usize)
            .collect();
    }
    if let Some(text) = &common.seeds {
        config.seeds = parse_range_list(text)?;
    }
    if let Some(r) = common.prune_ratio {
        config.prune_ratio = r;
    }
    if let Some(l) = common.lambda {
        config.lambda = l;
    }
    if let Some(e) = common.pretrain_epochs {
        config.budgets.pretrain_epochs = e;
    }
    if let Some(e) = common.allocate_epochs {
        config.budgets.allocate_epochs = e;
    }
    if let Some(e) = common.target_epochs {
        config.budgets.target_epochs = e;
    }
    if let Some(out) = &common.out {
        config.out_dir = Some(out.clone());
    }
    Ok(())
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    eprintln!("run with --help for usage");
    ExitCode::from(2)
}

fn execute(config: ExperimentConfig) -> ExitCode {
    if let Err(e) = config.validate() {
        return usage_error(&e.to_string());
    }
    match run(&config) {
        Ok(records) => {
            let flagged = records.iter().filter(|r| !r.flag.is_empty()).count();
            match aggregate(&records) {
                Ok(rows) => print!("{}", format_summary(&rows)),
                Err(e) => eprintln!("aggregation failed: {e}"),
            }
            if let Some(dir) = &config.out_dir {
                eprintln!("wrote {}", dir.join("results.csv").display());
            }
            if flagged > 0 {
                eprintln!("{flagged} cell(s) flagged");
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => usage_error(&e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Friedman { d, noise_std, common } => {
            let mut config = ExperimentConfig::new(TaskSpec::Friedman { d, noise_std });
            config.strategies = vec![
                StrategyKind::TargetOnly,
                StrategyKind::FineTuning,
                StrategyKind::PacNet,
            ];
            if let Err(e) = apply_common(&mut config, &common) {
                return usage_error(&e);
            }
            execute(config)
        }
        Command::Duffing { system, common } => {
            let system = match system.as_str() {
                "linear" => SystemKind::Linear,
                "nonlinear" => SystemKind::Nonlinear,
                other => return usage_error(&format!("unknown system '{other}'")),
            };
            let mut config = ExperimentConfig::new(TaskSpec::Duffing { system });
            config.strategies = vec![StrategyKind::TargetOnly, StrategyKind::PacNet];
            if let Err(e) = apply_common(&mut config, &common) {
                return usage_error(&e);
            }
            execute(config)
        }
        Command::Diffusion {
            nu_source,
            nu_target,
            common,
        } => {
            let mut config = ExperimentConfig::new(TaskSpec::Diffusion { nu_source, nu_target });
            config.strategies = vec![StrategyKind::FineTuning, StrategyKind::PacNet];
            if let Err(e) = apply_common(&mut config, &common) {
                return usage_error(&e);
            }
            execute(config)
        }
        Command::Props => {
            let outcomes = pacnet::props::run_all();
            let mut failed = 0;
            for o in &outcomes {
                println!(
                    "{} {}: {}",
                    if o.passed { "PASS" } else { "FAIL" },
                    o.name,
                    o.detail
                );
                if !o.passed {
                    failed += 1;
                }
            }
            if failed > 0 {
                eprintln!("{failed} invariant check(s) failed");
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
