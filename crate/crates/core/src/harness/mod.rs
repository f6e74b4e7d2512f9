//! Seeded experiment orchestration and persistence.
//!
//! A run executes a (strategy, n_target, seed) grid for one task. Source
//! pre-training, pruning, allocation and Fisher estimation happen once per
//! (task, seed) and are shared by every strategy that consumes them. Every
//! stream is derived from (task, seed, purpose, n_target) and never from
//! the strategy, so removing a strategy from the grid leaves all other
//! cells bit-identical. Records are written as CSV plus a JSON manifest
//! that freezes the resolved configuration.

mod drivers;

pub use drivers::SeedContext;

use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::duffing::SystemKind;
use crate::transfer::StrategyKind;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    Friedman { d: f64, noise_std: f64 },
    Duffing { system: SystemKind },
    Diffusion { nu_source: f64, nu_target: f64 },
}

impl TaskSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::Friedman { .. } => "friedman",
            TaskSpec::Duffing { .. } => "duffing",
            TaskSpec::Diffusion { .. } => "diffusion",
        }
    }

    /// Short label of the task parameters for the CSV `param` column.
    pub fn param_label(&self) -> String {
        match self {
            TaskSpec::Friedman { d, .. } => format!("d={d}"),
            TaskSpec::Duffing { system } => system.name().to_string(),
            TaskSpec::Diffusion {
                nu_source,
                nu_target,
            } => format!("nu={nu_source}->{nu_target}"),
        }
    }

    pub fn stream_label(&self) -> u64 {
        match self {
            TaskSpec::Friedman { .. } => crate::rng::labels::TASK_FRIEDMAN,
            TaskSpec::Duffing { .. } => crate::rng::labels::TASK_DUFFING,
            TaskSpec::Diffusion { .. } => crate::rng::labels::TASK_DIFFUSION,
        }
    }
}

/// Per-phase training budgets and batch shapes.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Budgets {
    pub pretrain_epochs: usize,
    pub allocate_epochs: usize,
    pub target_epochs: usize,
    pub source_batch: usize,
    pub target_batch: usize,
    pub learning_rate: f64,
}

impl Budgets {
    pub fn for_task(task: &TaskSpec) -> Budgets {
        match task {
            TaskSpec::Friedman { .. } => Budgets {
                pretrain_epochs: 200,
                allocate_epochs: 200,
                target_epochs: 8_000,
                source_batch: 128,
                target_batch: 128,
                learning_rate: 1e-4,
            },
            TaskSpec::Duffing { .. } => Budgets {
                pretrain_epochs: 300,
                allocate_epochs: 300,
                target_epochs: 3_000,
                source_batch: 512,
                target_batch: 512,
                learning_rate: 1e-4,
            },
            TaskSpec::Diffusion { .. } => Budgets {
                pretrain_epochs: 64,
                allocate_epochs: 32,
                target_epochs: 8,
                source_batch: 32,
                target_batch: 32,
                learning_rate: 1e-4,
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub strategies: Vec<StrategyKind>,
    pub n_target_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub prune_ratio: f64,
    pub lambda: f64,
    pub budgets: Budgets,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(task: TaskSpec) -> Self {
        let budgets = Budgets::for_task(&task);
        let lambda = match &task {
            TaskSpec::Duffing { .. } => 1e-3,
            _ => 1e-2,
        };
        ExperimentConfig {
            task,
            strategies: vec![StrategyKind::PacNet],
            n_target_grid: (1..=10).map(|k| k * 10).collect(),
            seeds: (0..5).collect(),
            prune_ratio: 0.8,
            lambda,
            budgets,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.prune_ratio) {
            return Err(Error::InvalidConfig(format!(
                "prune ratio must be in [0, 1), got {}",
                self.prune_ratio
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::InvalidConfig("no strategies selected".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("no seeds selected".into()));
        }
        if self.n_target_grid.is_empty() {
            return Err(Error::InvalidConfig("empty n_target grid".into()));
        }
        if matches!(self.task, TaskSpec::Friedman { .. } | TaskSpec::Duffing { .. })
            && self.n_target_grid.iter().any(|&n| n == 0)
        {
            return Err(Error::InvalidConfig("n_target must be >= 1".into()));
        }
        Ok(())
    }
}

/// One grid cell's outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRecord {
    pub task: String,
    pub strategy: String,
    pub param: String,
    pub n_target: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    pub flag: String,
    pub wall_ms: u128,
}

/// Bounded worker pool: `PACNET_WORKERS` (positive integer) caps the
/// threads; unset means one worker per logical CPU.
pub fn build_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("PACNET_WORKERS") {
        let n: usize = raw
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidConfig(format!("PACNET_WORKERS must be a positive integer, got '{raw}'")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))
}

/// Executes the full grid. Cells are independent jobs scheduled per seed;
/// failures are recorded with a flag and the run continues. Records come
/// back in a deterministic sorted order regardless of scheduling.
pub fn run(config: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    config.validate()?;
    let pool = build_pool()?;
    let results: Vec<Result<Vec<ExperimentRecord>>> = pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| drivers::run_seed(config, seed))
            .collect()
    });
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    records.sort_by(|a, b| {
        (
            &a.task,
            &a.param,
            &a.strategy,
            a.n_target,
            a.seed,
            &a.metric,
        )
            .cmp(&(&b.task, &b.param, &b.strategy, b.n_target, b.seed, &b.metric))
    });
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir)?;
        write_csv(&records, &dir.join("results.csv"))?;
        write_manifest(config, &dir.join("manifest.json"))?;
    }
    Ok(records)
}

/// CSV per the fixed schema, RFC-4180 with LF line endings; values printed
/// with 17 significant digits so they round-trip exactly.
pub fn csv_bytes(records: &[ExperimentRecord]) -> Vec<u8> {
    let mut out = String::from("task,strategy,param,n_target,seed,metric,value,flag,wall_ms\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.16e},{},{}\n",
            r.task, r.strategy, r.param, r.n_target, r.seed, r.metric, r.value, r.flag, r.wall_ms
        ));
    }
    out.into_bytes()
}

pub fn write_csv(records: &[ExperimentRecord], path: &std::path::Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&csv_bytes(records))?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a ExperimentConfig,
    tool_version: &'static str,
    workers: Option<String>,
}

pub fn write_manifest(config: &ExperimentConfig, path: &std::path::Path) -> Result<()> {
    let m = Manifest {
        config,
        tool_version: env!("CARGO_PKG_VERSION"),
        workers: std::env::var("PACNET_WORKERS").ok(),
    };
    let mut f = std::fs::File::create(path)?;
    f.write_all(serde_json::to_string_pretty(&m)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Mean over seeds per (strategy, n_target) plus the trailing average over
/// the n_target grid, per metric.
#[derive(Clone, Debug)]
pub struct SummaryRow {
    pub task: String,
    pub param: String,
    pub strategy: String,
    pub metric: String,
    pub means: Vec<(usize, f64)>,
    pub avg: f64,
}

pub fn aggregate(records: &[ExperimentRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::InvalidConfig("no records to aggregate".into()));
    }
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(String, String, String, String), BTreeMap<usize, Vec<f64>>> =
        BTreeMap::new();
    for r in records {
        groups
            .entry((
                r.task.clone(),
                r.param.clone(),
                r.strategy.clone(),
                r.metric.clone(),
            ))
            .or_default()
            .entry(r.n_target)
            .or_default()
            .push(r.value);
    }
    let mut rows = Vec::new();
    for ((task, param, strategy, metric), by_n) in groups {
        let means: Vec<(usize, f64)> = by_n
            .into_iter()
            .map(|(n, vs)| (n, vs.iter().sum::<f64>() / vs.len() as f64))
            .collect();
        let avg = means.iter().map(|&(_, m)| m).sum::<f64>() / means.len() as f64;
        rows.push(SummaryRow {
            task,
            param,
            strategy,
            metric,
            means,
            avg,
        });
    }
    Ok(rows)
}

/// Renders summary rows as an aligned text table.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    for row in rows {
        out.push_str(&format!(
            "{} {} [{}] {}: ",
            row.task, row.param, row.metric, row.strategy
        ));
        for (n, m) in &row.means {
            out.push_str(&format!("{n}:{m:.3} "));
        }
        out.push_str(&format!("| avg {:.3}\n", row.avg));
    }
    out
}
