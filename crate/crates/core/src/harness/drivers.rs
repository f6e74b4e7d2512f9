//! Per-task experiment drivers: data preparation, source-phase artifacts
//! shared across strategies, and single-cell execution.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::harness::{Budgets, ExperimentConfig, ExperimentRecord, TaskSpec};
use crate::nn::{Activation, Network, NetworkSpec, ParamVector};
use crate::ode::{NetField, StateTrajectory};
use crate::optim::{train, Objective, TrainConfig};
use crate::rng::{labels, Pcg64};
use crate::tasks::diffusion::{self, FieldGrid, PinnSampling, PinnSourceObjective};
use crate::tasks::duffing as duffing_task;
use crate::tasks::friedman::{self, FriedmanParams};
use crate::tasks::TabularObjective;
use crate::transfer::{
    allocate, fisher_diag, prune, run_strategy, SourceArtifacts, StrategyHyper, StrategyKind,
    StrategyStreams,
};

/// RK4 substeps of the training-time solver per observation interval.
const NODE_SUBSTEPS: usize = 2;

/// Outcome of one (strategy, n_target) cell.
pub struct CellOutcome {
    pub weights: ParamVector<f64>,
    pub metrics: Vec<(String, f64)>,
    pub flag: String,
}

enum TaskData {
    Friedman {
        target_pool: TabularObjective,
        target_test: TabularObjective,
    },
    Duffing {
        noisy_pairs_source: Vec<StateTrajectory<f64>>,
        eval_truth: Vec<StateTrajectory<f64>>,
    },
    Diffusion {
        observations: TabularObjective,
        eval_fields: Vec<FieldGrid>,
    },
}

/// Everything one seed shares across its cells: datasets, the pre-trained
/// source model, the pruning mask, allocated weights and Fisher diagonals
/// (each computed only when some selected strategy consumes it).
pub struct SeedContext {
    pub seed: u64,
    task_label: u64,
    budgets: Budgets,
    lambda: f64,
    artifacts: SourceArtifacts<f64>,
    data: TaskData,
    pub pretrain_final_loss: f64,
}

impl SeedContext {
    pub fn build(config: &ExperimentConfig, seed: u64) -> Result<SeedContext> {
        match &config.task {
            TaskSpec::Friedman { d, noise_std } => build_friedman(config, seed, *d, *noise_std),
            TaskSpec::Duffing { system } => build_duffing(config, seed, *system),
            TaskSpec::Diffusion {
                nu_source,
                nu_target,
            } => build_diffusion(config, seed, *nu_source, *nu_target),
        }
    }

    pub fn artifacts(&self) -> &SourceArtifacts<f64> {
        &self.artifacts
    }

    /// Overrides the target-phase epoch budget. The expensive source-phase
    /// artifacts stay untouched, so one context can serve several budgets.
    pub fn set_target_epochs(&mut self, epochs: usize) {
        self.budgets.target_epochs = epochs;
    }

    /// The n_target grid this task actually runs. The diffusion target task
    /// always observes the full pair of fields, so its grid collapses to
    /// the observation count.
    pub fn effective_grid(&self, config: &ExperimentConfig) -> Vec<usize> {
        match &self.data {
            TaskData::Diffusion { observations, .. } => vec![observations.len()],
            _ => config.n_target_grid.clone(),
        }
    }

    fn cell_streams(&self, n_target: usize) -> StrategyStreams {
        StrategyStreams {
            shuffle: Pcg64::for_purpose(
                self.seed,
                &[self.task_label, labels::TARGET_SHUFFLE, n_target as u64],
            ),
            calibrate_init: Pcg64::for_purpose(
                self.seed,
                &[self.task_label, labels::CALIBRATE_INIT, n_target as u64],
            ),
            target_init_seed: Pcg64::for_purpose(
                self.seed,
                &[self.task_label, labels::TARGET_INIT, n_target as u64],
            )
            .next_u64(),
        }
    }

    /// Runs one strategy cell and evaluates its metrics.
    pub fn run_cell(&self, strategy: StrategyKind, n_target: usize) -> Result<CellOutcome> {
        let hp = StrategyHyper {
            lambda: self.lambda,
            learning_rate: self.budgets.learning_rate,
            batch_size: self.budgets.target_batch,
            epochs: self.budgets.target_epochs,
        };
        let mut streams = self.cell_streams(n_target);
        match &self.data {
            TaskData::Friedman {
                target_pool,
                target_test,
                ..
            } => {
                if n_target == 0 || n_target > target_pool.len() {
                    return Err(Error::InvalidConfig(format!(
                        "n_target {n_target} outside the target pool (1..={})",
                        target_pool.len()
                    )));
                }
                let mut target_obj = target_pool.head(n_target);
                let out = run_strategy(strategy, &hp, &self.artifacts, &mut target_obj, &mut streams)?;
                let mut probe: Network<f64> = Network::build(self.artifacts.spec.clone())?;
                probe.load(&out.weights)?;
                let rmse = target_test.rmse(&probe)?;
                Ok(CellOutcome {
                    weights: out.weights,
                    metrics: vec![("rmse".into(), rmse)],
                    flag: if rmse.is_finite() { String::new() } else { "divergent".into() },
                })
            }
            TaskData::Duffing {
                noisy_pairs_source,
                eval_truth,
                ..
            } => {
                let mut target_obj =
                    duffing_task::transition_pairs(noisy_pairs_source, n_target, NODE_SUBSTEPS);
                if target_obj.num_pairs() < n_target {
                    return Err(Error::InvalidConfig(format!(
                        "n_target {n_target} exceeds available pairs {}",
                        target_obj.num_pairs()
                    )));
                }
                let out = run_strategy(strategy, &hp, &self.artifacts, &mut target_obj, &mut streams)?;
                let mut probe: Network<f64> = Network::build(self.artifacts.spec.clone())?;
                probe.load(&out.weights)?;
                let (rmse, diverged) =
                    duffing_task::rollout_rmse(&NetField { net: &probe }, eval_truth, (1.0, 10.0));
                Ok(CellOutcome {
                    weights: out.weights,
                    metrics: vec![("rmse".into(), rmse)],
                    flag: if diverged { "divergent".into() } else { String::new() },
                })
            }
            TaskData::Diffusion {
                observations,
                eval_fields,
            } => {
                let mut target_obj = observations.clone();
                let out = run_strategy(strategy, &hp, &self.artifacts, &mut target_obj, &mut streams)?;
                let mut probe: Network<f64> = Network::build(self.artifacts.spec.clone())?;
                probe.load(&out.weights)?;
                let mut metrics = Vec::new();
                let mut sum = 0.0;
                for f in eval_fields {
                    let r = diffusion::rmse_at(&probe, f);
                    metrics.push((format!("rmse_t{}", f.time), r));
                    sum += r;
                }
                let avg = sum / eval_fields.len() as f64;
                metrics.push(("rmse_avg".into(), avg));
                Ok(CellOutcome {
                    weights: out.weights,
                    metrics,
                    flag: if avg.is_finite() { String::new() } else { "divergent".into() },
                })
            }
        }
    }
}

fn needs(config: &ExperimentConfig, f: impl Fn(&StrategyKind) -> bool) -> bool {
    config.strategies.iter().any(f)
}

/// Pre-trains the source model and computes the shared artifacts the
/// selected strategies require.
fn finish_artifacts<O: Objective<f64>>(
    config: &ExperimentConfig,
    seed: u64,
    task_label: u64,
    spec: NetworkSpec,
    source_obj: &mut O,
) -> Result<(SourceArtifacts<f64>, f64)> {
    let budgets = config.budgets;
    let mut net: Network<f64> = Network::build(spec.clone())?;
    let mut shuffle = Pcg64::for_purpose(seed, &[task_label, labels::SOURCE_SHUFFLE]);
    let cfg = TrainConfig::new(
        budgets.pretrain_epochs,
        budgets.source_batch,
        budgets.learning_rate,
    );
    let log = train(&mut net, source_obj, &cfg, &mut shuffle).map_err(|e| Error::Divergence {
        phase: "source pretraining",
        detail: e.to_string(),
    })?;
    let pretrained = net.flatten();

    let mut artifacts = SourceArtifacts::bare(spec.clone());
    artifacts.pretrained = Some(pretrained.clone());

    if needs(config, |s| s.needs_mask()) {
        let mask = prune(&pretrained, config.prune_ratio)?;
        if needs(config, |s| s.needs_allocation()) {
            let mut alloc_net: Network<f64> = Network::build(spec.clone())?;
            alloc_net.load(&pretrained)?;
            let mut alloc_shuffle =
                Pcg64::for_purpose(seed, &[task_label, labels::SOURCE_SHUFFLE, 0xA110C]);
            let alloc_cfg = TrainConfig::new(
                budgets.allocate_epochs,
                budgets.source_batch,
                budgets.learning_rate,
            );
            let allocated = allocate(&mut alloc_net, &mask, source_obj, &alloc_cfg, &mut alloc_shuffle)?;
            if needs(config, |s| s.needs_allocated_fisher()) {
                let mut fisher_net: Network<f64> = Network::build(spec.clone())?;
                fisher_net.load(&allocated)?;
                artifacts.fisher_allocated = Some(fisher_diag(&fisher_net, source_obj)?);
            }
            artifacts.allocated = Some(allocated);
        }
        artifacts.mask = Some(mask);
    }
    if needs(config, |s| s.needs_source_fisher()) {
        let mut fisher_net: Network<f64> = Network::build(spec.clone())?;
        fisher_net.load(&pretrained)?;
        artifacts.fisher_source = Some(fisher_diag(&fisher_net, source_obj)?);
    }
    Ok((artifacts, log.final_loss))
}

fn build_friedman(
    config: &ExperimentConfig,
    seed: u64,
    d: f64,
    noise_std: f64,
) -> Result<SeedContext> {
    let task_label = labels::TASK_FRIEDMAN;
    let mut src_stream = Pcg64::for_purpose(seed, &[task_label, labels::SOURCE_DATA]);
    let mut tgt_stream = Pcg64::for_purpose(seed, &[task_label, labels::TARGET_DATA]);

    let source_params = FriedmanParams::source();
    let target_params = FriedmanParams::target(d, noise_std);
    let clean_target = FriedmanParams::target(d, 0.0);

    let mut source_train = friedman::sample(10_000, &source_params, &mut src_stream);
    // The pool order is the draw order; nested subsets come from `head`.
    let target_pool = friedman::sample(10_000, &target_params, &mut tgt_stream);
    // Held-out evaluation against the noiseless labels.
    let target_test = friedman::sample(10_000, &clean_target, &mut tgt_stream);

    let init_seed = Pcg64::for_purpose(seed, &[task_label, labels::SOURCE_INIT]).next_u64();
    let spec = NetworkSpec::new(
        friedman::NUM_FEATURES,
        vec![(200, Activation::Relu), (200, Activation::Relu)],
        1,
        init_seed,
    );
    let (artifacts, pretrain_final_loss) =
        finish_artifacts(config, seed, task_label, spec, &mut source_train)?;
    Ok(SeedContext {
        seed,
        task_label,
        budgets: config.budgets,
        lambda: config.lambda,
        artifacts,
        data: TaskData::Friedman {
            target_pool,
            target_test,
        },
        pretrain_final_loss,
    })
}

fn build_duffing(
    config: &ExperimentConfig,
    seed: u64,
    system: duffing_task::SystemKind,
) -> Result<SeedContext> {
    let task_label = labels::TASK_DUFFING;
    let mut src_stream = Pcg64::for_purpose(seed, &[task_label, labels::SOURCE_DATA]);
    let mut tgt_stream = Pcg64::for_purpose(seed, &[task_label, labels::TARGET_DATA]);

    let source_field = system.source();
    let target_field = system.target();
    let source_trajs = duffing_task::generate(&source_field, 100, 0.0, &mut src_stream)?;
    let mut source_pairs = duffing_task::transition_pairs(&source_trajs, 0, NODE_SUBSTEPS);

    // Clean truth for evaluation; the noisy copy feeds training.
    let (eval_truth, noisy) =
        duffing_task::generate_paired(&target_field, 10, duffing_task::NOISE_AMP, &mut tgt_stream)?;

    let init_seed = Pcg64::for_purpose(seed, &[task_label, labels::SOURCE_INIT]).next_u64();
    let spec = NetworkSpec::new(
        2,
        vec![
            (64, Activation::Tanh),
            (64, Activation::Tanh),
            (64, Activation::Tanh),
        ],
        2,
        init_seed,
    );
    let (artifacts, pretrain_final_loss) =
        finish_artifacts(config, seed, task_label, spec, &mut source_pairs)?;
    Ok(SeedContext {
        seed,
        task_label,
        budgets: config.budgets,
        lambda: config.lambda,
        artifacts,
        data: TaskData::Duffing {
            noisy_pairs_source: noisy,
            eval_truth,
        },
        pretrain_final_loss,
    })
}

fn build_diffusion(
    config: &ExperimentConfig,
    seed: u64,
    nu_source: f64,
    nu_target: f64,
) -> Result<SeedContext> {
    let task_label = labels::TASK_DIFFUSION;
    let colloc_stream = Pcg64::for_purpose(seed, &[task_label, labels::COLLOCATION]);
    let mut source_obj = PinnSourceObjective::new(nu_source, PinnSampling::default(), colloc_stream);

    let mut times = vec![0.0];
    times.extend_from_slice(&diffusion::EVAL_TIMES);
    let fields = diffusion::fd_solve(nu_target, 101, &times)?;
    let observed = [fields[0].clone(), fields[fields.len() - 1].clone()];
    let observations = diffusion::observations(&observed);
    let eval_fields: Vec<FieldGrid> = fields
        .iter()
        .filter(|f| f.time > 0.0)
        .cloned()
        .collect();

    let init_seed = Pcg64::for_purpose(seed, &[task_label, labels::SOURCE_INIT]).next_u64();
    let spec = NetworkSpec::new(
        3,
        vec![
            (64, Activation::Swish),
            (64, Activation::Swish),
            (64, Activation::Swish),
            (64, Activation::Swish),
        ],
        1,
        init_seed,
    );
    let (artifacts, pretrain_final_loss) =
        finish_artifacts(config, seed, task_label, spec, &mut source_obj)?;
    Ok(SeedContext {
        seed,
        task_label,
        budgets: config.budgets,
        lambda: config.lambda,
        artifacts,
        data: TaskData::Diffusion {
            observations,
            eval_fields,
        },
        pretrain_final_loss,
    })
}

/// All records of one seed. A context build failure flags every cell of the
/// seed; a cell failure flags that cell only.
pub(crate) fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<Vec<ExperimentRecord>> {
    let task_name = config.task.name().to_string();
    let param = config.task.param_label();
    let mut records = Vec::new();

    let built = Instant::now();
    let ctx = match SeedContext::build(config, seed) {
        Ok(ctx) => ctx,
        Err(e) => {
            let wall = built.elapsed().as_millis();
            for &strategy in &config.strategies {
                for &n in &config.n_target_grid {
                    records.push(ExperimentRecord {
                        task: task_name.clone(),
                        strategy: strategy.name().into(),
                        param: param.clone(),
                        n_target: n,
                        seed,
                        metric: "rmse".into(),
                        value: f64::INFINITY,
                        flag: format!("error: {e}"),
                        wall_ms: wall,
                    });
                }
            }
            return Ok(records);
        }
    };

    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{task_name}_seed{seed}_source.ckpt"));
        if let Some(pre) = &ctx.artifacts.pretrained {
            crate::checkpoint::save(&path, &ctx.artifacts.spec, pre, ctx.artifacts.mask.as_ref())?;
        }
    }

    for &strategy in &config.strategies {
        for &n in &ctx.effective_grid(config) {
            let t0 = Instant::now();
            match ctx.run_cell(strategy, n) {
                Ok(cell) => {
                    let wall = t0.elapsed().as_millis();
                    for (metric, value) in cell.metrics {
                        records.push(ExperimentRecord {
                            task: task_name.clone(),
                            strategy: strategy.name().into(),
                            param: param.clone(),
                            n_target: n,
                            seed,
                            metric,
                            value,
                            flag: cell.flag.clone(),
                            wall_ms: wall,
                        });
                    }
                }
                Err(e) => {
                    records.push(ExperimentRecord {
                        task: task_name.clone(),
                        strategy: strategy.name().into(),
                        param: param.clone(),
                        n_target: n,
                        seed,
                        metric: "rmse".into(),
                        value: f64::INFINITY,
                        flag: format!("error: {e}"),
                        wall_ms: t0.elapsed().as_millis(),
                    });
                }
            }
        }
    }
    Ok(records)
}
