// Budget tuning probe for the Friedman task: target-phase convergence.
use pacnet::harness::{Budgets, ExperimentConfig, SeedContext, TaskSpec};
use pacnet::transfer::StrategyKind;
use std::time::Instant;

fn main() {
    let mut cfg = ExperimentConfig::new(TaskSpec::Friedman { d: 1.0, noise_std: 1.0 });
    cfg.strategies = vec![
        StrategyKind::TargetOnly,
        StrategyKind::FineTuning,
        StrategyKind::PacNet,
        StrategyKind::PacNetNoL2,
        StrategyKind::PcNet,
    ];
    cfg.budgets = Budgets {
        pretrain_epochs: 200,
        allocate_epochs: 200,
        target_epochs: 0,
        source_batch: 128,
        target_batch: 128,
        learning_rate: 1e-4,
    };
    let t0 = Instant::now();
    println!("building context (pretrain + allocate)...");
    let mut ctx = SeedContext::build(&cfg, 0).unwrap();
    println!("context built in {:.0}s", t0.elapsed().as_secs_f64());

    for &epochs in &[2000usize, 5000, 10000, 20000] {
        ctx.set_target_epochs(epochs);
        for &s in &cfg.strategies {
            for &n in &[10usize, 100] {
                let t1 = Instant::now();
                let cell = ctx.run_cell(s, n).unwrap();
                println!(
                    "steps {epochs:6} {:<14} n={n:<4} rmse {:>8.3}  ({:.0}s)",
                    s.name(),
                    cell.metrics[0].1,
                    t1.elapsed().as_secs_f64()
                );
            }
        }
    }
}
