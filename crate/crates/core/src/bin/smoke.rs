// Temporary wiring smoke test.
use pacnet::harness::{run, ExperimentConfig, TaskSpec, Budgets};
use pacnet::transfer::StrategyKind;

fn main() {
    let mut cfg = ExperimentConfig::new(TaskSpec::Friedman { d: 1.0, noise_std: 1.0 });
    cfg.strategies = vec![StrategyKind::TargetOnly, StrategyKind::FineTuning, StrategyKind::PacNet];
    cfg.n_target_grid = vec![10, 50];
    cfg.seeds = vec![0, 1];
    cfg.budgets = Budgets { pretrain_epochs: 2, allocate_epochs: 2, target_epochs: 20, source_batch: 128, target_batch: 128, learning_rate: 1e-4 };
    let t0 = std::time::Instant::now();
    let records = run(&cfg).unwrap();
    println!("friedman: {} records in {:.1}s", records.len(), t0.elapsed().as_secs_f64());
    for r in &records { println!("  {} n={} seed={} {}={:.3} {}", r.strategy, r.n_target, r.seed, r.metric, r.value, r.flag); }

    let mut cfg = ExperimentConfig::new(TaskSpec::Duffing { system: pacnet::tasks::duffing::SystemKind::Linear });
    cfg.strategies = vec![StrategyKind::TargetOnly, StrategyKind::PacNet];
    cfg.n_target_grid = vec![10];
    cfg.seeds = vec![0];
    cfg.budgets = Budgets { pretrain_epochs: 2, allocate_epochs: 2, target_epochs: 10, source_batch: 512, target_batch: 512, learning_rate: 1e-4 };
    let t0 = std::time::Instant::now();
    let records = run(&cfg).unwrap();
    println!("duffing: {} records in {:.1}s", records.len(), t0.elapsed().as_secs_f64());
    for r in &records { println!("  {} n={} seed={} {}={:.3} {}", r.strategy, r.n_target, r.seed, r.metric, r.value, r.flag); }

    let mut cfg = ExperimentConfig::new(TaskSpec::Diffusion { nu_source: 0.01, nu_target: 0.1 });
    cfg.strategies = vec![StrategyKind::FineTuning, StrategyKind::PacNet];
    cfg.seeds = vec![0];
    cfg.budgets = Budgets { pretrain_epochs: 1, allocate_epochs: 1, target_epochs: 1, source_batch: 32, target_batch: 32, learning_rate: 1e-4 };
    let t0 = std::time::Instant::now();
    let records = run(&cfg).unwrap();
    println!("diffusion: {} records in {:.1}s", records.len(), t0.elapsed().as_secs_f64());
    for r in &records { println!("  {} n={} seed={} {}={:.3} {}", r.strategy, r.n_target, r.seed, r.metric, r.value, r.flag); }
}
