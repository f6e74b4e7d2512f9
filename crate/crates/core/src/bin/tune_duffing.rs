// Budget tuning probe for the Duffing task.
use pacnet::harness::{Budgets, ExperimentConfig, SeedContext, TaskSpec};
use pacnet::nn::Network;
use pacnet::ode::{Duffing, NetField};
use pacnet::tasks::duffing::{energy_drift, SystemKind};
use pacnet::transfer::StrategyKind;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let pretrain: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let mut cfg = ExperimentConfig::new(TaskSpec::Duffing {
        system: SystemKind::Linear,
    });
    cfg.strategies = vec![StrategyKind::TargetOnly, StrategyKind::PacNet];
    cfg.budgets = Budgets {
        pretrain_epochs: pretrain,
        allocate_epochs: pretrain,
        target_epochs: 0,
        source_batch: 512,
        target_batch: 512,
        learning_rate: 1e-4,
    };
    let t0 = Instant::now();
    println!("building context (pretrain {pretrain} + allocate {pretrain})...");
    let mut ctx = SeedContext::build(&cfg, 0).unwrap();
    println!(
        "context built in {:.0}s, pretrain final loss {:.3e}",
        t0.elapsed().as_secs_f64(),
        ctx.pretrain_final_loss
    );

    // Criterion-12 probe: energy drift of the allocated source model.
    let art = ctx.artifacts();
    let source_ref = Duffing {
        alpha: 1.0,
        beta: 0.0,
        gamma: 0.0,
    };
    let mut probe: Network<f64> = Network::build(art.spec.clone()).unwrap();
    probe.load(art.pretrained.as_ref().unwrap()).unwrap();
    let d_pre = energy_drift(&NetField { net: &probe }, &source_ref, [0.5, 0.0]).unwrap();
    probe.load(art.allocated.as_ref().unwrap()).unwrap();
    let d_alloc = energy_drift(&NetField { net: &probe }, &source_ref, [0.5, 0.0]).unwrap();
    println!("energy drift over 10s: pretrained {d_pre:.2e}, allocated {d_alloc:.2e}");

    for &epochs in &[1000usize, 2000, 3000] {
        ctx.set_target_epochs(epochs);
        for &s in &[StrategyKind::TargetOnly, StrategyKind::PacNet] {
            for &n in &[10usize, 30, 100] {
                let t1 = Instant::now();
                let cell = ctx.run_cell(s, n).unwrap();
                println!(
                    "epochs {epochs:5} {:<12} n={n:<4} rmse {:>8.4} {} ({:.0}s)",
                    s.name(),
                    cell.metrics[0].1,
                    cell.flag,
                    t1.elapsed().as_secs_f64()
                );
            }
        }
    }
}
