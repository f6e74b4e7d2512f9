// Throwaway throughput probe for sizing training budgets.
use pacnet::autodiff::{mse_loss_grad, residual_loss_grad, HeatResidual};
use pacnet::nn::{Activation, Network, NetworkSpec};
use pacnet::rng::Pcg64;
use std::time::Instant;

fn main() {
    // Friedman-style step: 2x200 relu, batch 128.
    let net: Network<f64> = Network::build(NetworkSpec::new(
        10,
        vec![(200, Activation::Relu), (200, Activation::Relu)],
        1,
        0,
    ))
    .unwrap();
    let mut rng = Pcg64::new(0, 0);
    let n = 128;
    let inputs: Vec<f64> = (0..n * 10).map(|_| rng.next_f64()).collect();
    let targets: Vec<f64> = (0..n).map(|_| rng.next_f64() * 10.0).collect();
    let t0 = Instant::now();
    let reps = 200;
    for _ in 0..reps {
        let _ = mse_loss_grad(&net, &inputs, &targets, n).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    println!("friedman step (2x200, batch 128): {:.3} ms -> {:.0} steps/s", dt * 1e3, 1.0 / dt);

    // Duffing-style field eval: 3x64 tanh, batch 512 (one RK4 stage is 1 fwd+bwd).
    let net2: Network<f64> = Network::build(NetworkSpec::new(
        2,
        vec![
            (64, Activation::Tanh),
            (64, Activation::Tanh),
            (64, Activation::Tanh),
        ],
        2,
        0,
    ))
    .unwrap();
    let n2 = 512;
    let inputs2: Vec<f64> = (0..n2 * 2).map(|_| rng.next_f64()).collect();
    let targets2: Vec<f64> = (0..n2 * 2).map(|_| rng.next_f64()).collect();
    let t0 = Instant::now();
    let reps = 200;
    for _ in 0..reps {
        let _ = mse_loss_grad(&net2, &inputs2, &targets2, n2).unwrap();
    }
    let dt2 = t0.elapsed().as_secs_f64() / reps as f64;
    println!("duffing eval (3x64, batch 512): {:.3} ms", dt2 * 1e3);

    // PINN residual step: 4x64 swish, 32 collocation points.
    let net3: Network<f64> = Network::build(NetworkSpec::new(
        3,
        vec![
            (64, Activation::Swish),
            (64, Activation::Swish),
            (64, Activation::Swish),
            (64, Activation::Swish),
        ],
        1,
        0,
    ))
    .unwrap();
    let n3 = 32;
    let pts: Vec<f64> = (0..n3 * 3).map(|_| rng.next_f64()).collect();
    let form = HeatResidual { diffusivity: 0.01 };
    let t0 = Instant::now();
    let reps = 200;
    for _ in 0..reps {
        let _ = residual_loss_grad(&net3, &form, &pts, n3).unwrap();
    }
    let dt3 = t0.elapsed().as_secs_f64() / reps as f64;
    println!("pinn residual step (4x64, batch 32): {:.3} ms", dt3 * 1e3);
}
