//! Runtime invariant suite.
//!
//! Each check re-derives an expected value from an independent route
//! (finite differences, closed forms, exhaustive counting) and compares the
//! production path against it. The suite backs the `props` CLI subcommand
//! and the acceptance tests; every check is deterministic.

use crate::autodiff::{
    forward, forward_batch, input_jet, mse_loss, mse_loss_grad, pde_jets, residual_loss,
    residual_loss_grad, HeatResidual, PdeJets,
};
use crate::nn::{Activation, Layout, LayoutEntry, Network, NetworkSpec, ParamKind, ParamVector};
use crate::ode::{dopri5, node_fit_grad, rk4, Dopri5Options, Duffing, TransitionObjective};
use crate::optim::{train, Objective, TrainConfig};
use crate::rng::Pcg64;
use crate::tasks::diffusion::{fd_solve, self_convergence_orders};
use crate::tasks::TabularObjective;
use crate::transfer::{
    allocate, calibrate, prune, run_strategy, CalibratePenalty, InitMode, SourceArtifacts,
    StrategyHyper, StrategyKind, StrategyStreams,
};

pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn from(name: &'static str, r: Result<String, String>) -> CheckOutcome {
        match r {
            Ok(detail) => CheckOutcome {
                name,
                passed: true,
                detail,
            },
            Err(detail) => CheckOutcome {
                name,
                passed: false,
                detail,
            },
        }
    }
}

/// Runs the whole suite.
pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        CheckOutcome::from("mask_exactness", mask_exactness()),
        CheckOutcome::from("hard_constraint_preservation", hard_constraint_preservation()),
        CheckOutcome::from("gradient_correctness", gradient_correctness()),
        CheckOutcome::from("jet_correctness", jet_correctness()),
        CheckOutcome::from("solver_correctness", solver_correctness()),
        CheckOutcome::from("fd_oracle", fd_oracle()),
        CheckOutcome::from("degeneracies", degeneracies()),
    ]
}

fn weights_only_vector(data: Vec<f64>) -> ParamVector<f64> {
    let len = data.len();
    ParamVector {
        data,
        layout: Layout {
            entries: vec![LayoutEntry {
                layer: 0,
                kind: ParamKind::Weight,
                shape: (1, len),
                offset: 0,
                len,
            }],
            total_len: len,
        },
    }
}

fn toy_objective(net: &Network<f64>, n: usize, seed: u64) -> TabularObjective {
    let mut rng = Pcg64::new(seed, 0xDA7A);
    TabularObjective {
        inputs: (0..n * net.input_width())
            .map(|_| rng.uniform(-1.0, 1.0))
            .collect(),
        targets: (0..n * net.output_width())
            .map(|_| rng.uniform(-1.0, 1.0))
            .collect(),
        in_width: net.input_width(),
        out_width: net.output_width(),
    }
}

// ---------------------------------------------------------------------------
// 1. Mask exactness
// ---------------------------------------------------------------------------

fn mask_exactness() -> Result<String, String> {
    let mut rng = Pcg64::new(0xC0FFEE, 1);
    // 100 random (D, ratio) pairs on weight-only layouts: popcount == K.
    for case in 0..100 {
        let d = 1 + rng.below(4000);
        let ratio = rng.uniform(0.0, 0.999);
        let data: Vec<f64> = (0..d).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let v = weights_only_vector(data);
        let mask = prune(&v, ratio).map_err(|e| e.to_string())?;
        let k = ((1.0 - ratio) * d as f64).round() as usize;
        if mask.popcount() != k || mask.kept_weights() != k {
            return Err(format!(
                "case {case}: D={d} ratio={ratio:.4}: popcount {} != K {k}",
                mask.popcount()
            ));
        }
    }
    // Constructed tie cases: lowest flat index wins.
    let v = weights_only_vector(vec![0.5, 0.5]);
    let mask = prune(&v, 0.5).map_err(|e| e.to_string())?;
    if mask.bits() != [true, false] {
        return Err(format!("tie case [0.5, 0.5]: got {:?}", mask.bits()));
    }
    let v = weights_only_vector(vec![1.0, 1.0, 1.0, 1.0]);
    let mask = prune(&v, 0.5).map_err(|e| e.to_string())?;
    if mask.bits() != [true, true, false, false] {
        return Err(format!("tie case all-ones: got {:?}", mask.bits()));
    }
    let v = weights_only_vector(vec![0.9, -0.1, 0.4, -0.7]);
    let mask = prune(&v, 0.5).map_err(|e| e.to_string())?;
    if mask.bits() != [true, false, false, true] {
        return Err(format!("magnitude case: got {:?}", mask.bits()));
    }
    // Network layouts: biases always kept, weight count exact.
    for case in 0..20 {
        let spec = NetworkSpec::new(
            1 + rng.below(6),
            vec![(1 + rng.below(24), Activation::Tanh)],
            1 + rng.below(3),
            rng.next_u64(),
        );
        let net: Network<f64> = Network::build(spec).map_err(|e| e.to_string())?;
        let ratio = rng.uniform(0.0, 0.999);
        let mask = prune(&net.flatten(), ratio).map_err(|e| e.to_string())?;
        let n_weights: usize = net
            .layout()
            .entries
            .iter()
            .filter(|e| e.kind == ParamKind::Weight)
            .map(|e| e.len)
            .sum();
        let n_bias = net.num_params() - n_weights;
        let k = ((1.0 - ratio) * n_weights as f64).round() as usize;
        if mask.popcount() != k + n_bias {
            return Err(format!("net case {case}: popcount off"));
        }
        for (bit, bias) in mask.bits().iter().zip(net.layout().is_bias()) {
            if bias && !bit {
                return Err(format!("net case {case}: pruned a bias"));
            }
        }
    }
    Ok("100 random (D, ratio) pairs + tie cases + 20 network layouts".into())
}

// ---------------------------------------------------------------------------
// 2. Hard-constraint preservation
// ---------------------------------------------------------------------------

fn hard_constraint_preservation() -> Result<String, String> {
    let spec = NetworkSpec::new(3, vec![(16, Activation::Tanh), (16, Activation::Tanh)], 1, 7);
    let mut net: Network<f64> = Network::build(spec.clone()).map_err(|e| e.to_string())?;
    let mut source = toy_objective(&net, 64, 1);
    let mask = prune(&net.flatten(), 0.7).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::new(10, 16, 1e-3);
    let mut shuffle = Pcg64::new(2, 2);
    let allocated = allocate(&mut net, &mask, &mut source, &cfg, &mut shuffle)
        .map_err(|e| e.to_string())?;

    let mut target = toy_objective(&net, 32, 3);
    let mut cal_net: Network<f64> = Network::build(spec.clone()).map_err(|e| e.to_string())?;
    let mut s1 = Pcg64::new(3, 3);
    let mut s2 = Pcg64::new(4, 4);
    let (calibrated, _) = calibrate(
        &mut cal_net,
        &mask,
        &allocated,
        &mut target,
        0.01,
        InitMode::Zero,
        CalibratePenalty::L2Zero,
        &TrainConfig::new(25, 8, 1e-2),
        &mut s1,
        &mut s2,
    )
    .map_err(|e| e.to_string())?;

    for i in 0..calibrated.len() {
        if mask.bits()[i] && calibrated.data[i].to_bits() != allocated.data[i].to_bits() {
            return Err(format!("kept coordinate {i} moved during calibration"));
        }
    }
    // Substituting zero free coordinates reproduces the allocated model.
    let mut substituted = calibrated.clone();
    mask.apply(&mut substituted.data);
    let mut probe: Network<f64> = Network::build(spec.clone()).map_err(|e| e.to_string())?;
    let mut probe2: Network<f64> = Network::build(spec).map_err(|e| e.to_string())?;
    probe.load(&substituted).map_err(|e| e.to_string())?;
    probe2.load(&allocated).map_err(|e| e.to_string())?;
    let mut rng = Pcg64::new(5, 5);
    for _ in 0..16 {
        let x: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let a = forward(&probe, &x).map_err(|e| e.to_string())?;
        let b = forward(&probe2, &x).map_err(|e| e.to_string())?;
        if a[0].to_bits() != b[0].to_bits() {
            return Err("zero-substituted outputs differ from allocated model".into());
        }
    }
    Ok("kept coordinates bit-identical; zero substitution reproduces source outputs".into())
}

// ---------------------------------------------------------------------------
// 3. Gradient correctness
// ---------------------------------------------------------------------------

fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn gradient_correctness() -> Result<String, String> {
    // Parameter gradients per activation, against central finite differences.
    for (act, tol) in [
        (Activation::Relu, 1e-6),
        (Activation::Tanh, 1e-6),
        (Activation::Swish, 1e-6),
        (Activation::Linear, 1e-6),
    ] {
        let spec = NetworkSpec::new(3, vec![(24, act), (16, act)], 2, 11);
        let net: Network<f64> = Network::build(spec).map_err(|e| e.to_string())?;
        let mut rng = Pcg64::new(12, 12);
        let n = 8;
        let inputs: Vec<f64> = (0..n * 3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let targets: Vec<f64> = (0..n * 2).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (_, grad) = mse_loss_grad(&net, &inputs, &targets, n).map_err(|e| e.to_string())?;
        let base = net.flatten();
        let mut probe = net.clone();
        let h = 1e-5;
        let mut fd = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let mut vp = base.clone();
            vp.data[i] += h;
            probe.load(&vp).map_err(|e| e.to_string())?;
            let lp = mse_loss(&probe, &inputs, &targets, n).map_err(|e| e.to_string())?;
            let mut vm = base.clone();
            vm.data[i] -= h;
            probe.load(&vm).map_err(|e| e.to_string())?;
            let lm = mse_loss(&probe, &inputs, &targets, n).map_err(|e| e.to_string())?;
            fd.push((lp - lm) / (2.0 * h));
        }
        let err = max_rel_err(&grad.entries, &fd, 1e-6);
        if err > tol {
            return Err(format!("param_grad {act:?}: rel err {err:.2e} > {tol:.0e}"));
        }
    }

    // PDE residual gradient.
    {
        let spec = NetworkSpec::new(3, vec![(12, Activation::Swish), (12, Activation::Swish)], 1, 13);
        let net: Network<f64> = Network::build(spec).map_err(|e| e.to_string())?;
        let form = HeatResidual { diffusivity: 0.05 };
        let mut rng = Pcg64::new(13, 13);
        let n = 4;
        let points: Vec<f64> = (0..n * 3).map(|_| rng.uniform(0.1, 1.0)).collect();
        let (_, grad) = residual_loss_grad(&net, &form, &points, n).map_err(|e| e.to_string())?;
        let base = net.flatten();
        let mut probe = net.clone();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..base.len() {
            let eval = |probe: &Network<f64>| -> f64 {
                let jets: Vec<PdeJets<f64>> = (0..n)
                    .map(|s| {
                        pde_jets(probe, [points[3 * s], points[3 * s + 1], points[3 * s + 2]])
                            .expect("jets")
                    })
                    .collect();
                residual_loss(&form, jets)
            };
            let mut vp = base.clone();
            vp.data[i] += h;
            probe.load(&vp).map_err(|e| e.to_string())?;
            let lp = eval(&probe);
            let mut vm = base.clone();
            vm.data[i] -= h;
            probe.load(&vm).map_err(|e| e.to_string())?;
            let lm = eval(&probe);
            let fd = (lp - lm) / (2.0 * h);
            let g = grad.entries[i];
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-7));
        }
        if worst > 1e-5 {
            return Err(format!("residual_param_grad: rel err {worst:.2e} > 1e-5"));
        }
    }

    // Gradient through the unrolled ODE solver.
    {
        let spec = NetworkSpec::new(2, vec![(12, Activation::Tanh), (12, Activation::Tanh)], 2, 14);
        let net: Network<f64> = Network::build(spec).map_err(|e| e.to_string())?;
        let mut rng = Pcg64::new(14, 14);
        let n = 4;
        let y0s: Vec<f64> = (0..n * 2).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let y1s: Vec<f64> = (0..n * 2).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (_, grad) = node_fit_grad(&net, &y0s, &y1s, n, 0.1, 2).map_err(|e| e.to_string())?;
        let mut obj = TransitionObjective {
            y0s: y0s.clone(),
            y1s: y1s.clone(),
            dim: 2,
            dt: 0.1,
            n_substeps: 2,
        };
        let idx: Vec<usize> = (0..n).collect();
        let base = net.flatten();
        let mut probe = net.clone();
        let h = 1e-6;
        let mut worst = 0.0f64;
        for i in 0..base.len() {
            let mut vp = base.clone();
            vp.data[i] += h;
            probe.load(&vp).map_err(|e| e.to_string())?;
            let (lp, _) = obj.loss_grad(&probe, &idx).map_err(|e| e.to_string())?;
            let mut vm = base.clone();
            vm.data[i] -= h;
            probe.load(&vm).map_err(|e| e.to_string())?;
            let (lm, _) = obj.loss_grad(&probe, &idx).map_err(|e| e.to_string())?;
            let fd = (lp - lm) / (2.0 * h);
            let g = grad.entries[i];
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-7));
        }
        if worst > 1e-5 {
            return Err(format!("node_fit_grad: rel err {worst:.2e} > 1e-5"));
        }
    }
    Ok("param_grad (relu/tanh/swish/linear) <= 1e-6; residual and solver grads <= 1e-5".into())
}

// ---------------------------------------------------------------------------
// 4. Jet correctness
// ---------------------------------------------------------------------------

fn jet_correctness() -> Result<String, String> {
    for act in [Activation::Swish, Activation::Tanh] {
        let spec = NetworkSpec::new(
            2,
            vec![(32, act); 6],
            1,
            15,
        );
        let net: Network<f64> = Network::build(spec).map_err(|e| e.to_string())?;
        let h = 1e-4;
        let base = [0.35, -0.55];
        for axis in 0..2 {
            let jet = input_jet(&net, &base, axis).map_err(|e| e.to_string())?;
            let mut up = base;
            up[axis] += h;
            let mut dn = base;
            dn[axis] -= h;
            let fp = forward(&net, &up).map_err(|e| e.to_string())?[0];
            let fm = forward(&net, &dn).map_err(|e| e.to_string())?[0];
            let f0 = forward(&net, &base).map_err(|e| e.to_string())?[0];
            let fd1 = (fp - fm) / (2.0 * h);
            let fd2 = (fp - 2.0 * f0 + fm) / (h * h);
            let rel1 = (jet.d1 - fd1).abs() / jet.d1.abs().max(fd1.abs()).max(1e-8);
            let rel2 = (jet.d2 - fd2).abs() / jet.d2.abs().max(fd2.abs()).max(1e-8);
            if rel1 > 1e-5 || rel2 > 1e-5 {
                return Err(format!(
                    "{act:?} axis {axis}: d1 rel {rel1:.2e}, d2 rel {rel2:.2e}"
                ));
            }
        }
    }
    Ok("jet d1/d2 vs finite differences <= 1e-5 on 6x32 swish and tanh nets".into())
}

// ---------------------------------------------------------------------------
// 5. Solver correctness
// ---------------------------------------------------------------------------

fn solver_correctness() -> Result<String, String> {
    let harmonic = Duffing {
        alpha: 1.0,
        beta: 0.0,
        gamma: 0.0,
    };
    let grid = |t1: f64, h: f64| -> Vec<f64> {
        let n = (t1 / h).round() as usize;
        (0..=n).map(|i| t1 * i as f64 / n as f64).collect()
    };

    // RK4 vs closed form over 10 s.
    let t = grid(10.0, 0.001);
    let traj = rk4(&harmonic, &[1.0, 0.0], &t).map_err(|e| e.to_string())?;
    let mut max_err = 0.0f64;
    for (i, &ti) in traj.times.iter().enumerate() {
        let s = traj.state(i);
        max_err = max_err
            .max((s[0] - ti.cos()).abs())
            .max((s[1] + ti.sin()).abs());
    }
    if max_err > 1e-6 {
        return Err(format!("rk4 harmonic error {max_err:.2e} > 1e-6"));
    }

    // Empirical order.
    let err_at = |h: f64| -> f64 {
        let t = grid(1.0, h);
        let traj = rk4(&harmonic, &[1.0, 0.0], &t).expect("rk4");
        let last = traj.state(traj.len() - 1);
        ((last[0] - 1.0f64.cos()).powi(2) + (last[1] + 1.0f64.sin()).powi(2)).sqrt()
    };
    let order = (err_at(0.02) / err_at(0.01)).log2();
    if !(3.8..=4.2).contains(&order) {
        return Err(format!("rk4 empirical order {order:.3} outside [3.8, 4.2]"));
    }

    // Adaptive solver vs closed form and energy conservation.
    let opts = Dopri5Options {
        rtol: 1e-8,
        atol: 1e-8,
        max_steps: 10_000_000,
    };
    let tg = grid(10.0, 0.1);
    let traj = dopri5(&harmonic, &[1.0, 0.0], (0.0, 10.0), &opts, &tg).map_err(|e| e.to_string())?;
    let mut max_err = 0.0f64;
    let mut drift = 0.0f64;
    let h0 = harmonic.energy(1.0, 0.0);
    for (i, &ti) in traj.times.iter().enumerate() {
        let s = traj.state(i);
        max_err = max_err
            .max((s[0] - ti.cos()).abs())
            .max((s[1] + ti.sin()).abs());
        drift = drift.max((harmonic.energy(s[0], s[1]) - h0).abs());
    }
    if max_err > 1e-6 {
        return Err(format!("dopri5 harmonic error {max_err:.2e} > 1e-6"));
    }
    if drift > 1e-6 {
        return Err(format!("dopri5 energy drift {drift:.2e} > 1e-6"));
    }

    // Undamped nonlinear energy conservation.
    let duffing = Duffing {
        alpha: -1.0,
        beta: 1.0,
        gamma: 0.0,
    };
    let traj = dopri5(&duffing, &[0.8, 0.2], (0.0, 10.0), &opts, &tg).map_err(|e| e.to_string())?;
    let h0 = duffing.energy(0.8, 0.2);
    for i in 0..traj.len() {
        let s = traj.state(i);
        if (duffing.energy(s[0], s[1]) - h0).abs() > 1e-6 {
            return Err("undamped nonlinear energy drift > 1e-6".into());
        }
    }

    // Damped energy monotone non-increasing.
    let damped = Duffing {
        alpha: 1.0,
        beta: 0.0,
        gamma: 0.3,
    };
    let traj = dopri5(&damped, &[1.0, 0.0], (0.0, 10.0), &opts, &tg).map_err(|e| e.to_string())?;
    let mut prev = f64::INFINITY;
    for i in 0..traj.len() {
        let s = traj.state(i);
        let hh = damped.energy(s[0], s[1]);
        if hh > prev + 1e-9 {
            return Err(format!("damped energy increased at output index {i}"));
        }
        prev = hh;
    }
    Ok("rk4/dopri5 harmonic <= 1e-6; order in [3.8,4.2]; energy laws hold".into())
}

// ---------------------------------------------------------------------------
// 6. Finite-difference oracle
// ---------------------------------------------------------------------------

fn fd_oracle() -> Result<String, String> {
    let fields = fd_solve(0.1, 101, &[0.0, 0.25, 0.5, 0.75, 1.0]).map_err(|e| e.to_string())?;
    for f in &fields {
        for &v in &f.values {
            if !(1.0..=2.0).contains(&v) {
                return Err(format!("maximum principle violated: u = {v} at t = {}", f.time));
            }
        }
    }
    let orders = self_convergence_orders(0.1, 0.5);
    for (pair, order) in &orders {
        if !(1.8..=2.7).contains(order) {
            return Err(format!(
                "convergence order {order:.3} between grids {pair:?} not consistent with 2nd order"
            ));
        }
    }
    let detail = orders
        .iter()
        .map(|((a, b), o)| format!("{a}->{b}: order {o:.2}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(format!("bounds hold at all times; {detail}"))
}

// ---------------------------------------------------------------------------
// 7. Degeneracies
// ---------------------------------------------------------------------------

fn degeneracies() -> Result<String, String> {
    let spec = NetworkSpec::new(3, vec![(12, Activation::Tanh)], 1, 21);
    let base: Network<f64> = Network::build(spec.clone()).map_err(|e| e.to_string())?;
    let mask = prune(&base.flatten(), 0.5).map_err(|e| e.to_string())?;
    let mut w_u = base.flatten();
    mask.apply(&mut w_u.data);
    let cfg = TrainConfig::new(12, 8, 1e-2);

    // Zero-lambda calibration == penalty-free calibration, bit for bit.
    let run_cal = |pen: CalibratePenalty, lambda: f64| -> Result<Vec<u64>, String> {
        let mut net: Network<f64> = Network::build(spec.clone()).map_err(|e| e.to_string())?;
        let mut target = toy_objective(&net, 24, 77);
        let mut s1 = Pcg64::new(31, 31);
        let mut s2 = Pcg64::new(32, 32);
        let (out, _) = calibrate(
            &mut net, &mask, &w_u, &mut target, lambda, InitMode::Zero, pen, &cfg, &mut s1,
            &mut s2,
        )
        .map_err(|e| e.to_string())?;
        Ok(out.data.iter().map(|x| x.to_bits()).collect())
    };
    if run_cal(CalibratePenalty::L2Zero, 0.0)? != run_cal(CalibratePenalty::None, 0.0)? {
        return Err("lambda = 0 calibration differs from unregularized".into());
    }

    // Eq-form equality: zero-anchored == start-anchored when the start is zero.
    if run_cal(CalibratePenalty::L2Zero, 0.05)? != run_cal(CalibratePenalty::L2Sp, 0.05)? {
        return Err("zero-anchored and start-anchored penalties diverge from zero start".into());
    }

    // All-ones mask allocation == plain training.
    {
        let full_mask = prune(&base.flatten(), 0.0).map_err(|e| e.to_string())?;
        let mut a = base.clone();
        let mut d1 = toy_objective(&base, 24, 78);
        let mut s = Pcg64::new(33, 33);
        let alloc = allocate(&mut a, &full_mask, &mut d1, &cfg, &mut s).map_err(|e| e.to_string())?;
        let mut b = base.clone();
        let mut d2 = toy_objective(&base, 24, 78);
        let mut s = Pcg64::new(33, 33);
        train(&mut b, &mut d2, &cfg, &mut s).map_err(|e| e.to_string())?;
        let bits_a: Vec<u64> = alloc.data.iter().map(|x| x.to_bits()).collect();
        let bits_b: Vec<u64> = b.flatten().data.iter().map(|x| x.to_bits()).collect();
        if bits_a != bits_b {
            return Err("all-ones allocation differs from plain training".into());
        }
    }

    // Unit-Fisher variant == plain starting-point penalty, end to end.
    {
        let mut art = SourceArtifacts::bare(spec.clone());
        art.pretrained = Some(base.flatten());
        art.fisher_source = Some(crate::transfer::FisherDiagonal {
            entries: vec![1.0; base.num_params()],
        });
        let hp = StrategyHyper {
            lambda: 0.02,
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 5,
        };
        let mut t1 = toy_objective(&base, 24, 79);
        let mut s1 = StrategyStreams {
            shuffle: Pcg64::new(34, 34),
            calibrate_init: Pcg64::new(35, 35),
            target_init_seed: 0,
        };
        let a = run_strategy(StrategyKind::L2SpFisher, &hp, &art, &mut t1, &mut s1)
            .map_err(|e| e.to_string())?;
        let mut t2 = toy_objective(&base, 24, 79);
        let mut s2 = StrategyStreams {
            shuffle: Pcg64::new(34, 34),
            calibrate_init: Pcg64::new(35, 35),
            target_init_seed: 0,
        };
        let b = run_strategy(StrategyKind::L2Sp, &hp, &art, &mut t2, &mut s2)
            .map_err(|e| e.to_string())?;
        let bits_a: Vec<u64> = a.weights.data.iter().map(|x| x.to_bits()).collect();
        let bits_b: Vec<u64> = b.weights.data.iter().map(|x| x.to_bits()).collect();
        if bits_a != bits_b {
            return Err("unit-Fisher trajectory differs from plain starting-point penalty".into());
        }
    }
    Ok("lambda=0, all-ones mask, unit-Fisher and penalty-form equalities are bit-exact".into())
}
