//! Duffing oscillator calibration task.
//!
//! Source systems conserve energy; target systems add damping. A
//! network-parameterized vector field is fitted to one-step transitions and
//! judged by the RMSE of full rollouts from held-out initial states.

use crate::error::Result;
use crate::ode::{dopri5, Dopri5Options, Duffing, StateTrajectory, TransitionObjective};
use crate::rng::Pcg64;

pub const DT: f64 = 0.1;
pub const HORIZON: f64 = 10.0;
pub const NOISE_AMP: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Linear,
    Nonlinear,
}

impl SystemKind {
    pub fn source(&self) -> Duffing<f64> {
        match self {
            SystemKind::Linear => Duffing {
                alpha: 1.0,
                beta: 0.0,
                gamma: 0.0,
            },
            SystemKind::Nonlinear => Duffing {
                alpha: -1.0,
                beta: 1.0,
                gamma: 0.0,
            },
        }
    }

    pub fn target(&self) -> Duffing<f64> {
        let mut f = self.source();
        f.gamma = 0.3;
        f
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemKind::Linear => "linear",
            SystemKind::Nonlinear => "nonlinear",
        }
    }
}

fn sample_grid() -> Vec<f64> {
    let n = (HORIZON / DT).round() as usize;
    (0..=n).map(|i| HORIZON * i as f64 / n as f64).collect()
}

/// Initial state uniform over the annulus 0.2 <= |y| <= 1 (radius uniform
/// in [0.2, 1], angle uniform).
pub fn draw_initial_state(stream: &mut Pcg64) -> [f64; 2] {
    let r = stream.uniform(0.2, 1.0);
    let phi = stream.uniform(0.0, std::f64::consts::TAU);
    [r * phi.cos(), r * phi.sin()]
}

/// Integrates `n_traj` trajectories sampled every `DT` over the horizon,
/// returning the clean trajectories alongside copies with additive uniform
/// noise (scaled by `noise_amp`) on every recorded component. The clean
/// side serves evaluation; the noisy side serves training.
pub fn generate_paired(
    field: &Duffing<f64>,
    n_traj: usize,
    noise_amp: f64,
    stream: &mut Pcg64,
) -> Result<(Vec<StateTrajectory<f64>>, Vec<StateTrajectory<f64>>)> {
    let grid = sample_grid();
    let opts = Dopri5Options {
        rtol: 1e-10,
        atol: 1e-10,
        max_steps: 10_000_000,
    };
    let mut clean = Vec::with_capacity(n_traj);
    let mut noisy = Vec::with_capacity(n_traj);
    for _ in 0..n_traj {
        let y0 = draw_initial_state(stream);
        let traj = dopri5(field, &y0, (0.0, HORIZON), &opts, &grid)?;
        let mut perturbed = traj.clone();
        if noise_amp > 0.0 {
            for x in &mut perturbed.states {
                *x += noise_amp * stream.uniform(-1.0, 1.0);
            }
        }
        clean.push(traj);
        noisy.push(perturbed);
    }
    Ok((clean, noisy))
}

/// Noisy-only variant of [`generate_paired`] (identical stream consumption).
pub fn generate(
    field: &Duffing<f64>,
    n_traj: usize,
    noise_amp: f64,
    stream: &mut Pcg64,
) -> Result<Vec<StateTrajectory<f64>>> {
    Ok(generate_paired(field, n_traj, noise_amp, stream)?.1)
}

/// Pools consecutive-state transition pairs across trajectories,
/// earliest-first: the pair at time index 0 of every trajectory, then index
/// 1 of every trajectory, and so on. `n_pairs` = 0 keeps all.
pub fn transition_pairs(
    trajs: &[StateTrajectory<f64>],
    n_pairs: usize,
    n_substeps: usize,
) -> TransitionObjective<f64> {
    let mut y0s = Vec::new();
    let mut y1s = Vec::new();
    let max_idx = trajs.iter().map(|t| t.len() - 1).max().unwrap_or(0);
    let mut taken = 0usize;
    'outer: for i in 0..max_idx {
        for t in trajs {
            if i + 1 < t.len() {
                y0s.extend_from_slice(t.state(i));
                y1s.extend_from_slice(t.state(i + 1));
                taken += 1;
                if n_pairs > 0 && taken == n_pairs {
                    break 'outer;
                }
            }
        }
    }
    TransitionObjective {
        y0s,
        y1s,
        dim: 2,
        dt: DT,
        n_substeps,
    }
}

/// Rollout RMSE of a model field against truth trajectories over the
/// evaluation window [1 s, 10 s]: each rollout starts from the truth
/// trajectory's initial state. Divergent rollouts yield
/// `(f64::INFINITY, true)`.
pub fn rollout_rmse<F: crate::ode::VectorField<f64>>(
    field: &F,
    truth: &[StateTrajectory<f64>],
    window: (f64, f64),
) -> (f64, bool) {
    let opts = Dopri5Options {
        rtol: 1e-7,
        atol: 1e-9,
        max_steps: 200_000,
    };
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    for t in truth {
        let rollout = match dopri5(field, t.state(0), (0.0, HORIZON), &opts, &t.times) {
            Ok(r) => r,
            Err(_) => return (f64::INFINITY, true),
        };
        for (i, &time) in t.times.iter().enumerate() {
            if time + 1e-12 < window.0 || time > window.1 + 1e-12 {
                continue;
            }
            let a = rollout.state(i);
            let b = t.state(i);
            for k in 0..2 {
                let d = a[k] - b[k];
                sq_sum += d * d;
                count += 1;
            }
        }
    }
    if count == 0 {
        return (f64::INFINITY, true);
    }
    let rmse = (sq_sum / count as f64).sqrt();
    if rmse.is_finite() {
        (rmse, false)
    } else {
        (f64::INFINITY, true)
    }
}

/// Maximum energy drift |H(t) - H(0)| of a model field's rollout from
/// `y0`, measured with the conserved quantity of `reference`.
pub fn energy_drift<F: crate::ode::VectorField<f64>>(
    field: &F,
    reference: &Duffing<f64>,
    y0: [f64; 2],
) -> Result<f64> {
    let grid = sample_grid();
    let opts = Dopri5Options {
        rtol: 1e-9,
        atol: 1e-11,
        max_steps: 1_000_000,
    };
    let rollout = dopri5(field, &y0, (0.0, HORIZON), &opts, &grid)?;
    let h0 = reference.energy(y0[0], y0[1]);
    let mut drift = 0.0f64;
    for i in 0..rollout.len() {
        let s = rollout.state(i);
        drift = drift.max((reference.energy(s[0], s[1]) - h0).abs());
    }
    Ok(drift)
}
