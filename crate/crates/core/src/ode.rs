//! Numerical integration and neural-ODE training.
//!
//! Fixed-step classical RK4 serves as the differentiable training-time
//! solver (unrolled over each observation interval); adaptive
//! Dormand-Prince 5(4) with its 4th-order dense interpolant generates data
//! and evaluation rollouts. Gradients of the one-step transition loss are
//! taken by reverse mode through the unrolled RK4 stages
//! (discretize-then-optimize).

use crate::autodiff::{forward_batch, vjp_batch, GradientVector};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::optim::Objective;
use crate::real::{lit, Real};

/// Time-indexed states, row-major (`states[i * dim .. (i+1) * dim]`).
#[derive(Clone, Debug)]
pub struct StateTrajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<T>,
    pub dim: usize,
}

impl<T: Real> StateTrajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[T] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.times.len() * self.dim {
            return Err(Error::DimensionMismatch {
                what: "trajectory states",
                expected: self.times.len() * self.dim,
                got: self.states.len(),
            });
        }
        for w in self.times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidConfig(
                    "trajectory times must be strictly increasing".into(),
                ));
            }
        }
        if self.states.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "trajectory state",
                sample: None,
            });
        }
        Ok(())
    }
}

/// A first-order vector field dy/dt = f(t, y).
pub trait VectorField<T> {
    fn dim(&self) -> usize;
    fn eval(&self, t: T, y: &[T], dydt: &mut [T]);
}

/// Duffing oscillator: dq/dt = p, dp/dt = -alpha q - beta q^3 - gamma p.
#[derive(Clone, Copy, Debug)]
pub struct Duffing<T> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
}

impl<T: Real> Duffing<T> {
    /// Conserved energy of the undamped system:
    /// H = p^2/2 + alpha q^2/2 + beta q^4/4.
    pub fn energy(&self, q: T, p: T) -> T {
        let half = lit::<T>(0.5);
        let quarter = lit::<T>(0.25);
        half * p * p + half * self.alpha * q * q + quarter * self.beta * q * q * q * q
    }
}

impl<T: Real> VectorField<T> for Duffing<T> {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, _t: T, y: &[T], dydt: &mut [T]) {
        let (q, p) = (y[0], y[1]);
        dydt[0] = p;
        dydt[1] = -self.alpha * q - self.beta * q * q * q - self.gamma * p;
    }
}

/// A network as an autonomous vector field (state in, state derivative out).
pub struct NetField<'a, T> {
    pub net: &'a Network<T>,
}

impl<T: Real> VectorField<T> for NetField<'_, T> {
    fn dim(&self) -> usize {
        self.net.input_width()
    }

    fn eval(&self, _t: T, y: &[T], dydt: &mut [T]) {
        let cache = forward_batch(self.net, y, 1).expect("state width matches field input");
        dydt.copy_from_slice(cache.outputs());
    }
}

/// Classical 4th-order Runge-Kutta over the given time grid (one step per
/// grid interval).
pub fn rk4<T: Real, F: VectorField<T>>(
    field: &F,
    y0: &[T],
    t_grid: &[T],
) -> Result<StateTrajectory<T>> {
    let dim = field.dim();
    if y0.len() != dim {
        return Err(Error::DimensionMismatch {
            what: "rk4 initial state",
            expected: dim,
            got: y0.len(),
        });
    }
    if t_grid.len() < 2 {
        return Err(Error::InvalidConfig("time grid needs >= 2 points".into()));
    }
    let mut states = Vec::with_capacity(t_grid.len() * dim);
    states.extend_from_slice(y0);
    let mut y = y0.to_vec();
    let mut k1 = vec![T::zero(); dim];
    let mut k2 = vec![T::zero(); dim];
    let mut k3 = vec![T::zero(); dim];
    let mut k4 = vec![T::zero(); dim];
    let mut tmp = vec![T::zero(); dim];
    let half = lit::<T>(0.5);
    let sixth = T::one() / lit::<T>(6.0);
    let two = lit::<T>(2.0);
    for w in t_grid.windows(2) {
        let (t, h) = (w[0], w[1] - w[0]);
        if !(h > T::zero()) {
            return Err(Error::InvalidConfig(
                "time grid must be strictly increasing".into(),
            ));
        }
        field.eval(t, &y, &mut k1);
        for i in 0..dim {
            tmp[i] = y[i] + half * h * k1[i];
        }
        field.eval(t + half * h, &tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = y[i] + half * h * k2[i];
        }
        field.eval(t + half * h, &tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = y[i] + h * k3[i];
        }
        field.eval(t + h, &tmp, &mut k4);
        for i in 0..dim {
            y[i] = y[i] + h * sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
        }
        if y.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "rk4 state",
                sample: None,
            });
        }
        states.extend_from_slice(&y);
    }
    Ok(StateTrajectory {
        times: t_grid.to_vec(),
        states,
        dim,
    })
}

/// Options for the adaptive integrator.
#[derive(Clone, Copy, Debug)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Dopri5Options {
            rtol: 1e-9,
            atol: 1e-9,
            max_steps: 10_000_000,
        }
    }
}

/// Dormand-Prince 5(4) with the standard step-size controller and dense
/// output of order 4 at the requested times. `t_grid` must be increasing
/// and lie inside `[t0, t_end]`.
pub fn dopri5<T: Real, F: VectorField<T>>(
    field: &F,
    y0: &[T],
    t_span: (T, T),
    opts: &Dopri5Options,
    t_grid: &[T],
) -> Result<StateTrajectory<T>> {
    if opts.rtol <= 0.0 || opts.atol <= 0.0 {
        return Err(Error::InvalidConfig("rtol and atol must be positive".into()));
    }
    let dim = field.dim();
    if y0.len() != dim {
        return Err(Error::DimensionMismatch {
            what: "dopri5 initial state",
            expected: dim,
            got: y0.len(),
        });
    }
    let (t0, t_end) = t_span;
    if !(t_end > t0) {
        return Err(Error::InvalidConfig("t_end must exceed t0".into()));
    }
    for w in t_grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidConfig("output grid must be increasing".into()));
        }
    }
    if let (Some(&first), Some(&last)) = (t_grid.first(), t_grid.last()) {
        if first < t0 || last > t_end {
            return Err(Error::InvalidConfig("output grid outside t_span".into()));
        }
    }

    // Butcher tableau (Dormand & Prince 1980).
    let c: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    let a: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    // Error coefficients (5th-order minus embedded 4th-order weights).
    let e: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    // Dense-output polynomial coefficients.
    let d: [f64; 7] = [
        -12715105075.0 / 11282082432.0,
        0.0,
        87487479700.0 / 32700410799.0,
        -10690763975.0 / 1880347072.0,
        701980252875.0 / 199316789632.0,
        -1453857185.0 / 822651844.0,
        69997945.0 / 29380423.0,
    ];

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k: Vec<Vec<T>> = (0..7).map(|_| vec![T::zero(); dim]).collect();
    field.eval(t, &y, &mut k[0]);

    // Initial step from the scale of y and f.
    let mut h = {
        let mut max_ratio = 0.0f64;
        for i in 0..dim {
            let sc = opts.atol + opts.rtol * y[i].abs().to_f64().unwrap_or(0.0);
            let f = k[0][i].abs().to_f64().unwrap_or(0.0);
            max_ratio = max_ratio.max(f / sc);
        }
        let span = (t_end - t0).to_f64().unwrap_or(1.0);
        let guess = if max_ratio > 0.0 {
            0.01 / max_ratio
        } else {
            1e-3 * span
        };
        lit::<T>(guess.min(span))
    };

    let safety = 0.9f64;
    let mut facmax = 10.0f64;
    let mut out_idx = 0usize;
    let mut out_states: Vec<T> = Vec::with_capacity(t_grid.len() * dim);
    // Emit any grid point equal to t0.
    while out_idx < t_grid.len() && t_grid[out_idx] <= t {
        out_states.extend_from_slice(&y);
        out_idx += 1;
    }

    let mut ynew = vec![T::zero(); dim];
    let mut ytmp = vec![T::zero(); dim];
    let mut steps = 0usize;

    while t < t_end {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::StepUnderflow {
                t: t.to_f64().unwrap_or(f64::NAN),
            });
        }
        if t + h > t_end {
            h = t_end - t;
        }
        let hf = h.to_f64().unwrap_or(0.0);
        if hf.abs() < 1e-14 * t.to_f64().unwrap_or(1.0).abs().max(1.0) {
            return Err(Error::StepUnderflow {
                t: t.to_f64().unwrap_or(f64::NAN),
            });
        }

        // Stages 2..7 (k[0] holds f(t, y) from FSAL or init).
        for s in 1..7 {
            for i in 0..dim {
                let mut acc = T::zero();
                for (j, kj) in k.iter().enumerate().take(s) {
                    let aij = a[s][j];
                    if aij != 0.0 {
                        acc += lit::<T>(aij) * kj[i];
                    }
                }
                ytmp[i] = y[i] + h * acc;
            }
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            field.eval(t + lit::<T>(c[s]) * h, &ytmp, &mut tail[0]);
        }
        // 5th-order solution is stage 7's input state (a[6] row equals b).
        for i in 0..dim {
            let mut acc = T::zero();
            for j in 0..6 {
                let bj = a[6][j];
                if bj != 0.0 {
                    acc += lit::<T>(bj) * k[j][i];
                }
            }
            ynew[i] = y[i] + h * acc;
        }
        if ynew.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "dopri5 state",
                sample: None,
            });
        }

        // Scaled RMS error.
        let mut err_sq = 0.0f64;
        for i in 0..dim {
            let mut ei = T::zero();
            for (j, kj) in k.iter().enumerate() {
                if e[j] != 0.0 {
                    ei += lit::<T>(e[j]) * kj[i];
                }
            }
            let ei = (h * ei).to_f64().unwrap_or(f64::NAN);
            let sc = opts.atol
                + opts.rtol
                    * y[i]
                        .abs()
                        .max(ynew[i].abs())
                        .to_f64()
                        .unwrap_or(0.0);
            err_sq += (ei / sc) * (ei / sc);
        }
        let err = (err_sq / dim as f64).sqrt();

        if err <= 1.0 {
            // Accept: dense output over [t, t+h], then advance (FSAL).
            while out_idx < t_grid.len() && t_grid[out_idx] <= t + h {
                let theta = ((t_grid[out_idx] - t) / h).to_f64().unwrap_or(0.0);
                let th = lit::<T>(theta);
                let one_m = lit::<T>(1.0 - theta);
                for i in 0..dim {
                    let ydiff = ynew[i] - y[i];
                    let bspl = h * k[0][i] - ydiff;
                    let mut dterm = T::zero();
                    for (j, kj) in k.iter().enumerate() {
                        if d[j] != 0.0 {
                            dterm += lit::<T>(d[j]) * kj[i];
                        }
                    }
                    let rcont5 = h * dterm;
                    let rcont4 = ydiff - h * k[6][i] - bspl;
                    let val = y[i]
                        + th * (ydiff + one_m * (bspl + th * (rcont4 + one_m * rcont5)));
                    out_states.push(val);
                }
                out_idx += 1;
            }
            t = t + h;
            y.copy_from_slice(&ynew);
            let k6 = k[6].clone();
            k[0].copy_from_slice(&k6);
            let fac = safety * err.max(1e-10).powf(-0.2);
            h = h * lit::<T>(fac.clamp(0.2, facmax));
            facmax = 10.0;
        } else {
            let fac = safety * err.powf(-0.2);
            h = h * lit::<T>(fac.clamp(0.2, 1.0));
            facmax = 1.0;
        }
    }

    if out_idx < t_grid.len() {
        // Grid points at exactly t_end that floating point left behind.
        while out_idx < t_grid.len() {
            out_states.extend_from_slice(&y);
            out_idx += 1;
        }
    }

    Ok(StateTrajectory {
        times: t_grid.to_vec(),
        states: out_states,
        dim,
    })
}

// ---------------------------------------------------------------------------
// Neural-ODE transition loss
// ---------------------------------------------------------------------------

/// Forward rollout of the unrolled fixed-step RK4 map over one observation
/// interval, batched over pairs. Returns the end states.
fn rk4_unroll_forward<T: Real>(
    net: &Network<T>,
    y0s: &[T],
    n: usize,
    dim: usize,
    dt: T,
    n_substeps: usize,
    caches: Option<&mut Vec<[crate::autodiff::ForwardCache<T>; 4]>>,
    stage_inputs: Option<&mut Vec<[Vec<T>; 4]>>,
) -> Result<Vec<T>> {
    let h = dt / lit::<T>(n_substeps as f64);
    let half = lit::<T>(0.5);
    let sixth = T::one() / lit::<T>(6.0);
    let two = lit::<T>(2.0);
    let mut s = y0s.to_vec();
    let mut cache_sink = caches;
    let mut input_sink = stage_inputs;
    for _ in 0..n_substeps {
        let x1 = s.clone();
        let c1 = forward_batch(net, &x1, n)?;
        let k1 = c1.outputs().to_vec();
        let mut x2 = vec![T::zero(); n * dim];
        for i in 0..n * dim {
            x2[i] = s[i] + half * h * k1[i];
        }
        let c2 = forward_batch(net, &x2, n)?;
        let k2 = c2.outputs().to_vec();
        let mut x3 = vec![T::zero(); n * dim];
        for i in 0..n * dim {
            x3[i] = s[i] + half * h * k2[i];
        }
        let c3 = forward_batch(net, &x3, n)?;
        let k3 = c3.outputs().to_vec();
        let mut x4 = vec![T::zero(); n * dim];
        for i in 0..n * dim {
            x4[i] = s[i] + h * k3[i];
        }
        let c4 = forward_batch(net, &x4, n)?;
        let k4 = c4.outputs().to_vec();
        for i in 0..n * dim {
            s[i] = s[i] + h * sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
        }
        if s.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                phase: "rk4 unroll",
                detail: "non-finite state mid-solve".into(),
            });
        }
        if let Some(c) = cache_sink.as_deref_mut() {
            c.push([c1, c2, c3, c4]);
        }
        if let Some(xi) = input_sink.as_deref_mut() {
            xi.push([x1, x2, x3, x4]);
        }
    }
    Ok(s)
}

/// Mean squared transition loss of the unrolled RK4 map, without gradients.
/// Generic over the vector field; analytic fields serve as oracles.
pub fn transition_loss<T: Real, F: VectorField<T>>(
    field: &F,
    y0s: &[T],
    y1s: &[T],
    n: usize,
    dt: T,
    n_substeps: usize,
) -> Result<T> {
    let dim = field.dim();
    if !(dt > T::zero()) {
        return Err(Error::InvalidConfig("dt must be positive".into()));
    }
    let h = dt / lit::<T>(n_substeps as f64);
    let half = lit::<T>(0.5);
    let sixth = T::one() / lit::<T>(6.0);
    let two = lit::<T>(2.0);
    let mut total = T::zero();
    let mut y = vec![T::zero(); dim];
    let mut k1 = vec![T::zero(); dim];
    let mut k2 = vec![T::zero(); dim];
    let mut k3 = vec![T::zero(); dim];
    let mut k4 = vec![T::zero(); dim];
    let mut tmp = vec![T::zero(); dim];
    for s in 0..n {
        y.copy_from_slice(&y0s[s * dim..(s + 1) * dim]);
        for _ in 0..n_substeps {
            field.eval(T::zero(), &y, &mut k1);
            for i in 0..dim {
                tmp[i] = y[i] + half * h * k1[i];
            }
            field.eval(T::zero(), &tmp, &mut k2);
            for i in 0..dim {
                tmp[i] = y[i] + half * h * k2[i];
            }
            field.eval(T::zero(), &tmp, &mut k3);
            for i in 0..dim {
                tmp[i] = y[i] + h * k3[i];
            }
            field.eval(T::zero(), &tmp, &mut k4);
            for i in 0..dim {
                y[i] = y[i] + h * sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
            }
        }
        for i in 0..dim {
            let r = y[i] - y1s[s * dim + i];
            total += r * r;
        }
    }
    Ok(total / lit::<T>((n * dim) as f64))
}

/// Mean squared error between the RK4-unrolled prediction and the observed
/// next states, and its parameter gradient by reverse mode through the
/// unrolled stages.
pub fn node_fit_grad<T: Real>(
    net: &Network<T>,
    y0s: &[T],
    y1s: &[T],
    n: usize,
    dt: T,
    n_substeps: usize,
) -> Result<(T, GradientVector<T>)> {
    let dim = net.input_width();
    if net.output_width() != dim {
        return Err(Error::DimensionMismatch {
            what: "node field output width",
            expected: dim,
            got: net.output_width(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidConfig("no transition pairs".into()));
    }
    if !(dt > T::zero()) {
        return Err(Error::InvalidConfig("dt must be positive".into()));
    }
    if n_substeps == 0 {
        return Err(Error::InvalidConfig("n_substeps must be >= 1".into()));
    }
    if y0s.len() != n * dim || y1s.len() != n * dim {
        return Err(Error::DimensionMismatch {
            what: "transition pairs",
            expected: n * dim,
            got: y0s.len().min(y1s.len()),
        });
    }

    let mut caches = Vec::with_capacity(n_substeps);
    let mut stage_inputs = Vec::with_capacity(n_substeps);
    let end = rk4_unroll_forward(
        net,
        y0s,
        n,
        dim,
        dt,
        n_substeps,
        Some(&mut caches),
        Some(&mut stage_inputs),
    )?;

    let m = n * dim;
    let inv = T::one() / lit::<T>(m as f64);
    let two = lit::<T>(2.0);
    let mut loss = T::zero();
    let mut adj = vec![T::zero(); m];
    for i in 0..m {
        let r = end[i] - y1s[i];
        loss += r * r;
        adj[i] = two * r * inv;
    }
    loss *= inv;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "node transition loss",
            sample: None,
        });
    }

    let h = dt / lit::<T>(n_substeps as f64);
    let half = lit::<T>(0.5);
    let sixth = T::one() / lit::<T>(6.0);
    let third = T::one() / lit::<T>(3.0);
    let mut grad = GradientVector::zeros(net.num_params());

    for step in (0..n_substeps).rev() {
        let [c1, c2, c3, c4] = &caches[step];
        // Adjoints of the four stage outputs.
        let mut kbar1: Vec<T> = adj.iter().map(|&a| h * sixth * a).collect();
        let mut kbar2: Vec<T> = adj.iter().map(|&a| h * third * a).collect();
        let mut kbar3: Vec<T> = adj.iter().map(|&a| h * third * a).collect();
        let kbar4: Vec<T> = adj.iter().map(|&a| h * sixth * a).collect();

        let x4bar = vjp_batch(net, c4, &kbar4, &mut grad);
        for i in 0..m {
            kbar3[i] += h * x4bar[i];
        }
        let x3bar = vjp_batch(net, c3, &kbar3, &mut grad);
        for i in 0..m {
            kbar2[i] += half * h * x3bar[i];
        }
        let x2bar = vjp_batch(net, c2, &kbar2, &mut grad);
        for i in 0..m {
            kbar1[i] += half * h * x2bar[i];
        }
        let x1bar = vjp_batch(net, c1, &kbar1, &mut grad);
        for i in 0..m {
            adj[i] = adj[i] + x1bar[i] + x2bar[i] + x3bar[i] + x4bar[i];
        }
    }
    drop(stage_inputs);
    grad.check_finite("node gradient")?;
    Ok((loss, grad))
}

/// Transition-pair dataset exposed as a trainable objective.
#[derive(Clone, Debug)]
pub struct TransitionObjective<T> {
    pub y0s: Vec<T>,
    pub y1s: Vec<T>,
    pub dim: usize,
    pub dt: T,
    pub n_substeps: usize,
}

impl<T: Real> TransitionObjective<T> {
    pub fn num_pairs(&self) -> usize {
        self.y0s.len() / self.dim
    }
}

impl<T: Real> Objective<T> for TransitionObjective<T> {
    fn num_samples(&self) -> usize {
        self.num_pairs()
    }

    fn loss_grad(&mut self, net: &Network<T>, idx: &[usize]) -> Result<(T, GradientVector<T>)> {
        let d = self.dim;
        let mut y0 = Vec::with_capacity(idx.len() * d);
        let mut y1 = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            y0.extend_from_slice(&self.y0s[i * d..(i + 1) * d]);
            y1.extend_from_slice(&self.y1s[i * d..(i + 1) * d]);
        }
        node_fit_grad(net, &y0, &y1, idx.len(), self.dt, self.n_substeps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, NetworkSpec};
    use crate::rng::Pcg64;

    struct ZeroField;
    impl VectorField<f64> for ZeroField {
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, _t: f64, _y: &[f64], dydt: &mut [f64]) {
            dydt.fill(0.0);
        }
    }

    fn grid(t0: f64, t1: f64, h: f64) -> Vec<f64> {
        let n = ((t1 - t0) / h).round().max(1.0) as usize;
        (0..=n).map(|i| t0 + (t1 - t0) * i as f64 / n as f64).collect()
    }

    fn harmonic() -> Duffing<f64> {
        Duffing {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
        }
    }

    #[test]
    fn rk4_harmonic_full_period() {
        let t = grid(0.0, std::f64::consts::TAU, 0.01);
        let traj = rk4(&harmonic(), &[1.0, 0.0], &t).unwrap();
        let last = traj.state(traj.len() - 1);
        assert!((last[0] - 1.0).abs() < 1e-6, "q {}", last[0]);
        assert!(last[1].abs() < 1e-6, "p {}", last[1]);
    }

    #[test]
    fn rk4_null_field_is_constant() {
        let t = grid(0.0, 1.0, 0.1);
        let traj = rk4(&ZeroField, &[0.3, -0.7], &t).unwrap();
        for i in 0..traj.len() {
            assert_eq!(traj.state(i), &[0.3, -0.7]);
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        // Endpoint error vs closed form at two step sizes.
        let err_at = |h: f64| {
            let t = grid(0.0, 1.0, h);
            let traj = rk4(&harmonic(), &[1.0, 0.0], &t).unwrap();
            let last = traj.state(traj.len() - 1);
            let (qe, pe) = (1.0f64.cos(), -(1.0f64.sin()));
            ((last[0] - qe).powi(2) + (last[1] - pe).powi(2)).sqrt()
        };
        let e1 = err_at(0.02);
        let e2 = err_at(0.01);
        let order = (e1 / e2).log2();
        assert!(
            (3.8..=4.2).contains(&order),
            "empirical order {order} (errors {e1:.3e}, {e2:.3e})"
        );
    }

    #[test]
    fn rk4_time_reversal() {
        let field = Duffing {
            alpha: -1.0,
            beta: 1.0,
            gamma: 0.0,
        };
        struct Reversed<'a>(&'a Duffing<f64>);
        impl VectorField<f64> for Reversed<'_> {
            fn dim(&self) -> usize {
                2
            }
            fn eval(&self, t: f64, y: &[f64], dydt: &mut [f64]) {
                self.0.eval(t, y, dydt);
                dydt[0] = -dydt[0];
                dydt[1] = -dydt[1];
            }
        }
        let t = grid(0.0, 1.0, 1e-3);
        let fwd = rk4(&field, &[0.8, 0.1], &t).unwrap();
        let end = fwd.state(fwd.len() - 1).to_vec();
        let back = rk4(&Reversed(&field), &end, &t).unwrap();
        let home = back.state(back.len() - 1);
        assert!((home[0] - 0.8).abs() < 1e-8);
        assert!((home[1] - 0.1).abs() < 1e-8);
    }

    #[test]
    fn dopri5_harmonic_accuracy_and_energy() {
        let opts = Dopri5Options {
            rtol: 1e-8,
            atol: 1e-8,
            max_steps: 1_000_000,
        };
        let t_grid = grid(0.0, 10.0, 0.1);
        let traj = dopri5(&harmonic(), &[1.0, 0.0], (0.0, 10.0), &opts, &t_grid).unwrap();
        let h0 = harmonic().energy(1.0, 0.0);
        let mut max_err = 0.0f64;
        let mut max_drift = 0.0f64;
        for (i, &t) in traj.times.iter().enumerate() {
            let s = traj.state(i);
            max_err = max_err.max((s[0] - t.cos()).abs()).max((s[1] + t.sin()).abs());
            max_drift = max_drift.max((harmonic().energy(s[0], s[1]) - h0).abs());
        }
        assert!(max_err <= 1e-6, "state error {max_err}");
        assert!(max_drift <= 1e-6, "energy drift {max_drift}");
    }

    #[test]
    fn dopri5_damped_energy_nonincreasing() {
        let field = Duffing {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.3,
        };
        let t_grid = grid(0.0, 10.0, 0.1);
        let traj = dopri5(
            &field,
            &[1.0, 0.0],
            (0.0, 10.0),
            &Dopri5Options::default(),
            &t_grid,
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..traj.len() {
            let s = traj.state(i);
            let h = field.energy(s[0], s[1]);
            assert!(h <= prev + 1e-9, "H increased at index {i}");
            prev = h;
        }
    }

    #[test]
    fn dopri5_dense_output_matches_closed_form() {
        // Awkward output times exercise the interpolant.
        let t_grid: Vec<f64> = (1..50).map(|i| 0.2043 * i as f64).collect();
        let traj = dopri5(
            &harmonic(),
            &[0.0, 1.0],
            (0.0, 10.05),
            &Dopri5Options::default(),
            &t_grid,
        )
        .unwrap();
        for (i, &t) in traj.times.iter().enumerate() {
            let s = traj.state(i);
            assert!((s[0] - t.sin()).abs() < 1e-7, "q at {t}");
            assert!((s[1] - t.cos()).abs() < 1e-7, "p at {t}");
        }
    }

    #[test]
    fn transition_loss_of_true_field_is_tiny() {
        // Data from the tight adaptive solver; the unrolled RK4 map with the
        // true field must reproduce it to solver-tolerance accuracy.
        let field = harmonic();
        let t_grid = grid(0.0, 2.0, 0.1);
        let traj = dopri5(
            &field,
            &[0.7, 0.2],
            (0.0, 2.0),
            &Dopri5Options {
                rtol: 1e-12,
                atol: 1e-12,
                max_steps: 1_000_000,
            },
            &t_grid,
        )
        .unwrap();
        let n = traj.len() - 1;
        let mut y0s = Vec::new();
        let mut y1s = Vec::new();
        for i in 0..n {
            y0s.extend_from_slice(traj.state(i));
            y1s.extend_from_slice(traj.state(i + 1));
        }
        let loss = transition_loss(&field, &y0s, &y1s, n, 0.1, 2).unwrap();
        assert!(loss <= 1e-12, "loss {loss}");
    }

    #[test]
    fn node_fit_rejects_bad_dt_and_empty() {
        let net: Network<f64> =
            Network::build(NetworkSpec::new(2, vec![(8, Activation::Tanh)], 2, 0)).unwrap();
        assert!(node_fit_grad(&net, &[1.0, 0.0], &[0.9, 0.1], 1, 0.0, 1).is_err());
        assert!(node_fit_grad(&net, &[], &[], 0, 0.1, 1).is_err());
    }

    #[test]
    fn node_gradient_matches_finite_differences() {
        let net: Network<f64> = Network::build(NetworkSpec::new(
            2,
            vec![(12, Activation::Tanh), (12, Activation::Tanh)],
            2,
            3,
        ))
        .unwrap();
        let mut rng = Pcg64::new(3, 33);
        let n = 4;
        let y0s: Vec<f64> = (0..n * 2).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let y1s: Vec<f64> = (0..n * 2).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (_, grad) = node_fit_grad(&net, &y0s, &y1s, n, 0.1, 3).unwrap();

        let base = net.flatten();
        let mut probe = net.clone();
        let h = 1e-6;
        let mut worst = 0.0f64;
        for i in 0..base.len() {
            let mut vp = base.clone();
            vp.data[i] += h;
            probe.load(&vp).unwrap();
            let lp = {
                let end =
                    rk4_unroll_forward(&probe, &y0s, n, 2, 0.1, 3, None, None).unwrap();
                end.iter()
                    .zip(&y1s)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / (n * 2) as f64
            };
            let mut vm = base.clone();
            vm.data[i] -= h;
            probe.load(&vm).unwrap();
            let lm = {
                let end =
                    rk4_unroll_forward(&probe, &y0s, n, 2, 0.1, 3, None, None).unwrap();
                end.iter()
                    .zip(&y1s)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / (n * 2) as f64
            };
            let fd = (lp - lm) / (2.0 * h);
            let g = grad.entries[i];
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-7);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-5, "worst rel err {worst}");
    }

    #[test]
    fn nonlinear_energy_conserved_along_dopri5() {
        let field = Duffing {
            alpha: -1.0,
            beta: 1.0,
            gamma: 0.0,
        };
        let t_grid = grid(0.0, 10.0, 0.1);
        let traj = dopri5(
            &field,
            &[0.9, 0.0],
            (0.0, 10.0),
            &Dopri5Options::default(),
            &t_grid,
        )
        .unwrap();
        let h0 = field.energy(0.9, 0.0);
        for i in 0..traj.len() {
            let s = traj.state(i);
            assert!((field.energy(s[0], s[1]) - h0).abs() <= 1e-6);
        }
    }
}
