//! Stochastic optimization with subspace-restricted updates.
//!
//! The Adam step supports a freeze mask: frozen coordinates keep their
//! parameter value *and* their moment entries untouched, as if the gradient
//! for them did not exist. Additive starting-point penalties (plain,
//! zero-anchored, Fisher-weighted) are folded into the gradient before the
//! step, optionally restricted to a scope mask.

use crate::autodiff::GradientVector;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::real::{lit, Real};
use crate::rng::Pcg64;

/// Adam moment state. One per training run.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub eta: T,
}

impl<T: Real> AdamState<T> {
    pub fn new(dim: usize, eta: T) -> Self {
        AdamState {
            m: vec![T::zero(); dim],
            v: vec![T::zero(); dim],
            t: 0,
            beta1: lit(0.9),
            beta2: lit(0.999),
            epsilon: lit(1e-8),
            eta,
        }
    }

    /// One bias-corrected Adam update. Where `freeze` is true the
    /// parameter, m and v entries are left bit-identical.
    pub fn step(
        &mut self,
        params: &mut [T],
        grad: &GradientVector<T>,
        freeze: Option<&[bool]>,
    ) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                what: "adam step",
                expected: self.m.len(),
                got: grad.len(),
            });
        }
        self.t += 1;
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.t as i32);
        let bc2 = one - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            if let Some(f) = freeze {
                if f[i] {
                    continue;
                }
            }
            let g = grad.entries[i];
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    what: "gradient entry",
                    sample: Some(i),
                });
            }
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] - self.eta * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Additive regularizer on the parameter vector.
#[derive(Clone, Debug)]
pub enum Penalty<T> {
    None,
    /// lambda * sum w_i^2 over in-scope entries.
    L2Zero { lambda: T },
    /// lambda * sum (w_i - ref_i)^2 over in-scope entries.
    L2Sp { lambda: T, reference: Vec<T> },
    /// lambda * sum F_i (w_i - ref_i)^2 over in-scope entries.
    L2SpFisher {
        lambda: T,
        reference: Vec<T>,
        fisher: Vec<T>,
    },
}

impl<T: Real> Penalty<T> {
    pub fn lambda(&self) -> T {
        match self {
            Penalty::None => T::zero(),
            Penalty::L2Zero { lambda }
            | Penalty::L2Sp { lambda, .. }
            | Penalty::L2SpFisher { lambda, .. } => *lambda,
        }
    }
}

#[inline]
fn in_scope(scope: Option<&[bool]>, i: usize) -> bool {
    scope.map_or(true, |s| s[i])
}

/// Adds the penalty gradient 2*lambda*(w - ref) (times F_i for the Fisher
/// variant) to `grad` on in-scope entries. A zero lambda adds nothing and
/// leaves the gradient bit-identical.
pub fn add_penalty_grad<T: Real>(
    grad: &mut GradientVector<T>,
    penalty: &Penalty<T>,
    params: &[T],
    scope: Option<&[bool]>,
) -> Result<()> {
    let two = lit::<T>(2.0);
    match penalty {
        Penalty::None => Ok(()),
        Penalty::L2Zero { lambda } => {
            if lambda.is_zero() {
                return Ok(());
            }
            for i in 0..params.len() {
                if in_scope(scope, i) {
                    grad.entries[i] += two * *lambda * params[i];
                }
            }
            Ok(())
        }
        Penalty::L2Sp { lambda, reference } => {
            if reference.len() != params.len() {
                return Err(Error::DimensionMismatch {
                    what: "penalty reference",
                    expected: params.len(),
                    got: reference.len(),
                });
            }
            if lambda.is_zero() {
                return Ok(());
            }
            for i in 0..params.len() {
                if in_scope(scope, i) {
                    grad.entries[i] += two * *lambda * (params[i] - reference[i]);
                }
            }
            Ok(())
        }
        Penalty::L2SpFisher {
            lambda,
            reference,
            fisher,
        } => {
            if reference.len() != params.len() || fisher.len() != params.len() {
                return Err(Error::DimensionMismatch {
                    what: "penalty fisher",
                    expected: params.len(),
                    got: fisher.len(),
                });
            }
            if lambda.is_zero() {
                return Ok(());
            }
            for i in 0..params.len() {
                if in_scope(scope, i) {
                    grad.entries[i] += two * *lambda * fisher[i] * (params[i] - reference[i]);
                }
            }
            Ok(())
        }
    }
}

/// Scalar value of the penalty, for logging and for finite-difference
/// checks of [`add_penalty_grad`].
pub fn penalty_value<T: Real>(penalty: &Penalty<T>, params: &[T], scope: Option<&[bool]>) -> T {
    let mut acc = T::zero();
    match penalty {
        Penalty::None => {}
        Penalty::L2Zero { lambda } => {
            for i in 0..params.len() {
                if in_scope(scope, i) {
                    acc += *lambda * params[i] * params[i];
                }
            }
        }
        Penalty::L2Sp { lambda, reference } => {
            for i in 0..params.len() {
                if in_scope(scope, i) {
                    let d = params[i] - reference[i];
                    acc += *lambda * d * d;
                }
            }
        }
        Penalty::L2SpFisher {
            lambda,
            reference,
            fisher,
        } => {
            for i in 0..params.len() {
                if in_scope(scope, i) {
                    let d = params[i] - reference[i];
                    acc += *lambda * fisher[i] * d * d;
                }
            }
        }
    }
    acc
}

/// A trainable objective: a dataset plus the loss/gradient of a mini-batch.
pub trait Objective<T: Real> {
    fn num_samples(&self) -> usize;

    /// Mean loss over the indexed samples and its parameter gradient.
    fn loss_grad(&mut self, net: &Network<T>, idx: &[usize]) -> Result<(T, GradientVector<T>)>;

    /// Called once per epoch before batching; objectives that resample
    /// their data (collocation pools) hook in here.
    fn begin_epoch(&mut self, _epoch: usize) {}
}

/// Configuration of one training phase.
#[derive(Clone, Debug)]
pub struct TrainConfig<T> {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: T,
    pub penalty: Penalty<T>,
    /// Entries receiving the penalty gradient; `None` means all.
    pub penalty_scope: Option<Vec<bool>>,
    /// Entries excluded from updates (parameter and moments untouched).
    pub freeze: Option<Vec<bool>>,
    /// Keep-mask applied multiplicatively before every step and once after
    /// the last (the allocation loop shape).
    pub remask: Option<Vec<bool>>,
}

impl<T: Real> TrainConfig<T> {
    pub fn new(epochs: usize, batch_size: usize, learning_rate: T) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            penalty: Penalty::None,
            penalty_scope: None,
            freeze: None,
            remask: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainLog<T> {
    pub epochs: usize,
    pub steps: usize,
    pub final_loss: T,
}

fn zero_masked<T: Real>(params: &mut [T], keep: &[bool]) {
    for (p, &k) in params.iter_mut().zip(keep) {
        if !k {
            *p = T::zero();
        }
    }
}

/// Mini-batch training loop: uniform shuffling each epoch from `shuffle`,
/// last short batch kept, penalty folded into the gradient, Adam update.
pub fn train<T: Real, O: Objective<T>>(
    net: &mut Network<T>,
    objective: &mut O,
    cfg: &TrainConfig<T>,
    shuffle: &mut Pcg64,
) -> Result<TrainLog<T>> {
    if objective.num_samples() == 0 {
        return Err(Error::InvalidConfig("objective has no samples".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be >= 1".into()));
    }
    let mut adam = AdamState::new(net.num_params(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..objective.num_samples()).collect();
    let mut last_loss = T::zero();
    let mut steps = 0usize;
    for epoch in 0..cfg.epochs {
        objective.begin_epoch(epoch);
        shuffle.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            if let Some(keep) = &cfg.remask {
                zero_masked(net.params_mut(), keep);
            }
            let (loss, mut grad) = objective.loss_grad(net, batch)?;
            add_penalty_grad(&mut grad, &cfg.penalty, net.params(), cfg.penalty_scope.as_deref())?;
            adam.step(net.params_mut(), &grad, cfg.freeze.as_deref())?;
            last_loss = loss;
            steps += 1;
        }
    }
    if let Some(keep) = &cfg.remask {
        zero_masked(net.params_mut(), keep);
    }
    Ok(TrainLog {
        epochs: cfg.epochs,
        steps,
        final_loss: last_loss,
    })
}
