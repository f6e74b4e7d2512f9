//! Benchmark task definitions: data generation, task losses, ground-truth
//! oracles and metrics. All tasks run at `f64`.

pub mod diffusion;
pub mod duffing;
pub mod friedman;

use crate::autodiff::{forward_batch, mse_loss_grad, GradientVector};
use crate::error::Result;
use crate::nn::Network;
use crate::optim::Objective;

/// In-memory labeled samples with a plain MSE objective.
#[derive(Clone, Debug)]
pub struct TabularObjective {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub in_width: usize,
    pub out_width: usize,
}

impl TabularObjective {
    pub fn len(&self) -> usize {
        if self.in_width == 0 {
            0
        } else {
            self.inputs.len() / self.in_width
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.in_width..(i + 1) * self.in_width]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.out_width..(i + 1) * self.out_width]
    }

    /// First `n` samples as a new objective (subset selection happens on a
    /// pre-shuffled pool).
    pub fn head(&self, n: usize) -> TabularObjective {
        TabularObjective {
            inputs: self.inputs[..n * self.in_width].to_vec(),
            targets: self.targets[..n * self.out_width].to_vec(),
            in_width: self.in_width,
            out_width: self.out_width,
        }
    }

    /// Shuffles samples in place with the given stream.
    pub fn shuffle(&mut self, stream: &mut crate::rng::Pcg64) {
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        stream.shuffle(&mut order);
        let mut inputs = Vec::with_capacity(self.inputs.len());
        let mut targets = Vec::with_capacity(self.targets.len());
        for &i in &order {
            inputs.extend_from_slice(self.input(i));
            targets.extend_from_slice(self.target(i));
        }
        self.inputs = inputs;
        self.targets = targets;
    }

    /// Full-dataset mean squared error.
    pub fn mse(&self, net: &Network<f64>) -> Result<f64> {
        crate::autodiff::mse_loss(net, &self.inputs, &self.targets, self.len())
    }

    /// Root mean squared error over the whole dataset (averaged over
    /// samples and output components before the root).
    pub fn rmse(&self, net: &Network<f64>) -> Result<f64> {
        Ok(self.mse(net)?.sqrt())
    }

    /// Batched predictions for all samples.
    pub fn predict_all(&self, net: &Network<f64>) -> Result<Vec<f64>> {
        let cache = forward_batch(net, &self.inputs, self.len())?;
        Ok(cache.outputs().to_vec())
    }
}

impl Objective<f64> for TabularObjective {
    fn num_samples(&self) -> usize {
        self.len()
    }

    fn loss_grad(&mut self, net: &Network<f64>, idx: &[usize]) -> Result<(f64, GradientVector<f64>)> {
        let mut xs = Vec::with_capacity(idx.len() * self.in_width);
        let mut ys = Vec::with_capacity(idx.len() * self.out_width);
        for &i in idx {
            xs.extend_from_slice(self.input(i));
            ys.extend_from_slice(self.target(i));
        }
        mse_loss_grad(net, &xs, &ys, idx.len())
    }
}
