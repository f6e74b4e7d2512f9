//! Modified Friedman #1 regression family.
//!
//! Ten uniform features, a label depending only on the first five, and a
//! distance knob `d` that moves every coefficient of the target task away
//! from the source task's.

use crate::rng::Pcg64;
use crate::tasks::TabularObjective;

#[derive(Clone, Debug)]
pub struct FriedmanParams {
    pub a: [f64; 4],
    pub b: [f64; 5],
    pub c: [f64; 5],
    pub noise_std: f64,
    pub label: String,
}

impl FriedmanParams {
    /// Source preset: a = b = 1, c = 0, no noise.
    pub fn source() -> Self {
        FriedmanParams {
            a: [1.0; 4],
            b: [1.0; 5],
            c: [0.0; 5],
            noise_std: 0.0,
            label: "source".into(),
        }
    }

    /// Target preset at distance `d`: a = b = c = d.
    pub fn target(d: f64, noise_std: f64) -> Self {
        FriedmanParams {
            a: [d; 4],
            b: [d; 5],
            c: [d; 5],
            noise_std,
            label: format!("d={d}"),
        }
    }

    /// Noiseless closed-form label.
    pub fn clean_label(&self, x: &[f64]) -> f64 {
        let (a, b, c) = (&self.a, &self.b, &self.c);
        a[0] * 10.0 * (std::f64::consts::PI * (b[0] * x[0] + c[0]) * (b[1] * x[1] + c[1])).sin()
            + a[1] * 20.0 * (b[2] * x[2] + c[2] - 0.5).powi(2)
            + a[2] * 10.0 * (b[3] * x[3] + c[3])
            + a[3] * 5.0 * (b[4] * x[4] + c[4])
    }
}

pub const NUM_FEATURES: usize = 10;

/// Draws `n` samples: features i.i.d. uniform on [0, 1]^10, label from the
/// closed form plus Gaussian noise of the preset's standard deviation.
/// Features 6..10 are generated but never used by the label.
pub fn sample(n: usize, params: &FriedmanParams, stream: &mut Pcg64) -> TabularObjective {
    let mut inputs = Vec::with_capacity(n * NUM_FEATURES);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let start = inputs.len();
        for _ in 0..NUM_FEATURES {
            inputs.push(stream.next_f64());
        }
        let x = &inputs[start..start + NUM_FEATURES];
        let mut y = params.clean_label(x);
        if params.noise_std > 0.0 {
            y += params.noise_std * stream.normal();
        }
        targets.push(y);
    }
    TabularObjective {
        inputs,
        targets,
        in_width: NUM_FEATURES,
        out_width: 1,
    }
}
