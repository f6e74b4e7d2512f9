//! Dense feed-forward network construction and flat-vector parameter views.
//!
//! A [`Network`] owns its parameters as one flat vector; the [`Layout`]
//! table maps layer/kind/shape onto contiguous ranges of that vector. The
//! flat view is the currency of the whole workbench: pruning masks,
//! gradients, optimizer moments and starting-point references all align
//! index-for-index with it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{lit, Real};
use crate::rng::Pcg64;

/// Elementwise activation of a hidden layer. Output layers are always linear.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Swish,
    Linear,
}

impl Activation {
    /// Value and first derivative.
    #[inline]
    pub fn eval1<T: Real>(self, x: T) -> (T, T) {
        match self {
            Activation::Linear => (x, T::one()),
            Activation::Relu => {
                if x > T::zero() {
                    (x, T::one())
                } else {
                    (T::zero(), T::zero())
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                (t, T::one() - t * t)
            }
            Activation::Swish => {
                let s = sigmoid(x);
                (x * s, s + x * s * (T::one() - s))
            }
        }
    }

    /// Value and derivatives up to third order, as needed when
    /// second-order jets are themselves differentiated.
    #[inline]
    pub fn eval3<T: Real>(self, x: T) -> (T, T, T, T) {
        match self {
            Activation::Linear => (x, T::one(), T::zero(), T::zero()),
            Activation::Relu => {
                // Subgradient convention: f'(0) = 0; higher derivatives 0.
                if x > T::zero() {
                    (x, T::one(), T::zero(), T::zero())
                } else {
                    (T::zero(), T::zero(), T::zero(), T::zero())
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                let one = T::one();
                let d1 = one - t * t;
                let d2 = -lit::<T>(2.0) * t * d1;
                let d3 = d1 * (lit::<T>(6.0) * t * t - lit::<T>(2.0));
                (t, d1, d2, d3)
            }
            Activation::Swish => {
                let s = sigmoid(x);
                let one = T::one();
                let two = lit::<T>(2.0);
                let s1 = s * (one - s);
                let s2 = s1 * (one - two * s);
                let s3 = s2 * (one - two * s) - two * s1 * s1;
                let f = x * s;
                let f1 = s + x * s1;
                let f2 = two * s1 + x * s2;
                let f3 = lit::<T>(3.0) * s2 + x * s3;
                (f, f1, f2, f3)
            }
        }
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Shape of a dense MLP plus the seed that fixes its initial weights.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_width: usize,
    pub hidden: Vec<(usize, Activation)>,
    pub output_width: usize,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn new(
        input_width: usize,
        hidden: Vec<(usize, Activation)>,
        output_width: usize,
        seed: u64,
    ) -> Self {
        NetworkSpec {
            input_width,
            hidden,
            output_width,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.output_width == 0 {
            return Err(Error::InvalidConfig(
                "input and output widths must be >= 1".into(),
            ));
        }
        if self.hidden.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one hidden layer required".into(),
            ));
        }
        if self.hidden.iter().any(|&(w, _)| w == 0) {
            return Err(Error::InvalidConfig("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    /// Widths of the affine layers as (fan_in, fan_out, activation) triples;
    /// the final layer is linear.
    pub fn layer_dims(&self) -> Vec<(usize, usize, Activation)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.input_width;
        for &(w, act) in &self.hidden {
            dims.push((fan_in, w, act));
            fan_in = w;
        }
        dims.push((fan_in, self.output_width, Activation::Linear));
        dims
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
}

/// One contiguous block of the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub layer: usize,
    pub kind: ParamKind,
    /// (rows, cols); biases are (len, 1).
    pub shape: (usize, usize),
    pub offset: usize,
    pub len: usize,
}

/// Ordered table of parameter blocks. A pure function of [`NetworkSpec`];
/// never depends on weight values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub entries: Vec<LayoutEntry>,
    pub total_len: usize,
}

impl Layout {
    pub fn for_spec(spec: &NetworkSpec) -> Layout {
        let mut entries = Vec::new();
        let mut offset = 0;
        for (layer, (fan_in, fan_out, _)) in spec.layer_dims().into_iter().enumerate() {
            let wlen = fan_in * fan_out;
            entries.push(LayoutEntry {
                layer,
                kind: ParamKind::Weight,
                shape: (fan_out, fan_in),
                offset,
                len: wlen,
            });
            offset += wlen;
            entries.push(LayoutEntry {
                layer,
                kind: ParamKind::Bias,
                shape: (fan_out, 1),
                offset,
                len: fan_out,
            });
            offset += fan_out;
        }
        Layout {
            entries,
            total_len: offset,
        }
    }

    /// True where the entry at a flat index belongs to a bias block.
    pub fn is_bias(&self) -> Vec<bool> {
        let mut mask = vec![false; self.total_len];
        for e in &self.entries {
            if e.kind == ParamKind::Bias {
                mask[e.offset..e.offset + e.len].fill(true);
            }
        }
        mask
    }
}

/// Flat weight vector together with its layout table.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector<T> {
    pub data: Vec<T>,
    pub layout: Layout,
}

impl<T: Real> ParamVector<T> {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Euclidean distance to another vector of the same layout.
    pub fn distance(&self, other: &ParamVector<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b) * (a - b))
            .fold(T::zero(), |acc, d| acc + d)
            .sqrt()
    }
}

/// Dense MLP with flat parameter storage.
#[derive(Clone, Debug)]
pub struct Network<T> {
    spec: NetworkSpec,
    layout: Layout,
    params: Vec<T>,
}

impl<T: Real> Network<T> {
    /// Builds the network with He-normal weights (std = sqrt(2/fan_in)) and
    /// zero biases, drawn from the seed's init stream. Same spec and seed
    /// give bit-identical parameters.
    pub fn build(spec: NetworkSpec) -> Result<Network<T>> {
        spec.validate()?;
        let layout = Layout::for_spec(&spec);
        let mut params = vec![T::zero(); layout.total_len];
        let mut rng = Pcg64::for_purpose(spec.seed, &[WEIGHT_INIT_LABEL]);
        for e in &layout.entries {
            if e.kind == ParamKind::Weight {
                let fan_in = e.shape.1;
                let std = (2.0 / fan_in as f64).sqrt();
                for p in &mut params[e.offset..e.offset + e.len] {
                    *p = lit::<T>(rng.normal() * std);
                }
            }
        }
        Ok(Network {
            spec,
            layout,
            params,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn input_width(&self) -> usize {
        self.spec.input_width
    }

    pub fn output_width(&self) -> usize {
        self.spec.output_width
    }

    pub fn num_params(&self) -> usize {
        self.layout.total_len
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Weight matrix (row-major, fan_out x fan_in) and bias of one layer.
    pub fn layer(&self, layer: usize) -> (&[T], &[T]) {
        let w = &self.layout.entries[2 * layer];
        let b = &self.layout.entries[2 * layer + 1];
        (
            &self.params[w.offset..w.offset + w.len],
            &self.params[b.offset..b.offset + b.len],
        )
    }

    pub fn num_layers(&self) -> usize {
        self.layout.entries.len() / 2
    }

    /// Copy of the parameters as a flat vector.
    pub fn flatten(&self) -> ParamVector<T> {
        ParamVector {
            data: self.params.clone(),
            layout: self.layout.clone(),
        }
    }

    /// Replaces the parameters from a flat vector.
    pub fn load(&mut self, v: &ParamVector<T>) -> Result<()> {
        if v.data.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                what: "ParamVector::load",
                expected: self.params.len(),
                got: v.data.len(),
            });
        }
        self.params.copy_from_slice(&v.data);
        Ok(())
    }
}

const WEIGHT_INIT_LABEL: u64 = 0x57_49;

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_200() -> NetworkSpec {
        NetworkSpec::new(
            10,
            vec![(200, Activation::Relu), (200, Activation::Relu)],
            1,
            0,
        )
    }

    #[test]
    fn parameter_count_matches_hand_count() {
        let net: Network<f64> = Network::build(spec_200()).unwrap();
        // 10*200+200 + 200*200+200 + 200*1+1
        assert_eq!(net.num_params(), 42_601);
    }

    #[test]
    fn same_seed_same_params() {
        let a: Network<f64> = Network::build(spec_200()).unwrap();
        let b: Network<f64> = Network::build(spec_200()).unwrap();
        assert_eq!(a.params(), b.params());
        let mut spec = spec_200();
        spec.seed = 1;
        let c: Network<f64> = Network::build(spec).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn he_normal_std_within_ten_percent() {
        let net: Network<f64> = Network::build(spec_200()).unwrap();
        // Second hidden layer: fan_in 200, 40,000 draws.
        let (w, _) = net.layer(1);
        assert_eq!(w.len(), 40_000);
        let mean: f64 = w.iter().sum::<f64>() / w.len() as f64;
        let var: f64 = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / w.len() as f64;
        let std = var.sqrt();
        let target = (2.0f64 / 200.0).sqrt();
        assert!(
            (std - target).abs() < 0.1 * target,
            "std {std} vs target {target}"
        );
    }

    #[test]
    fn biases_start_at_zero() {
        let net: Network<f64> = Network::build(spec_200()).unwrap();
        for l in 0..net.num_layers() {
            let (_, b) = net.layer(l);
            assert!(b.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn flatten_load_round_trip() {
        let mut net: Network<f64> = Network::build(spec_200()).unwrap();
        let v = net.flatten();
        net.load(&v).unwrap();
        assert_eq!(net.flatten().data, v.data);
    }

    #[test]
    fn load_rejects_wrong_length() {
        let mut net: Network<f64> = Network::build(spec_200()).unwrap();
        let mut v = net.flatten();
        v.data.pop();
        assert!(net.load(&v).is_err());
    }

    #[test]
    fn layout_is_contiguous_and_value_independent() {
        let spec = spec_200();
        let layout = Layout::for_spec(&spec);
        let mut expected_offset = 0;
        for e in &layout.entries {
            assert_eq!(e.offset, expected_offset);
            expected_offset += e.len;
        }
        assert_eq!(expected_offset, layout.total_len);

        let a: Network<f64> = Network::build(spec.clone()).unwrap();
        let mut spec2 = spec;
        spec2.seed = 77;
        let b: Network<f64> = Network::build(spec2).unwrap();
        assert_eq!(a.layout(), b.layout());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(NetworkSpec::new(0, vec![(4, Activation::Tanh)], 1, 0)
            .validate()
            .is_err());
        assert!(NetworkSpec::new(2, vec![], 1, 0).validate().is_err());
        assert!(NetworkSpec::new(2, vec![(0, Activation::Tanh)], 1, 0)
            .validate()
            .is_err());
    }

    #[test]
    fn activation_third_derivatives_match_finite_differences() {
        let h = 1e-4;
        for act in [Activation::Tanh, Activation::Swish] {
            for &x in &[-1.3f64, -0.2, 0.4, 1.7] {
                let (_, d1, d2, d3) = act.eval3(x);
                let (fp, _) = act.eval1(x + h);
                let (fm, _) = act.eval1(x - h);
                let (f0, _) = act.eval1(x);
                let fd1 = (fp - fm) / (2.0 * h);
                let fd2 = (fp - 2.0 * f0 + fm) / (h * h);
                assert!((d1 - fd1).abs() < 1e-7, "{act:?} d1 at {x}");
                assert!((d2 - fd2).abs() < 1e-6, "{act:?} d2 at {x}");
                let (_, _, d2p, _) = act.eval3(x + h);
                let (_, _, d2m, _) = act.eval3(x - h);
                let fd3 = (d2p - d2m) / (2.0 * h);
                assert!((d3 - fd3).abs() < 1e-6, "{act:?} d3 at {x}");
            }
        }
    }
}
