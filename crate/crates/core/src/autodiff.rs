//! Differentiation engine for dense networks.
//!
//! Three capabilities, all hand-derived at the layer level and checked
//! against finite differences in the test suite:
//!
//! * reverse-mode gradients of batch losses with respect to parameters
//!   (and, when asked, with respect to inputs — the vector-Jacobian
//!   product used to differentiate through ODE solver steps);
//! * forward propagation of second-order jets [`Jet2`] through a network,
//!   giving exact first and second derivatives of the output with respect
//!   to one input coordinate;
//! * reverse-mode through the jet propagation itself, so losses built from
//!   input derivatives (PDE residuals) can be differentiated with respect
//!   to parameters.
//!
//! Everything here is single-threaded per evaluation and deterministic:
//! identical weights and inputs give bit-identical results.

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::real::{lit, Real};

/// Gradient with respect to the flat parameter vector, aligned
/// index-for-index with [`crate::nn::ParamVector`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector<T> {
    pub entries: Vec<T>,
}

impl<T: Real> GradientVector<T> {
    pub fn zeros(len: usize) -> Self {
        GradientVector {
            entries: vec![T::zero(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// self += c * other
    pub fn axpy(&mut self, c: T, other: &GradientVector<T>) {
        for (a, &b) in self.entries.iter_mut().zip(&other.entries) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: T) {
        for a in &mut self.entries {
            *a *= c;
        }
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        match self.entries.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite {
                what,
                sample: Some(i),
            }),
        }
    }
}

// ---------------------------------------------------------------------------
// Batched affine kernels. Activations are stored sample-major: row s holds
// sample s, contiguous over the layer width.
// ---------------------------------------------------------------------------

fn affine_fwd<T: Real>(w: &[T], b: &[T], x: &[T], out: &mut [T], n: usize, fi: usize, fo: usize) {
    for s in 0..n {
        let xs = &x[s * fi..(s + 1) * fi];
        let os = &mut out[s * fo..(s + 1) * fo];
        for k in 0..fo {
            let row = &w[k * fi..(k + 1) * fi];
            let mut acc = b[k];
            for j in 0..fi {
                acc += row[j] * xs[j];
            }
            os[k] = acc;
        }
    }
}

/// Same as [`affine_fwd`] with the bias omitted (derivative channels of jets).
fn linear_fwd<T: Real>(w: &[T], x: &[T], out: &mut [T], n: usize, fi: usize, fo: usize) {
    for s in 0..n {
        let xs = &x[s * fi..(s + 1) * fi];
        let os = &mut out[s * fo..(s + 1) * fo];
        for k in 0..fo {
            let row = &w[k * fi..(k + 1) * fi];
            let mut acc = T::zero();
            for j in 0..fi {
                acc += row[j] * xs[j];
            }
            os[k] = acc;
        }
    }
}

/// dx[s,j] = sum_k dout[s,k] w[k,j]
fn affine_bwd_input<T: Real>(w: &[T], dout: &[T], dx: &mut [T], n: usize, fi: usize, fo: usize) {
    for s in 0..n {
        let ds = &dout[s * fo..(s + 1) * fo];
        let xs = &mut dx[s * fi..(s + 1) * fi];
        xs.fill(T::zero());
        for k in 0..fo {
            let row = &w[k * fi..(k + 1) * fi];
            let d = ds[k];
            for j in 0..fi {
                xs[j] += d * row[j];
            }
        }
    }
}

/// dw[k,j] += sum_s dout[s,k] x[s,j]; db[k] += sum_s dout[s,k]
fn affine_bwd_params<T: Real>(
    x: &[T],
    dout: &[T],
    dw: &mut [T],
    db: &mut [T],
    n: usize,
    fi: usize,
    fo: usize,
) {
    for s in 0..n {
        let xs = &x[s * fi..(s + 1) * fi];
        let ds = &dout[s * fo..(s + 1) * fo];
        for k in 0..fo {
            let d = ds[k];
            if d == T::zero() {
                continue;
            }
            let row = &mut dw[k * fi..(k + 1) * fi];
            for j in 0..fi {
                row[j] += d * xs[j];
            }
            db[k] += d;
        }
    }
}

// ---------------------------------------------------------------------------
// Plain forward / backward
// ---------------------------------------------------------------------------

/// Per-batch caches kept by the forward pass for a later backward pass.
pub struct ForwardCache<T> {
    n: usize,
    /// acts[0] is the input batch; acts[l+1] the output of layer l.
    acts: Vec<Vec<T>>,
    /// f'(z) per hidden/output layer, sample-major.
    dacts: Vec<Vec<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn outputs(&self) -> &[T] {
        self.acts.last().unwrap()
    }

    pub fn batch_len(&self) -> usize {
        self.n
    }
}

/// Forward pass over a batch of `n` inputs packed sample-major.
pub fn forward_batch<T: Real>(net: &Network<T>, inputs: &[T], n: usize) -> Result<ForwardCache<T>> {
    let in_w = net.input_width();
    if inputs.len() != n * in_w {
        return Err(Error::DimensionMismatch {
            what: "forward input",
            expected: n * in_w,
            got: inputs.len(),
        });
    }
    let dims = net.spec().layer_dims();
    let mut acts: Vec<Vec<T>> = Vec::with_capacity(dims.len() + 1);
    let mut dacts: Vec<Vec<T>> = Vec::with_capacity(dims.len());
    acts.push(inputs.to_vec());
    for (l, &(fi, fo, act)) in dims.iter().enumerate() {
        let (w, b) = net.layer(l);
        let mut z = vec![T::zero(); n * fo];
        affine_fwd(w, b, &acts[l], &mut z, n, fi, fo);
        let mut da = vec![T::zero(); n * fo];
        for (zi, di) in z.iter_mut().zip(da.iter_mut()) {
            let (v, d) = act.eval1(*zi);
            *zi = v;
            *di = d;
        }
        acts.push(z);
        dacts.push(da);
    }
    Ok(ForwardCache { n, acts, dacts })
}

/// Deterministic forward pass for a single input.
pub fn forward<T: Real>(net: &Network<T>, input: &[T]) -> Result<Vec<T>> {
    let cache = forward_batch(net, input, 1)?;
    Ok(cache.outputs().to_vec())
}

/// Reverse pass. `dout` holds d(loss)/d(output) sample-major; parameter
/// gradients are accumulated into `grad`. Returns the adjoint of the input
/// batch when `want_input_adjoint` is set.
pub fn backward_batch<T: Real>(
    net: &Network<T>,
    cache: &ForwardCache<T>,
    dout: &[T],
    grad: &mut GradientVector<T>,
    want_input_adjoint: bool,
) -> Option<Vec<T>> {
    let dims = net.spec().layer_dims();
    let n = cache.n;
    let layout = net.layout();
    let mut delta = dout.to_vec();
    for l in (0..dims.len()).rev() {
        let (fi, fo, _) = dims[l];
        // delta currently holds dL/d(act output of layer l); fold in f'.
        for (d, &da) in delta.iter_mut().zip(&cache.dacts[l]) {
            *d *= da;
        }
        let (w, _) = net.layer(l);
        let w_entry = &layout.entries[2 * l];
        let b_entry = &layout.entries[2 * l + 1];
        {
            let (dw_part, db_part) = {
                let entries = &mut grad.entries;
                let (left, right) = entries.split_at_mut(b_entry.offset);
                (
                    &mut left[w_entry.offset..w_entry.offset + w_entry.len],
                    &mut right[..b_entry.len],
                )
            };
            affine_bwd_params(&cache.acts[l], &delta, dw_part, db_part, n, fi, fo);
        }
        if l > 0 || want_input_adjoint {
            let mut dx = vec![T::zero(); n * fi];
            affine_bwd_input(w, &delta, &mut dx, n, fi, fo);
            delta = dx;
        } else {
            return None;
        }
    }
    Some(delta)
}

/// Mean loss and its parameter gradient over a batch, with the per-sample
/// loss and output adjoint supplied by `loss`. The closure receives the
/// sample index and predictions and must fill `dpred` with the derivative of
/// the *per-sample* loss; the 1/n averaging is applied here.
pub fn batch_loss_grad<T: Real, F>(
    net: &Network<T>,
    inputs: &[T],
    n: usize,
    mut loss: F,
) -> Result<(T, GradientVector<T>)>
where
    F: FnMut(usize, &[T], &mut [T]) -> T,
{
    if n == 0 {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let out_w = net.output_width();
    let cache = forward_batch(net, inputs, n)?;
    let preds = cache.outputs();
    let inv_n = T::one() / lit::<T>(n as f64);
    let mut total = T::zero();
    let mut dout = vec![T::zero(); n * out_w];
    for s in 0..n {
        let p = &preds[s * out_w..(s + 1) * out_w];
        let d = &mut dout[s * out_w..(s + 1) * out_w];
        let li = loss(s, p, d);
        if !li.is_finite() {
            return Err(Error::NonFinite {
                what: "batch loss",
                sample: Some(s),
            });
        }
        for di in d.iter_mut() {
            *di *= inv_n;
        }
        total += li;
    }
    total *= inv_n;
    let mut grad = GradientVector::zeros(net.num_params());
    backward_batch(net, &cache, &dout, &mut grad, false);
    grad.check_finite("batch gradient")?;
    Ok((total, grad))
}

/// Mean squared error over a batch (averaged over samples and output
/// components) and its parameter gradient.
pub fn mse_loss_grad<T: Real>(
    net: &Network<T>,
    inputs: &[T],
    targets: &[T],
    n: usize,
) -> Result<(T, GradientVector<T>)> {
    let out_w = net.output_width();
    if targets.len() != n * out_w {
        return Err(Error::DimensionMismatch {
            what: "mse targets",
            expected: n * out_w,
            got: targets.len(),
        });
    }
    let inv_m = T::one() / lit::<T>(out_w as f64);
    let two = lit::<T>(2.0);
    batch_loss_grad(net, inputs, n, |s, pred, dpred| {
        let t = &targets[s * out_w..(s + 1) * out_w];
        let mut l = T::zero();
        for j in 0..out_w {
            let r = pred[j] - t[j];
            l += r * r * inv_m;
            dpred[j] = two * r * inv_m;
        }
        l
    })
}

/// Mean squared error of a batch without gradients.
pub fn mse_loss<T: Real>(net: &Network<T>, inputs: &[T], targets: &[T], n: usize) -> Result<T> {
    let out_w = net.output_width();
    let cache = forward_batch(net, inputs, n)?;
    let preds = cache.outputs();
    let mut total = T::zero();
    for (p, t) in preds.iter().zip(targets) {
        let r = *p - *t;
        total += r * r;
    }
    Ok(total / lit::<T>((n * out_w) as f64))
}

/// Vector-Jacobian product for a batch: given adjoints of the outputs,
/// accumulates parameter gradients into `grad` and returns the adjoints of
/// the inputs. This is the primitive used to differentiate through unrolled
/// ODE solver steps.
pub fn vjp_batch<T: Real>(
    net: &Network<T>,
    cache: &ForwardCache<T>,
    dout: &[T],
    grad: &mut GradientVector<T>,
) -> Vec<T> {
    backward_batch(net, cache, dout, grad, true).expect("input adjoint requested")
}

// ---------------------------------------------------------------------------
// Second-order jets
// ---------------------------------------------------------------------------

/// Truncated second-order Taylor carrier along one input direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2<T> {
    pub v: T,
    pub d1: T,
    pub d2: T,
}

impl<T: Real> Jet2<T> {
    pub fn constant(v: T) -> Self {
        Jet2 {
            v,
            d1: T::zero(),
            d2: T::zero(),
        }
    }

    /// Seed for the coordinate being differentiated: (x, 1, 0).
    pub fn variable(v: T) -> Self {
        Jet2 {
            v,
            d1: T::one(),
            d2: T::zero(),
        }
    }

    /// Propagation through an elementwise function given f', f'' at v.
    pub fn chain(self, f: T, f1: T, f2: T) -> Self {
        Jet2 {
            v: f,
            d1: f1 * self.d1,
            d2: f2 * self.d1 * self.d1 + f1 * self.d2,
        }
    }
}

impl<T: Real> std::ops::Add for Jet2<T> {
    type Output = Jet2<T>;
    fn add(self, rhs: Self) -> Self {
        Jet2 {
            v: self.v + rhs.v,
            d1: self.d1 + rhs.d1,
            d2: self.d2 + rhs.d2,
        }
    }
}

impl<T: Real> std::ops::Sub for Jet2<T> {
    type Output = Jet2<T>;
    fn sub(self, rhs: Self) -> Self {
        Jet2 {
            v: self.v - rhs.v,
            d1: self.d1 - rhs.d1,
            d2: self.d2 - rhs.d2,
        }
    }
}

impl<T: Real> std::ops::Mul for Jet2<T> {
    type Output = Jet2<T>;
    fn mul(self, rhs: Self) -> Self {
        Jet2 {
            v: self.v * rhs.v,
            d1: self.d1 * rhs.v + self.v * rhs.d1,
            d2: self.d2 * rhs.v + lit::<T>(2.0) * self.d1 * rhs.d1 + self.v * rhs.d2,
        }
    }
}

/// Caches of one jet propagation through the network, enough to run the
/// reverse pass of the jet computation.
pub struct JetCache<T> {
    n: usize,
    /// Jets entering each affine layer (and the output jets last); each
    /// entry is three sample-major planes (v, d1, d2).
    acts: Vec<[Vec<T>; 3]>,
    /// Activation derivative tables (f1, f2, f3) and pre-activation jet
    /// derivative planes (z1, z2), per layer.
    tables: Vec<[Vec<T>; 5]>,
}

impl<T: Real> JetCache<T> {
    pub fn output_jets(&self) -> (&[T], &[T], &[T]) {
        let last = self.acts.last().unwrap();
        (&last[0], &last[1], &last[2])
    }
}

/// Propagates jets through the network for a batch of inputs, seeding the
/// given input axis with (x, 1, 0) and the others as constants.
pub fn jet_forward_batch<T: Real>(
    net: &Network<T>,
    inputs: &[T],
    n: usize,
    axis: usize,
) -> Result<JetCache<T>> {
    let in_w = net.input_width();
    if inputs.len() != n * in_w {
        return Err(Error::DimensionMismatch {
            what: "jet input",
            expected: n * in_w,
            got: inputs.len(),
        });
    }
    if axis >= in_w {
        return Err(Error::DimensionMismatch {
            what: "jet axis",
            expected: in_w,
            got: axis,
        });
    }
    let dims = net.spec().layer_dims();
    let mut acts: Vec<[Vec<T>; 3]> = Vec::with_capacity(dims.len() + 1);
    let mut d1 = vec![T::zero(); n * in_w];
    for s in 0..n {
        d1[s * in_w + axis] = T::one();
    }
    acts.push([inputs.to_vec(), d1, vec![T::zero(); n * in_w]]);
    let mut tables: Vec<[Vec<T>; 5]> = Vec::with_capacity(dims.len());

    for (l, &(fi, fo, act)) in dims.iter().enumerate() {
        let (w, b) = net.layer(l);
        let mut zv = vec![T::zero(); n * fo];
        let mut z1 = vec![T::zero(); n * fo];
        let mut z2 = vec![T::zero(); n * fo];
        affine_fwd(w, b, &acts[l][0], &mut zv, n, fi, fo);
        linear_fwd(w, &acts[l][1], &mut z1, n, fi, fo);
        linear_fwd(w, &acts[l][2], &mut z2, n, fi, fo);

        let mut f1t = vec![T::zero(); n * fo];
        let mut f2t = vec![T::zero(); n * fo];
        let mut f3t = vec![T::zero(); n * fo];
        let mut av = vec![T::zero(); n * fo];
        let mut a1 = vec![T::zero(); n * fo];
        let mut a2 = vec![T::zero(); n * fo];
        for i in 0..n * fo {
            let (f, f1, f2, f3) = act.eval3(zv[i]);
            av[i] = f;
            a1[i] = f1 * z1[i];
            a2[i] = f2 * z1[i] * z1[i] + f1 * z2[i];
            f1t[i] = f1;
            f2t[i] = f2;
            f3t[i] = f3;
        }
        tables.push([f1t, f2t, f3t, z1, z2]);
        acts.push([av, a1, a2]);
    }
    Ok(JetCache { n, acts, tables })
}

/// Reverse pass through a jet propagation. `dv`, `dd1`, `dd2` are the
/// adjoints of the output jets (sample-major); parameter gradients are
/// accumulated into `grad`.
pub fn jet_backward_batch<T: Real>(
    net: &Network<T>,
    cache: &JetCache<T>,
    dv: &[T],
    dd1: &[T],
    dd2: &[T],
    grad: &mut GradientVector<T>,
) {
    let dims = net.spec().layer_dims();
    let n = cache.n;
    let layout = net.layout();
    let two = lit::<T>(2.0);
    let mut adj_v = dv.to_vec();
    let mut adj_1 = dd1.to_vec();
    let mut adj_2 = dd2.to_vec();

    for l in (0..dims.len()).rev() {
        let (fi, fo, _) = dims[l];
        let [f1t, f2t, f3t, z1, z2] = &cache.tables[l];
        // Through the activation: jets (zv,z1,z2) -> (f, f1*z1, f2*z1^2 + f1*z2).
        for i in 0..n * fo {
            let (f1, f2, f3) = (f1t[i], f2t[i], f3t[i]);
            let (z1i, z2i) = (z1[i], z2[i]);
            let av = adj_v[i];
            let a1 = adj_1[i];
            let a2 = adj_2[i];
            adj_v[i] = av * f1 + a1 * f2 * z1i + a2 * (f3 * z1i * z1i + f2 * z2i);
            adj_1[i] = a1 * f1 + a2 * two * f2 * z1i;
            adj_2[i] = a2 * f1;
        }
        // Through the affine map, for each jet plane.
        let (w, _) = net.layer(l);
        let w_entry = &layout.entries[2 * l];
        let b_entry = &layout.entries[2 * l + 1];
        let input = &cache.acts[l];
        {
            let entries = &mut grad.entries;
            let (left, right) = entries.split_at_mut(b_entry.offset);
            let dw = &mut left[w_entry.offset..w_entry.offset + w_entry.len];
            let db = &mut right[..b_entry.len];
            affine_bwd_params(&input[0], &adj_v, dw, db, n, fi, fo);
            // Bias feeds only the value plane; derivative planes update W only.
            let mut db_sink = vec![T::zero(); fo];
            affine_bwd_params(&input[1], &adj_1, dw, &mut db_sink, n, fi, fo);
            db_sink.fill(T::zero());
            affine_bwd_params(&input[2], &adj_2, dw, &mut db_sink, n, fi, fo);
        }
        if l > 0 {
            let mut next_v = vec![T::zero(); n * fi];
            let mut next_1 = vec![T::zero(); n * fi];
            let mut next_2 = vec![T::zero(); n * fi];
            affine_bwd_input(w, &adj_v, &mut next_v, n, fi, fo);
            affine_bwd_input(w, &adj_1, &mut next_1, n, fi, fo);
            affine_bwd_input(w, &adj_2, &mut next_2, n, fi, fo);
            adj_v = next_v;
            adj_1 = next_1;
            adj_2 = next_2;
        }
    }
}

/// Value, first and second derivative of a scalar-output network along one
/// input axis, by jet propagation.
pub fn input_jet<T: Real>(net: &Network<T>, input: &[T], axis: usize) -> Result<Jet2<T>> {
    if net.output_width() != 1 {
        return Err(Error::Unsupported(format!(
            "input_jet requires a scalar output, model has {}",
            net.output_width()
        )));
    }
    let cache = jet_forward_batch(net, input, 1, axis)?;
    let (v, d1, d2) = cache.output_jets();
    Ok(Jet2 {
        v: v[0],
        d1: d1[0],
        d2: d2[0],
    })
}

// ---------------------------------------------------------------------------
// PDE residuals over jets
// ---------------------------------------------------------------------------

/// The input derivatives a space-time residual consumes at one point of a
/// scalar field u(x, y, t).
#[derive(Clone, Copy, Debug)]
pub struct PdeJets<T> {
    pub u: T,
    pub u_t: T,
    pub u_xx: T,
    pub u_yy: T,
}

/// A pointwise residual form r(u, u_t, u_xx, u_yy) with closed-form partials.
pub trait ResidualForm<T> {
    /// Residual value and its partial derivatives with respect to
    /// (u, u_t, u_xx, u_yy).
    fn residual(&self, jets: &PdeJets<T>) -> (T, [T; 4]);
}

/// Heat/diffusion residual r = u_t - nu * (u_xx + u_yy).
#[derive(Clone, Copy, Debug)]
pub struct HeatResidual<T> {
    pub diffusivity: T,
}

impl<T: Real> ResidualForm<T> for HeatResidual<T> {
    fn residual(&self, jets: &PdeJets<T>) -> (T, [T; 4]) {
        let r = jets.u_t - self.diffusivity * (jets.u_xx + jets.u_yy);
        (r, [T::zero(), T::one(), -self.diffusivity, -self.diffusivity])
    }
}

/// Mean squared residual over an iterator of jet bundles. Shared by the
/// network path and by analytic oracles in tests.
pub fn residual_loss<T: Real, R: ResidualForm<T>>(
    form: &R,
    jets: impl IntoIterator<Item = PdeJets<T>>,
) -> T {
    let mut total = T::zero();
    let mut count = 0usize;
    for j in jets {
        let (r, _) = form.residual(&j);
        total += r * r;
        count += 1;
    }
    if count == 0 {
        T::zero()
    } else {
        total / lit::<T>(count as f64)
    }
}

/// Jet bundle of a scalar-output network at one (x, y, t) point.
/// Input axes are 0 = x, 1 = y, 2 = t.
pub fn pde_jets<T: Real>(net: &Network<T>, point: [T; 3]) -> Result<PdeJets<T>> {
    let jx = input_jet(net, &point, 0)?;
    let jy = input_jet(net, &point, 1)?;
    let jt = input_jet(net, &point, 2)?;
    Ok(PdeJets {
        u: jx.v,
        u_t: jt.d1,
        u_xx: jx.d2,
        u_yy: jy.d2,
    })
}

/// Mean squared residual over a collocation batch and its parameter
/// gradient, by reverse mode through three jet propagations (one per input
/// axis). Points are packed sample-major as (x, y, t).
pub fn residual_loss_grad<T: Real, R: ResidualForm<T>>(
    net: &Network<T>,
    form: &R,
    points: &[T],
    n: usize,
) -> Result<(T, GradientVector<T>)> {
    if net.output_width() != 1 {
        return Err(Error::Unsupported(
            "residual loss requires a scalar-output model".into(),
        ));
    }
    if net.input_width() != 3 {
        return Err(Error::DimensionMismatch {
            what: "residual input width",
            expected: 3,
            got: net.input_width(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidConfig("empty collocation batch".into()));
    }
    let cx = jet_forward_batch(net, points, n, 0)?;
    let cy = jet_forward_batch(net, points, n, 1)?;
    let ct = jet_forward_batch(net, points, n, 2)?;

    let inv_n = T::one() / lit::<T>(n as f64);
    let two = lit::<T>(2.0);
    let mut loss = T::zero();
    let mut seed_t_v = vec![T::zero(); n];
    let mut seed_t_d1 = vec![T::zero(); n];
    let mut seed_x_d2 = vec![T::zero(); n];
    let mut seed_y_d2 = vec![T::zero(); n];
    {
        let (uv, _, ux2) = cx.output_jets();
        let (_, _, uy2) = cy.output_jets();
        let (_, ut1, _) = ct.output_jets();
        for s in 0..n {
            let jets = PdeJets {
                u: uv[s],
                u_t: ut1[s],
                u_xx: ux2[s],
                u_yy: uy2[s],
            };
            let (r, parts) = form.residual(&jets);
            if !r.is_finite() {
                return Err(Error::NonFinite {
                    what: "pde residual",
                    sample: Some(s),
                });
            }
            loss += r * r;
            let c = two * r * inv_n;
            // The value adjoint is routed through exactly one propagation
            // (the t pass) since all three compute the same u.
            seed_t_v[s] = c * parts[0];
            seed_t_d1[s] = c * parts[1];
            seed_x_d2[s] = c * parts[2];
            seed_y_d2[s] = c * parts[3];
        }
    }
    loss *= inv_n;

    let zeros = vec![T::zero(); n];
    let mut grad = GradientVector::zeros(net.num_params());
    jet_backward_batch(net, &cx, &zeros, &zeros, &seed_x_d2, &mut grad);
    jet_backward_batch(net, &cy, &zeros, &zeros, &seed_y_d2, &mut grad);
    jet_backward_batch(net, &ct, &seed_t_v, &seed_t_d1, &zeros, &mut grad);
    grad.check_finite("residual gradient")?;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, NetworkSpec};
    use crate::rng::Pcg64;

    fn hand_net(
        input: usize,
        hidden: Vec<(usize, Activation)>,
        output: usize,
        seed: u64,
    ) -> Network<f64> {
        Network::build(NetworkSpec::new(input, hidden, output, seed)).unwrap()
    }

    /// Independently coded per-neuron forward pass used as an oracle.
    fn naive_forward(net: &Network<f64>, input: &[f64]) -> Vec<f64> {
        let dims = net.spec().layer_dims();
        let mut a = input.to_vec();
        for (l, &(fi, fo, act)) in dims.iter().enumerate() {
            let (w, b) = net.layer(l);
            let mut next = Vec::with_capacity(fo);
            for k in 0..fo {
                let mut z = b[k];
                for j in 0..fi {
                    z += w[k * fi + j] * a[j];
                }
                let (v, _) = act.eval1(z);
                next.push(v);
            }
            a = next;
        }
        a
    }

    #[test]
    fn forward_single_affine_map() {
        // 1-layer net realizing y = 2x: hidden identity via linear activation.
        let mut net = hand_net(1, vec![(1, Activation::Linear)], 1, 0);
        net.params_mut().copy_from_slice(&[2.0, 0.0, 1.0, 0.0]);
        assert_eq!(forward(&net, &[3.0]).unwrap(), vec![6.0]);
    }

    #[test]
    fn forward_zero_net_is_zero() {
        let mut net = hand_net(4, vec![(8, Activation::Relu)], 3, 0);
        net.params_mut().fill(0.0);
        let out = forward(&net, &[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let net = hand_net(
            10,
            vec![(200, Activation::Relu), (200, Activation::Relu)],
            1,
            0,
        );
        let mut rng = Pcg64::new(0, 99);
        let input: Vec<f64> = (0..10).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let fast = forward(&net, &input).unwrap();
        let slow = naive_forward(&net, &input);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let net = hand_net(3, vec![(4, Activation::Tanh)], 1, 0);
        assert!(forward(&net, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn forward_deterministic() {
        let net = hand_net(5, vec![(16, Activation::Swish)], 2, 3);
        let input = [0.1, -0.4, 0.7, 0.2, -0.9];
        let a = forward(&net, &input).unwrap();
        let b = forward(&net, &input).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scalar_linear_model_gradient() {
        // y = w * x, single sample (x=1, y*=0), w=2: loss 4, grad d/dw = 4.
        let mut net = hand_net(1, vec![(1, Activation::Linear)], 1, 0);
        net.params_mut().copy_from_slice(&[1.0, 0.0, 2.0, 0.0]);
        // Output-layer weight plays the role of w; input feeds through identity.
        let (loss, grad) = mse_loss_grad(&net, &[1.0], &[0.0], 1).unwrap();
        assert!((loss - 4.0).abs() < 1e-15);
        // d loss / d w = 2*(wx - y)*x = 4 for the output weight.
        assert!((grad.entries[2] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_zero_at_interpolant() {
        let net = hand_net(2, vec![(8, Activation::Tanh)], 1, 5);
        let inputs = [0.3, -0.2, 0.9, 0.4];
        let cache = forward_batch(&net, &inputs, 2).unwrap();
        let targets = cache.outputs().to_vec();
        let (loss, grad) = mse_loss_grad(&net, &inputs, &targets, 2).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.entries.iter().all(|&g| g == 0.0));
    }

    fn central_fd_param_grad(
        net: &Network<f64>,
        inputs: &[f64],
        targets: &[f64],
        n: usize,
        h: f64,
    ) -> Vec<f64> {
        let mut probe = net.clone();
        let base = net.flatten();
        let mut g = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let mut vp = base.clone();
            vp.data[i] += h;
            probe.load(&vp).unwrap();
            let lp = mse_loss(&probe, inputs, targets, n).unwrap();
            let mut vm = base.clone();
            vm.data[i] -= h;
            probe.load(&vm).unwrap();
            let lm = mse_loss(&probe, inputs, targets, n).unwrap();
            g.push((lp - lm) / (2.0 * h));
        }
        g
    }

    fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn param_grad_matches_finite_differences() {
        let net = hand_net(
            3,
            vec![(16, Activation::Tanh), (16, Activation::Tanh)],
            1,
            11,
        );
        let mut rng = Pcg64::new(11, 4);
        let n = 8;
        let inputs: Vec<f64> = (0..n * 3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (_, grad) = mse_loss_grad(&net, &inputs, &targets, n).unwrap();
        let fd = central_fd_param_grad(&net, &inputs, &targets, n, 1e-5);
        assert!(
            max_rel_err(&grad.entries, &fd) <= 1e-6,
            "rel err {}",
            max_rel_err(&grad.entries, &fd)
        );
    }

    #[test]
    fn param_grad_linearity() {
        // grad of a*L1 + b*L2 equals a*grad(L1) + b*grad(L2); realized by
        // comparing accumulated scaled adjoints against separate runs.
        let net = hand_net(2, vec![(8, Activation::Swish)], 1, 21);
        let mut rng = Pcg64::new(21, 8);
        let n = 4;
        let inputs: Vec<f64> = (0..n * 2).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let t1: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let t2: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (a, b) = (0.7, -1.3);
        let (_, g1) = mse_loss_grad(&net, &inputs, &t1, n).unwrap();
        let (_, g2) = mse_loss_grad(&net, &inputs, &t2, n).unwrap();
        let mut combo_direct = GradientVector::zeros(net.num_params());
        combo_direct.axpy(a, &g1);
        combo_direct.axpy(b, &g2);

        let two = 2.0f64;
        let (_, combo) = batch_loss_grad(&net, &inputs, n, |s, pred, dpred| {
            let r1 = pred[0] - t1[s];
            let r2 = pred[0] - t2[s];
            dpred[0] = a * two * r1 + b * two * r2;
            a * r1 * r1 + b * r2 * r2
        })
        .unwrap();
        for (x, y) in combo.entries.iter().zip(&combo_direct.entries) {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-12);
            assert!(rel <= 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn nonfinite_loss_reports_sample() {
        let net = hand_net(1, vec![(4, Activation::Relu)], 1, 2);
        let inputs = [1.0, 2.0];
        let err = batch_loss_grad(&net, &inputs, 2, |s, _pred, dpred| {
            dpred[0] = 0.0;
            if s == 1 {
                f64::NAN
            } else {
                0.0
            }
        })
        .unwrap_err();
        match err {
            Error::NonFinite { sample, .. } => assert_eq!(sample, Some(1)),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn jet_square_by_multiplication() {
        // u(x) = x^2 at x=3 along axis 0: (9, 6, 2).
        let x = Jet2::variable(3.0f64);
        let sq = x * x;
        assert_eq!(sq.v, 9.0);
        assert_eq!(sq.d1, 6.0);
        assert_eq!(sq.d2, 2.0);
    }

    #[test]
    fn jet_identity_seed() {
        let x = Jet2::variable(1.25f64);
        let id = x.chain(x.v, 1.0, 0.0);
        assert_eq!(id, Jet2 { v: 1.25, d1: 1.0, d2: 0.0 });
    }

    #[test]
    fn jet_tanh_unit_at_origin() {
        // Network computing u = tanh(x): (0, 1, 0) at x = 0.
        let mut net = hand_net(1, vec![(1, Activation::Tanh)], 1, 0);
        net.params_mut().copy_from_slice(&[1.0, 0.0, 1.0, 0.0]);
        let jet = input_jet(&net, &[0.0], 0).unwrap();
        assert_eq!(jet.v, 0.0);
        assert!((jet.d1 - 1.0).abs() < 1e-15);
        assert_eq!(jet.d2, 0.0);
    }

    #[test]
    fn input_jet_rejects_multi_output() {
        let net = hand_net(2, vec![(4, Activation::Tanh)], 2, 0);
        assert!(input_jet(&net, &[0.1, 0.2], 0).is_err());
    }

    #[test]
    fn input_jet_matches_finite_differences() {
        let net = hand_net(
            2,
            vec![
                (32, Activation::Swish),
                (32, Activation::Swish),
                (32, Activation::Swish),
                (32, Activation::Swish),
                (32, Activation::Swish),
                (32, Activation::Swish),
            ],
            1,
            7,
        );
        let h = 1e-4;
        let base = [0.3, -0.6];
        for axis in 0..2 {
            let jet = input_jet(&net, &base, axis).unwrap();
            let mut up = base;
            up[axis] += h;
            let mut dn = base;
            dn[axis] -= h;
            let fp = forward(&net, &up).unwrap()[0];
            let fm = forward(&net, &dn).unwrap()[0];
            let f0 = forward(&net, &base).unwrap()[0];
            let fd1 = (fp - fm) / (2.0 * h);
            let fd2 = (fp - 2.0 * f0 + fm) / (h * h);
            let rel1 = (jet.d1 - fd1).abs() / jet.d1.abs().max(fd1.abs()).max(1e-8);
            let rel2 = (jet.d2 - fd2).abs() / jet.d2.abs().max(fd2.abs()).max(1e-8);
            assert!(rel1 <= 1e-5, "axis {axis} d1 rel {rel1}");
            assert!(rel2 <= 1e-5, "axis {axis} d2 rel {rel2}");
        }
    }

    #[test]
    fn jet_d1_consistent_with_reverse_mode_input_gradient() {
        let net = hand_net(
            3,
            vec![(16, Activation::Tanh), (16, Activation::Swish)],
            1,
            13,
        );
        let input = [0.2, -0.5, 0.8];
        let cache = forward_batch(&net, &input, 1).unwrap();
        let mut grad = GradientVector::zeros(net.num_params());
        let dx = vjp_batch(&net, &cache, &[1.0], &mut grad);
        for axis in 0..3 {
            let jet = input_jet(&net, &input, axis).unwrap();
            assert!(
                (jet.d1 - dx[axis]).abs() <= 1e-10,
                "axis {axis}: {} vs {}",
                jet.d1,
                dx[axis]
            );
        }
    }

    #[test]
    fn constant_network_solves_homogeneous_pde() {
        // All-zero weights, output bias 1: u == 1 identically.
        let mut net = hand_net(3, vec![(8, Activation::Swish)], 1, 0);
        net.params_mut().fill(0.0);
        let d = net.num_params();
        net.params_mut()[d - 1] = 1.0;
        let form = HeatResidual { diffusivity: 0.1 };
        let points = [0.3, 0.4, 0.5, 1.2, 0.9, 0.1];
        let (loss, grad) = residual_loss_grad(&net, &form, &points, 2).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.entries.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn manufactured_heat_solution_has_zero_residual() {
        // u = exp(-2 nu pi^2 t) sin(pi x) sin(pi y) solves u_t = nu (u_xx + u_yy).
        let nu = 0.07;
        let form = HeatResidual { diffusivity: nu };
        let pi = std::f64::consts::PI;
        let jets_at = |x: f64, y: f64, t: f64| {
            let amp = (-2.0 * nu * pi * pi * t).exp();
            let u = amp * (pi * x).sin() * (pi * y).sin();
            PdeJets {
                u,
                u_t: -2.0 * nu * pi * pi * u,
                u_xx: -pi * pi * u,
                u_yy: -pi * pi * u,
            }
        };
        let mut rng = Pcg64::new(5, 5);
        let pts: Vec<PdeJets<f64>> = (0..64)
            .map(|_| {
                jets_at(
                    rng.uniform(0.0, 2.0),
                    rng.uniform(0.0, 2.0),
                    rng.uniform(0.0, 1.0),
                )
            })
            .collect();
        let loss = residual_loss(&form, pts);
        assert!(loss <= 1e-10, "loss {loss}");
    }

    #[test]
    fn residual_grad_matches_finite_differences() {
        let net = hand_net(
            3,
            vec![(10, Activation::Swish), (10, Activation::Swish)],
            1,
            31,
        );
        let form = HeatResidual { diffusivity: 0.05 };
        let mut rng = Pcg64::new(31, 6);
        let n = 4;
        let points: Vec<f64> = (0..n * 3).map(|_| rng.uniform(0.1, 1.0)).collect();
        let (_, grad) = residual_loss_grad(&net, &form, &points, n).unwrap();

        let base = net.flatten();
        let mut probe = net.clone();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let mut vp = base.clone();
            vp.data[i] += h;
            probe.load(&vp).unwrap();
            let jp: Vec<PdeJets<f64>> = (0..n)
                .map(|s| pde_jets(&probe, [points[3 * s], points[3 * s + 1], points[3 * s + 2]]).unwrap())
                .collect();
            let lp = residual_loss(&form, jp);
            let mut vm = base.clone();
            vm.data[i] -= h;
            probe.load(&vm).unwrap();
            let jm: Vec<PdeJets<f64>> = (0..n)
                .map(|s| pde_jets(&probe, [points[3 * s], points[3 * s + 1], points[3 * s + 2]]).unwrap())
                .collect();
            let lm = residual_loss(&form, jm);
            let fd = (lp - lm) / (2.0 * h);
            let g = grad.entries[i];
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-7);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-5, "worst rel err {worst}");
    }
}
