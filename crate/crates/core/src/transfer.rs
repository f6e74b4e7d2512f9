//! Prune / allocate / calibrate transfer pipelines and their baselines.
//!
//! The pipeline decomposes a pre-trained weight vector into a kept part
//! (selected by global magnitude pruning, re-trained on the source task so
//! it carries all source knowledge) and a pruned part (zeroed, then trained
//! on the target task under an L2 pull toward zero while the kept part
//! stays frozen). Every baseline and ablation is dispatched through
//! [`run_strategy`] so experiment cells share one code path.

use crate::error::{Error, Result};
use crate::nn::{Network, NetworkSpec, ParamKind, ParamVector};
use crate::optim::{train, Objective, Penalty, TrainConfig, TrainLog};
use crate::real::{lit, Real};
use crate::rng::Pcg64;

/// Binary keep-mask over the flat parameter vector. Bias entries are always
/// kept; `keep_count` counts every kept entry (kept weights plus biases).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PruneMask {
    bits: Vec<bool>,
    keep_count: usize,
    kept_weights: usize,
}

impl PruneMask {
    pub fn from_bits(bits: Vec<bool>, kept_weights: usize) -> Self {
        let keep_count = bits.iter().filter(|&&b| b).count();
        PruneMask {
            bits,
            keep_count,
            kept_weights,
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Number of kept entries, biases included.
    pub fn keep_count(&self) -> usize {
        self.keep_count
    }

    /// Number of kept weight-matrix entries (the top-K of the magnitude sort).
    pub fn kept_weights(&self) -> usize {
        self.kept_weights
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Zeroes the pruned coordinates in place.
    pub fn apply<T: Real>(&self, params: &mut [T]) {
        for (p, &keep) in params.iter_mut().zip(&self.bits) {
            if !keep {
                *p = T::zero();
            }
        }
    }

    /// True where the entry is pruned (free during calibration).
    pub fn pruned_scope(&self) -> Vec<bool> {
        self.bits.iter().map(|&b| !b).collect()
    }

    /// Freeze vector for calibration: kept entries are frozen.
    pub fn freeze_kept(&self) -> Vec<bool> {
        self.bits.clone()
    }
}

/// Global magnitude pruning. Keeps the `round((1 - prune_ratio) * W)`
/// largest-magnitude entries across all weight matrices (W = number of
/// weight entries); magnitude ties break toward the lower flat index.
/// Biases are never pruned.
pub fn prune<T: Real>(w: &ParamVector<T>, prune_ratio: f64) -> Result<PruneMask> {
    if !(0.0..1.0).contains(&prune_ratio) {
        return Err(Error::InvalidConfig(format!(
            "prune ratio must be in [0, 1), got {prune_ratio}"
        )));
    }
    let is_bias = w.layout.is_bias();
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    for (i, (&x, &bias)) in w.data.iter().zip(&is_bias).enumerate() {
        if !bias {
            candidates.push((i, x.abs().to_f64().unwrap_or(f64::NAN)));
        }
    }
    let k = ((1.0 - prune_ratio) * candidates.len() as f64).round() as usize;
    // Stable sort by descending magnitude; stability gives the
    // lowest-index-wins tie rule.
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut bits: Vec<bool> = is_bias; // biases kept
    for &(idx, _) in candidates.iter().take(k) {
        bits[idx] = true;
    }
    Ok(PruneMask::from_bits(bits, k))
}

/// Empirical diagonal Fisher information.
#[derive(Clone, Debug)]
pub struct FisherDiagonal<T> {
    pub entries: Vec<T>,
}

/// Mean over samples of the squared per-sample loss gradient. The
/// per-sample loss is whatever the objective reports for a single-element
/// batch (for regression objectives, the squared-error negative
/// log-likelihood up to constants that fold into lambda).
pub fn fisher_diag<T: Real, O: Objective<T>>(
    net: &Network<T>,
    objective: &mut O,
) -> Result<FisherDiagonal<T>> {
    let n = objective.num_samples();
    if n == 0 {
        return Err(Error::InvalidConfig("fisher over empty dataset".into()));
    }
    objective.begin_epoch(0);
    let mut acc = vec![T::zero(); net.num_params()];
    for i in 0..n {
        let (_, g) = objective.loss_grad(net, &[i])?;
        g.check_finite("fisher per-sample gradient")?;
        for (a, &gi) in acc.iter_mut().zip(&g.entries) {
            *a += gi * gi;
        }
    }
    let inv_n = T::one() / lit::<T>(n as f64);
    for a in &mut acc {
        *a *= inv_n;
    }
    Ok(FisherDiagonal { entries: acc })
}

/// Re-trains the masked network on the source task (the keep-mask is
/// applied before every step and once after the loop), so the kept
/// coordinates absorb all source knowledge and every pruned coordinate of
/// the result is exactly zero.
pub fn allocate<T: Real, O: Objective<T>>(
    net: &mut Network<T>,
    mask: &PruneMask,
    source: &mut O,
    cfg: &TrainConfig<T>,
    shuffle: &mut Pcg64,
) -> Result<ParamVector<T>> {
    if mask.len() != net.num_params() {
        return Err(Error::DimensionMismatch {
            what: "allocation mask",
            expected: net.num_params(),
            got: mask.len(),
        });
    }
    let mut cfg = cfg.clone();
    cfg.remask = Some(mask.bits().to_vec());
    cfg.penalty = Penalty::None;
    train(net, source, &cfg, shuffle).map_err(|e| Error::Divergence {
        phase: "allocation",
        detail: e.to_string(),
    })?;
    Ok(net.flatten())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    Zero,
    Random,
}

/// Penalty applied to the free (pruned) coordinates during calibration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CalibratePenalty {
    L2Zero,
    None,
    /// Anchored at the free coordinates' starting point.
    L2Sp,
}

/// Trains only the pruned coordinates on the target task, starting from
/// `w_u` (zero or freshly drawn free coordinates per `init`), with the kept
/// coordinates frozen bit-exactly.
#[allow(clippy::too_many_arguments)]
pub fn calibrate<T: Real, O: Objective<T>>(
    net: &mut Network<T>,
    mask: &PruneMask,
    w_u: &ParamVector<T>,
    target: &mut O,
    lambda: T,
    init: InitMode,
    penalty: CalibratePenalty,
    cfg: &TrainConfig<T>,
    shuffle: &mut Pcg64,
    init_stream: &mut Pcg64,
) -> Result<(ParamVector<T>, TrainLog<T>)> {
    if target.num_samples() == 0 {
        return Err(Error::InvalidConfig(
            "calibration requires a non-empty target dataset".into(),
        ));
    }
    if w_u.len() != net.num_params() || mask.len() != net.num_params() {
        return Err(Error::DimensionMismatch {
            what: "calibration inputs",
            expected: net.num_params(),
            got: w_u.len(),
        });
    }
    for (i, (&x, &keep)) in w_u.data.iter().zip(mask.bits()).enumerate() {
        if !keep && x != T::zero() {
            return Err(Error::InvalidConfig(format!(
                "w_u has a non-zero pruned coordinate at index {i}"
            )));
        }
    }
    net.load(w_u)?;
    if init == InitMode::Random {
        draw_free_coordinates(net, mask, init_stream);
    }
    let start = net.flatten();
    let mut cfg = cfg.clone();
    cfg.freeze = Some(mask.freeze_kept());
    cfg.penalty_scope = Some(mask.pruned_scope());
    cfg.penalty = match penalty {
        CalibratePenalty::L2Zero => Penalty::L2Zero { lambda },
        CalibratePenalty::None => Penalty::None,
        CalibratePenalty::L2Sp => Penalty::L2Sp {
            lambda,
            reference: start.data.clone(),
        },
    };
    let log = train(net, target, &cfg, shuffle).map_err(|e| Error::Divergence {
        phase: "calibration",
        detail: e.to_string(),
    })?;
    Ok((net.flatten(), log))
}

/// He-normal draws on the pruned weight coordinates (biases are never
/// pruned, so none are drawn).
fn draw_free_coordinates<T: Real>(net: &mut Network<T>, mask: &PruneMask, stream: &mut Pcg64) {
    let entries = net.layout().entries.clone();
    let bits = mask.bits().to_vec();
    let params = net.params_mut();
    for e in &entries {
        if e.kind != ParamKind::Weight {
            continue;
        }
        let std = (2.0 / e.shape.1 as f64).sqrt();
        for i in e.offset..e.offset + e.len {
            if !bits[i] {
                params[i] = lit::<T>(stream.normal() * std);
            }
        }
    }
}

/// The transfer recipes of the workbench.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    TargetOnly,
    FineTuning,
    L2Sp,
    L2SpFisher,
    PacNet,
    PcNet,
    PacNetNoL2,
    PacNetRi,
    PanetL2Sp,
    PanetL2SpFisher,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 10] = [
        StrategyKind::TargetOnly,
        StrategyKind::FineTuning,
        StrategyKind::L2Sp,
        StrategyKind::L2SpFisher,
        StrategyKind::PacNet,
        StrategyKind::PcNet,
        StrategyKind::PacNetNoL2,
        StrategyKind::PacNetRi,
        StrategyKind::PanetL2Sp,
        StrategyKind::PanetL2SpFisher,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::TargetOnly => "target_only",
            StrategyKind::FineTuning => "fine_tuning",
            StrategyKind::L2Sp => "l2sp",
            StrategyKind::L2SpFisher => "l2sp_fisher",
            StrategyKind::PacNet => "pacnet",
            StrategyKind::PcNet => "pcnet",
            StrategyKind::PacNetNoL2 => "pacnet_no_l2",
            StrategyKind::PacNetRi => "pacnet_ri",
            StrategyKind::PanetL2Sp => "panet_l2sp",
            StrategyKind::PanetL2SpFisher => "panet_l2sp_fisher",
        }
    }

    pub fn parse(s: &str) -> Result<StrategyKind> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy '{s}'")))
    }

    pub fn needs_mask(&self) -> bool {
        matches!(
            self,
            StrategyKind::PacNet
                | StrategyKind::PcNet
                | StrategyKind::PacNetNoL2
                | StrategyKind::PacNetRi
                | StrategyKind::PanetL2Sp
                | StrategyKind::PanetL2SpFisher
        )
    }

    pub fn needs_allocation(&self) -> bool {
        matches!(
            self,
            StrategyKind::PacNet
                | StrategyKind::PacNetNoL2
                | StrategyKind::PacNetRi
                | StrategyKind::PanetL2Sp
                | StrategyKind::PanetL2SpFisher
        )
    }

    pub fn needs_source_fisher(&self) -> bool {
        *self == StrategyKind::L2SpFisher
    }

    pub fn needs_allocated_fisher(&self) -> bool {
        *self == StrategyKind::PanetL2SpFisher
    }

    pub fn needs_pretrained(&self) -> bool {
        *self != StrategyKind::TargetOnly
    }
}

/// Hyperparameters of one target-phase run.
#[derive(Clone, Debug)]
pub struct StrategyHyper<T> {
    pub lambda: T,
    pub learning_rate: T,
    pub batch_size: usize,
    pub epochs: usize,
}

/// Per-seed source artifacts a strategy may consume. The harness computes
/// them once per (task, seed, ratio) and shares them across strategies; a
/// strategy run fails if an artifact it requires is missing.
#[derive(Clone, Debug)]
pub struct SourceArtifacts<T> {
    /// Architecture, with the seed field ignored (init seeds come from
    /// [`StrategyStreams`]).
    pub spec: NetworkSpec,
    pub pretrained: Option<ParamVector<T>>,
    pub mask: Option<PruneMask>,
    pub allocated: Option<ParamVector<T>>,
    pub fisher_source: Option<FisherDiagonal<T>>,
    pub fisher_allocated: Option<FisherDiagonal<T>>,
}

impl<T: Real> SourceArtifacts<T> {
    pub fn bare(spec: NetworkSpec) -> Self {
        SourceArtifacts {
            spec,
            pretrained: None,
            mask: None,
            allocated: None,
            fisher_source: None,
            fisher_allocated: None,
        }
    }
}

/// Streams for the target phase. Derived from (task, seed, n_target) only —
/// never from the strategy — so removing one strategy from a grid leaves
/// every other cell bit-identical.
pub struct StrategyStreams {
    /// Mini-batch shuffling during the target phase.
    pub shuffle: Pcg64,
    /// He draws for random free-coordinate init (PAC-Net RI).
    pub calibrate_init: Pcg64,
    /// Seed for a fresh target-only network.
    pub target_init_seed: u64,
}

#[derive(Clone, Debug)]
pub struct StrategyOutcome<T> {
    pub weights: ParamVector<T>,
    pub target_log: TrainLog<T>,
    /// What the target phase started from, for run provenance.
    pub started_from: &'static str,
}

fn require<'a, T>(opt: &'a Option<T>, what: &str, kind: StrategyKind) -> Result<&'a T> {
    opt.as_ref().ok_or_else(|| {
        Error::InvalidConfig(format!("strategy {} requires {what}", kind.name()))
    })
}

// Soft-penalty family: start somewhere, train all coordinates.
fn run_soft<T: Real, O: Objective<T>>(
    spec: &NetworkSpec,
    cfg: &TrainConfig<T>,
    start: &ParamVector<T>,
    penalty: Penalty<T>,
    started_from: &'static str,
    target: &mut O,
    streams: &mut StrategyStreams,
) -> Result<StrategyOutcome<T>> {
    let mut net: Network<T> = Network::build(spec.clone())?;
    net.load(start)?;
    let mut cfg = cfg.clone();
    cfg.penalty = penalty;
    let log = train(&mut net, target, &cfg, &mut streams.shuffle).map_err(|e| {
        Error::Divergence {
            phase: "target training",
            detail: e.to_string(),
        }
    })?;
    Ok(StrategyOutcome {
        weights: net.flatten(),
        target_log: log,
        started_from,
    })
}

// Hard-constraint family: freeze the kept coordinates, calibrate the rest.
#[allow(clippy::too_many_arguments)]
fn run_hard<T: Real, O: Objective<T>>(
    kind: StrategyKind,
    spec: &NetworkSpec,
    cfg: &TrainConfig<T>,
    art: &SourceArtifacts<T>,
    w_u: &ParamVector<T>,
    init: InitMode,
    pen: CalibratePenalty,
    lambda: T,
    started_from: &'static str,
    target: &mut O,
    streams: &mut StrategyStreams,
) -> Result<StrategyOutcome<T>> {
    let mask = require(&art.mask, "a pruning mask", kind)?;
    let mut net: Network<T> = Network::build(spec.clone())?;
    let (weights, log) = calibrate(
        &mut net,
        mask,
        w_u,
        target,
        lambda,
        init,
        pen,
        cfg,
        &mut streams.shuffle,
        &mut streams.calibrate_init,
    )?;
    Ok(StrategyOutcome {
        weights,
        target_log: log,
        started_from,
    })
}

/// Runs the target phase of a strategy against a prepared target objective.
pub fn run_strategy<T: Real, O: Objective<T>>(
    kind: StrategyKind,
    hp: &StrategyHyper<T>,
    art: &SourceArtifacts<T>,
    target: &mut O,
    streams: &mut StrategyStreams,
) -> Result<StrategyOutcome<T>> {
    let cfg = TrainConfig::new(hp.epochs, hp.batch_size, hp.learning_rate);
    let mut spec = art.spec.clone();

    match kind {
        StrategyKind::TargetOnly => {
            spec.seed = streams.target_init_seed;
            let mut net: Network<T> = Network::build(spec.clone())?;
            let log = train(&mut net, target, &cfg, &mut streams.shuffle).map_err(|e| {
                Error::Divergence {
                    phase: "target training",
                    detail: e.to_string(),
                }
            })?;
            Ok(StrategyOutcome {
                weights: net.flatten(),
                target_log: log,
                started_from: "fresh_init",
            })
        }
        StrategyKind::FineTuning => {
            let w_s = require(&art.pretrained, "pre-trained weights", kind)?;
            run_soft(&spec, &cfg, w_s, Penalty::None, "pretrained", target, streams)
        }
        StrategyKind::L2Sp => {
            let w_s = require(&art.pretrained, "pre-trained weights", kind)?;
            let penalty = Penalty::L2Sp {
                lambda: hp.lambda,
                reference: w_s.data.clone(),
            };
            run_soft(&spec, &cfg, w_s, penalty, "pretrained", target, streams)
        }
        StrategyKind::L2SpFisher => {
            let w_s = require(&art.pretrained, "pre-trained weights", kind)?;
            let f = require(&art.fisher_source, "a source Fisher diagonal", kind)?;
            let penalty = Penalty::L2SpFisher {
                lambda: hp.lambda,
                reference: w_s.data.clone(),
                fisher: f.entries.clone(),
            };
            run_soft(&spec, &cfg, w_s, penalty, "pretrained", target, streams)
        }
        StrategyKind::PacNet => {
            let w_a = require(&art.allocated, "allocated weights", kind)?;
            run_hard(
                kind, &spec, &cfg, art, w_a,
                InitMode::Zero, CalibratePenalty::L2Zero, hp.lambda,
                "allocated", target, streams,
            )
        }
        StrategyKind::PacNetNoL2 => {
            let w_a = require(&art.allocated, "allocated weights", kind)?;
            run_hard(
                kind, &spec, &cfg, art, w_a,
                InitMode::Zero, CalibratePenalty::None, hp.lambda,
                "allocated", target, streams,
            )
        }
        StrategyKind::PacNetRi => {
            let w_a = require(&art.allocated, "allocated weights", kind)?;
            run_hard(
                kind, &spec, &cfg, art, w_a,
                InitMode::Random, CalibratePenalty::L2Zero, hp.lambda,
                "allocated", target, streams,
            )
        }
        StrategyKind::PcNet => {
            let w_s = require(&art.pretrained, "pre-trained weights", kind)?;
            let mask = require(&art.mask, "a pruning mask", kind)?;
            let mut w_u = w_s.clone();
            mask.apply(&mut w_u.data);
            run_hard(
                kind, &spec, &cfg, art, &w_u,
                InitMode::Zero, CalibratePenalty::L2Zero, hp.lambda,
                "masked_pretrained", target, streams,
            )
        }
        StrategyKind::PanetL2Sp => {
            let w_a = require(&art.allocated, "allocated weights", kind)?;
            let penalty = Penalty::L2Sp {
                lambda: hp.lambda,
                reference: w_a.data.clone(),
            };
            run_soft(&spec, &cfg, w_a, penalty, "allocated", target, streams)
        }
        StrategyKind::PanetL2SpFisher => {
            let w_a = require(&art.allocated, "allocated weights", kind)?;
            let f = require(&art.fisher_allocated, "an allocated-model Fisher diagonal", kind)?;
            let penalty = Penalty::L2SpFisher {
                lambda: hp.lambda,
                reference: w_a.data.clone(),
                fisher: f.entries.clone(),
            };
            run_soft(&spec, &cfg, w_a, penalty, "allocated", target, streams)
        }
    }
}

/// Scaled gradient square accumulate used by the Fisher scale property:
/// scaling every per-sample loss by c scales the Fisher diagonal by c^2.
pub fn fisher_scales_quadratically<T: Real>(f: &FisherDiagonal<T>, c: T) -> FisherDiagonal<T> {
    FisherDiagonal {
        entries: f.entries.iter().map(|&x| x * c * c).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{mse_loss_grad, GradientVector};
    use crate::nn::{Activation, Layout};

    struct Quadratic {
        inputs: Vec<f64>,
        targets: Vec<f64>,
        in_w: usize,
        out_w: usize,
    }

    impl Objective<f64> for Quadratic {
        fn num_samples(&self) -> usize {
            self.targets.len() / self.out_w
        }
        fn loss_grad(
            &mut self,
            net: &Network<f64>,
            idx: &[usize],
        ) -> Result<(f64, GradientVector<f64>)> {
            let mut xs = Vec::with_capacity(idx.len() * self.in_w);
            let mut ys = Vec::with_capacity(idx.len() * self.out_w);
            for &i in idx {
                xs.extend_from_slice(&self.inputs[i * self.in_w..(i + 1) * self.in_w]);
                ys.extend_from_slice(&self.targets[i * self.out_w..(i + 1) * self.out_w]);
            }
            mse_loss_grad(net, &xs, &ys, idx.len())
        }
    }

    fn toy_data(net: &Network<f64>, n: usize, seed: u64) -> Quadratic {
        let mut rng = Pcg64::new(seed, 1);
        let in_w = net.input_width();
        let out_w = net.output_width();
        let inputs: Vec<f64> = (0..n * in_w).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let targets: Vec<f64> = (0..n * out_w).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Quadratic {
            inputs,
            targets,
            in_w,
            out_w,
        }
    }

    fn small_net(seed: u64) -> Network<f64> {
        Network::build(NetworkSpec::new(
            3,
            vec![(8, Activation::Tanh), (8, Activation::Tanh)],
            1,
            seed,
        ))
        .unwrap()
    }

    fn vector_of(data: Vec<f64>, layout: Layout) -> ParamVector<f64> {
        ParamVector { data, layout }
    }

    /// Layout with a single weight block and no biases, for exact top-K cases.
    fn weights_only(data: Vec<f64>) -> ParamVector<f64> {
        let len = data.len();
        let layout = Layout {
            entries: vec![crate::nn::LayoutEntry {
                layer: 0,
                kind: ParamKind::Weight,
                shape: (1, len),
                offset: 0,
                len,
            }],
            total_len: len,
        };
        vector_of(data, layout)
    }

    #[test]
    fn prune_keeps_top_magnitudes() {
        let v = weights_only(vec![0.9, -0.1, 0.4, -0.7]);
        let mask = prune(&v, 0.5).unwrap();
        assert_eq!(mask.kept_weights(), 2);
        assert_eq!(mask.bits(), &[true, false, false, true]);
    }

    #[test]
    fn prune_tie_breaks_toward_lower_index() {
        let v = weights_only(vec![0.5, 0.5]);
        let mask = prune(&v, 0.5).unwrap();
        assert_eq!(mask.kept_weights(), 1);
        assert_eq!(mask.bits(), &[true, false]);
    }

    #[test]
    fn prune_ratio_zero_keeps_everything() {
        let net = small_net(3);
        let mask = prune(&net.flatten(), 0.0).unwrap();
        assert_eq!(mask.popcount(), net.num_params());
    }

    #[test]
    fn prune_rejects_ratio_one() {
        let net = small_net(3);
        assert!(prune(&net.flatten(), 1.0).is_err());
        assert!(prune(&net.flatten(), -0.1).is_err());
    }

    #[test]
    fn prune_count_exact_over_random_cases() {
        let mut rng = Pcg64::new(17, 17);
        for _ in 0..100 {
            let hidden = 1 + rng.below(24);
            let spec = NetworkSpec::new(
                1 + rng.below(8),
                vec![(hidden, Activation::Tanh)],
                1 + rng.below(3),
                rng.next_u64(),
            );
            let net: Network<f64> = Network::build(spec).unwrap();
            let ratio = rng.uniform(0.0, 0.999);
            let mask = prune(&net.flatten(), ratio).unwrap();
            let n_weights: usize = net
                .layout()
                .entries
                .iter()
                .filter(|e| e.kind == ParamKind::Weight)
                .map(|e| e.len)
                .sum();
            let n_bias = net.num_params() - n_weights;
            let k = ((1.0 - ratio) * n_weights as f64).round() as usize;
            assert_eq!(mask.kept_weights(), k);
            assert_eq!(mask.popcount(), k + n_bias);
            assert_eq!(mask.popcount(), mask.keep_count());
        }
    }

    #[test]
    fn biases_always_survive_pruning() {
        let net = small_net(9);
        let mask = prune(&net.flatten(), 0.95).unwrap();
        for (e, bit) in net.layout().is_bias().iter().zip(mask.bits()) {
            if *e {
                assert!(*bit);
            }
        }
    }

    #[test]
    fn allocation_zeroes_pruned_coordinates() {
        let mut net = small_net(5);
        let mask = prune(&net.flatten(), 0.7).unwrap();
        let mut data = toy_data(&net, 32, 5);
        let cfg = TrainConfig::new(3, 8, 1e-3);
        let mut shuffle = Pcg64::new(5, 50);
        let out = allocate(&mut net, &mask, &mut data, &cfg, &mut shuffle).unwrap();
        for (x, &keep) in out.data.iter().zip(mask.bits()) {
            if !keep {
                assert_eq!(*x, 0.0);
            }
        }
    }

    #[test]
    fn all_ones_mask_allocation_equals_plain_training() {
        let base = small_net(6);
        let mut data1 = toy_data(&base, 32, 6);
        let mut data2 = toy_data(&base, 32, 6);
        let cfg = TrainConfig::new(4, 8, 1e-3);

        let mut a = base.clone();
        let mask = prune(&a.flatten(), 0.0).unwrap();
        let mut s1 = Pcg64::new(6, 60);
        let alloc = allocate(&mut a, &mask, &mut data1, &cfg, &mut s1).unwrap();

        let mut b = base.clone();
        let mut s2 = Pcg64::new(6, 60);
        train(&mut b, &mut data2, &cfg, &mut s2).unwrap();
        assert_eq!(alloc.data, b.flatten().data);
    }

    #[test]
    fn calibration_keeps_unpruned_bit_identical() {
        let mut net = small_net(7);
        let mask = prune(&net.flatten(), 0.6).unwrap();
        let mut w_u = net.flatten();
        mask.apply(&mut w_u.data);
        let mut target = toy_data(&net, 16, 71);
        let cfg = TrainConfig::new(20, 4, 1e-2);
        let mut shuffle = Pcg64::new(7, 70);
        let mut init = Pcg64::new(7, 71);
        let (out, _) = calibrate(
            &mut net,
            &mask,
            &w_u,
            &mut target,
            0.01,
            InitMode::Zero,
            CalibratePenalty::L2Zero,
            &cfg,
            &mut shuffle,
            &mut init,
        )
        .unwrap();
        let mut moved = 0;
        for i in 0..out.len() {
            if mask.bits()[i] {
                assert_eq!(out.data[i].to_bits(), w_u.data[i].to_bits());
            } else if out.data[i] != 0.0 {
                moved += 1;
            }
        }
        assert!(moved > 0, "calibration must move free coordinates");
    }

    #[test]
    fn huge_lambda_pins_free_coordinates_near_zero() {
        let mut net = small_net(8);
        let mask = prune(&net.flatten(), 0.5).unwrap();
        let mut w_u = net.flatten();
        mask.apply(&mut w_u.data);
        let mut target = toy_data(&net, 16, 81);
        let cfg = TrainConfig::new(10, 16, 1e-3);
        let mut shuffle = Pcg64::new(8, 80);
        let mut init = Pcg64::new(8, 81);
        let (out, _) = calibrate(
            &mut net,
            &mask,
            &w_u,
            &mut target,
            1e9,
            InitMode::Zero,
            CalibratePenalty::L2Zero,
            &cfg,
            &mut shuffle,
            &mut init,
        )
        .unwrap();
        for (x, &keep) in out.data.iter().zip(mask.bits()) {
            if !keep {
                assert!(x.abs() < 1e-3, "free coordinate escaped: {x}");
            }
        }
    }

    #[test]
    fn calibration_rejects_empty_target_and_bad_wu() {
        let mut net = small_net(9);
        let mask = prune(&net.flatten(), 0.5).unwrap();
        let w_u_bad = net.flatten(); // pruned coords non-zero
        let mut empty = Quadratic {
            inputs: vec![],
            targets: vec![],
            in_w: 3,
            out_w: 1,
        };
        let cfg = TrainConfig::new(1, 4, 1e-3);
        let mut s = Pcg64::new(9, 90);
        let mut i = Pcg64::new(9, 91);
        let err = calibrate(
            &mut net.clone(),
            &mask,
            &w_u_bad,
            &mut toy_data(&net, 4, 9),
            0.01,
            InitMode::Zero,
            CalibratePenalty::L2Zero,
            &cfg,
            &mut s,
            &mut i,
        );
        assert!(err.is_err());
        let mut w_u = net.flatten();
        mask.apply(&mut w_u.data);
        let err2 = calibrate(
            &mut net,
            &mask,
            &w_u,
            &mut empty,
            0.01,
            InitMode::Zero,
            CalibratePenalty::L2Zero,
            &cfg,
            &mut s,
            &mut i,
        );
        assert!(err2.is_err());
    }

    #[test]
    fn zero_substitution_recovers_source_outputs_bit_exactly() {
        let mut net = small_net(10);
        let mask = prune(&net.flatten(), 0.6).unwrap();
        let mut w_u = net.flatten();
        mask.apply(&mut w_u.data);
        let mut target = toy_data(&net, 8, 101);
        let cfg = TrainConfig::new(15, 4, 1e-2);
        let mut shuffle = Pcg64::new(10, 100);
        let mut init = Pcg64::new(10, 101);
        let (out, _) = calibrate(
            &mut net,
            &mask,
            &w_u,
            &mut target,
            0.001,
            InitMode::Zero,
            CalibratePenalty::L2Zero,
            &cfg,
            &mut shuffle,
            &mut init,
        )
        .unwrap();
        // Zero the free coordinates of the calibrated vector: must equal w_u.
        let mut substituted = out.clone();
        mask.apply(&mut substituted.data);
        assert_eq!(substituted.data, w_u.data);
        let x = [0.25, -0.5, 0.75];
        let mut probe = small_net(10);
        probe.load(&substituted).unwrap();
        let a = crate::autodiff::forward(&probe, &x).unwrap();
        probe.load(&w_u).unwrap();
        let b = crate::autodiff::forward(&probe, &x).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }

    #[test]
    fn fisher_single_sample_is_squared_gradient() {
        let net = small_net(11);
        let mut data = toy_data(&net, 1, 111);
        let (_, g) = data.loss_grad(&net, &[0]).unwrap();
        let f = fisher_diag(&net, &mut data).unwrap();
        for (fi, gi) in f.entries.iter().zip(&g.entries) {
            assert_eq!(*fi, gi * gi);
        }
    }

    #[test]
    fn fisher_zero_at_interpolant() {
        let net = small_net(12);
        let mut data = toy_data(&net, 4, 121);
        // Replace targets with the model's own outputs.
        for i in 0..4 {
            let x = &data.inputs[i * 3..(i + 1) * 3];
            data.targets[i] = crate::autodiff::forward(&net, x).unwrap()[0];
        }
        let f = fisher_diag(&net, &mut data).unwrap();
        assert!(f.entries.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fisher_two_samples_hand_average() {
        let net = small_net(13);
        let mut data = toy_data(&net, 2, 131);
        let (_, g1) = data.loss_grad(&net, &[0]).unwrap();
        let (_, g2) = data.loss_grad(&net, &[1]).unwrap();
        let f = fisher_diag(&net, &mut data).unwrap();
        for i in 0..f.entries.len() {
            let expect = (g1.entries[i] * g1.entries[i] + g2.entries[i] * g2.entries[i]) / 2.0;
            assert!((f.entries[i] - expect).abs() <= 1e-15);
        }
    }

    #[test]
    fn fisher_nonnegative_and_scales_quadratically() {
        let net = small_net(14);
        let mut data = toy_data(&net, 6, 141);
        let f = fisher_diag(&net, &mut data).unwrap();
        assert!(f.entries.iter().all(|&x| x >= 0.0));
        let scaled = fisher_scales_quadratically(&f, 3.0);
        for (a, b) in scaled.entries.iter().zip(&f.entries) {
            assert!((a - 9.0 * b).abs() <= 1e-12 * a.abs().max(*b));
        }
    }

    #[test]
    fn eq3_equals_eq4_when_free_start_is_zero() {
        // With the free coordinates starting at zero, the penalty anchored
        // at the start equals the zero-anchored penalty on every step.
        let base = small_net(15);
        let mask = prune(&base.flatten(), 0.5).unwrap();
        let mut w_u = base.flatten();
        mask.apply(&mut w_u.data);
        let cfg = TrainConfig::new(12, 4, 1e-2);

        let mut net_a = base.clone();
        let mut s_a = Pcg64::new(15, 150);
        let mut i_a = Pcg64::new(15, 151);
        let (out_a, _) = calibrate(
            &mut net_a,
            &mask,
            &w_u,
            &mut toy_data(&base, 12, 151),
            0.05,
            InitMode::Zero,
            CalibratePenalty::L2Zero,
            &cfg,
            &mut s_a,
            &mut i_a,
        )
        .unwrap();

        let mut net_b = base.clone();
        let mut s_b = Pcg64::new(15, 150);
        let mut i_b = Pcg64::new(15, 151);
        let (out_b, _) = calibrate(
            &mut net_b,
            &mask,
            &w_u,
            &mut toy_data(&base, 12, 151),
            0.05,
            InitMode::Zero,
            CalibratePenalty::L2Sp,
            &cfg,
            &mut s_b,
            &mut i_b,
        )
        .unwrap();
        let bits_a: Vec<u64> = out_a.data.iter().map(|x| x.to_bits()).collect();
        let bits_b: Vec<u64> = out_b.data.iter().map(|x| x.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }

    #[test]
    fn target_only_requires_no_source_artifacts() {
        let spec = NetworkSpec::new(3, vec![(8, Activation::Tanh)], 1, 0);
        let art: SourceArtifacts<f64> = SourceArtifacts::bare(spec.clone());
        let probe: Network<f64> = Network::build(spec).unwrap();
        let mut target = toy_data(&probe, 8, 161);
        let hp = StrategyHyper {
            lambda: 0.0,
            learning_rate: 1e-3,
            batch_size: 4,
            epochs: 2,
        };
        let mut streams = StrategyStreams {
            shuffle: Pcg64::new(16, 160),
            calibrate_init: Pcg64::new(16, 161),
            target_init_seed: 99,
        };
        let out = run_strategy(StrategyKind::TargetOnly, &hp, &art, &mut target, &mut streams);
        assert!(out.is_ok());
        assert_eq!(out.unwrap().started_from, "fresh_init");
        // Strategies with source requirements fail fast on bare artifacts.
        let mut streams2 = StrategyStreams {
            shuffle: Pcg64::new(16, 160),
            calibrate_init: Pcg64::new(16, 161),
            target_init_seed: 99,
        };
        assert!(run_strategy(
            StrategyKind::PacNet,
            &hp,
            &SourceArtifacts::bare(NetworkSpec::new(3, vec![(8, Activation::Tanh)], 1, 0)),
            &mut target,
            &mut streams2
        )
        .is_err());
    }

    #[test]
    fn panet_with_zero_lambda_is_fine_tuning_from_allocated() {
        let base = small_net(17);
        let spec = base.spec().clone();
        let allocated = base.flatten();
        let mut art = SourceArtifacts::bare(spec.clone());
        art.pretrained = Some(allocated.clone());
        art.mask = Some(prune(&allocated, 0.5).unwrap());
        art.allocated = Some(allocated.clone());

        let hp = StrategyHyper {
            lambda: 0.0,
            learning_rate: 1e-3,
            batch_size: 4,
            epochs: 3,
        };
        let mut t1 = toy_data(&base, 12, 171);
        let mut s1 = StrategyStreams {
            shuffle: Pcg64::new(17, 170),
            calibrate_init: Pcg64::new(17, 171),
            target_init_seed: 0,
        };
        let a = run_strategy(StrategyKind::PanetL2Sp, &hp, &art, &mut t1, &mut s1).unwrap();

        // Fine-tuning "from the allocated weights": same soft path with the
        // allocated vector as the starting point.
        let mut art_ft = SourceArtifacts::bare(spec);
        art_ft.pretrained = Some(allocated);
        let mut t2 = toy_data(&base, 12, 171);
        let mut s2 = StrategyStreams {
            shuffle: Pcg64::new(17, 170),
            calibrate_init: Pcg64::new(17, 171),
            target_init_seed: 0,
        };
        let b = run_strategy(StrategyKind::FineTuning, &hp, &art_ft, &mut t2, &mut s2).unwrap();
        let bits_a: Vec<u64> = a.weights.data.iter().map(|x| x.to_bits()).collect();
        let bits_b: Vec<u64> = b.weights.data.iter().map(|x| x.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(StrategyKind::parse(k.name()).unwrap(), k);
        }
        assert!(StrategyKind::parse("boosting").is_err());
    }
}
