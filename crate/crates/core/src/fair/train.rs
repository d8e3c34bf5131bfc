use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::losses::{
    apply_mask, information_loss, reconstruction_loss, sample_reconstruction_pairs, total_loss, LossBreakdown,
    LossParts,
};
use crate::autodiff::{Tape, Tensor, Var};
use crate::confidence::{confidence_weights, uniform_weights, weighted_covariance_penalty, weighted_mmd, ConfidenceWeights};
use crate::encoder::{EdgeIndex, EncoderParams, LinearHead};
use crate::error::{Error, Result};
use crate::graph::{DataSplit, Graph, GroupIndex};
use crate::identify::{ProxyRefresher, ProxyResult};
use crate::metrics::delta_dp;
use crate::optim::{Adam, AdamConfig};
use crate::rng::{self, Rng, Stream};

/// Mask logit used when masks are frozen open.
pub const OPEN_MASK_LOGIT: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GammaMode {
    /// `1 / (2 m^2)` with `m` the median pairwise distance of masked
    /// representations, recomputed periodically.
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weighting {
    /// Thresholded confidence weights.
    Adaptive,
    /// `1/N` per proxy group, raw weight 1 everywhere.
    Uniform,
}

/// Objective variants used for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Full,
    /// No fairness terms (`b = 0`).
    NoFairness,
    /// No reconstruction term (`a = 0`).
    NoGraph,
    /// Uniform instead of confidence weights.
    NoAdaptive,
    /// `a = b = 0` with masks frozen open.
    Vanilla,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoFairness,
        Variant::NoGraph,
        Variant::NoAdaptive,
        Variant::Vanilla,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoFairness => "NF",
            Variant::NoGraph => "NG",
            Variant::NoAdaptive => "NA",
            Variant::Vanilla => "vanilla",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairConfig {
    pub a: f64,
    pub b: f64,
    pub layers: usize,
    pub hidden: usize,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub gamma: GammaMode,
    pub gamma_refresh: usize,
    /// Positive edges sampled per proxy group per epoch.
    pub pos_per_group: usize,
    pub neg_ratio: f64,
    pub tau: f64,
    /// Refresh proxies every this many epochs; 0 disables.
    pub conf_refresh_every: usize,
    pub weighting: Weighting,
    pub train_mask: bool,
    pub mask_init: f64,
    /// Above this many included nodes the MMD runs on a per-epoch subsample.
    pub mmd_max_nodes: usize,
    /// Validation-accuracy slack for epoch selection.
    pub select_tolerance: f64,
    pub seed: u64,
}

impl Default for FairConfig {
    fn default() -> Self {
        FairConfig {
            a: 1.0,
            b: std::f64::consts::E,
            layers: 2,
            hidden: 16,
            adam: AdamConfig::default(),
            epochs: 200,
            gamma: GammaMode::Median,
            gamma_refresh: 10,
            pos_per_group: 256,
            neg_ratio: 1.0,
            tau: 0.7,
            conf_refresh_every: 0,
            weighting: Weighting::Adaptive,
            train_mask: true,
            mask_init: 2.0,
            mmd_max_nodes: 2000,
            select_tolerance: 0.02,
            seed: 0,
        }
    }
}

impl FairConfig {
    pub fn with_variant(mut self, v: Variant) -> Self {
        match v {
            Variant::Full => {}
            Variant::NoFairness => self.b = 0.0,
            Variant::NoGraph => self.a = 0.0,
            Variant::NoAdaptive => self.weighting = Weighting::Uniform,
            Variant::Vanilla => {
                self.a = 0.0;
                self.b = 0.0;
                self.train_mask = false;
                self.mask_init = OPEN_MASK_LOGIT;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.a >= 0.0 && self.a.is_finite()) || !(self.b >= 0.0 && self.b.is_finite()) {
            return bad(format!("a and b must be finite and non-negative, got {} and {}", self.a, self.b));
        }
        if self.layers == 0 || self.hidden == 0 {
            return bad("fair encoder needs at least one layer of positive width".into());
        }
        if let GammaMode::Fixed(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gamma must be positive, got {g}"));
            }
        }
        if self.gamma_refresh == 0 {
            return bad("gamma_refresh must be positive".into());
        }
        if !(self.neg_ratio > 0.0 && self.neg_ratio.is_finite()) || self.pos_per_group == 0 {
            return bad("reconstruction sampling sizes must be positive".into());
        }
        if !(0.5..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0.5, 1], got {}", self.tau));
        }
        if self.mmd_max_nodes < 2 || !(self.select_tolerance >= 0.0) || !(self.adam.lr > 0.0) {
            return bad("invalid mmd_max_nodes, select_tolerance or learning rate".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairModel {
    pub encoder: EncoderParams,
    /// Per-node mask logits; the mask is their sigmoid.
    pub mask_logits: Tensor,
    pub head: LinearHead,
    pub gamma: f64,
    pub config: FairConfig,
}

/// Evaluated quantities of a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct FairForward {
    /// Input followed by each layer's output.
    pub layers: Vec<Tensor>,
    /// Masked final representation: the head input.
    pub masked: Tensor,
    pub probs: Tensor,
}

impl FairForward {
    pub fn predictions(&self) -> Vec<u8> {
        (0..self.probs.rows())
            .map(|i| u8::from(self.probs.get(i, 1) > self.probs.get(i, 0)))
            .collect()
    }

    pub fn prob_class1(&self) -> Vec<f64> {
        (0..self.probs.rows()).map(|i| self.probs.get(i, 1)).collect()
    }
}

impl FairModel {
    pub fn init(n: usize, input_dim: usize, cfg: &FairConfig) -> Result<Self> {
        let mut rng = rng::stream(cfg.seed, Stream::FairInit);
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat_n(cfg.hidden, cfg.layers));
        Ok(FairModel {
            encoder: EncoderParams::init(&mut rng, &dims)?,
            head: LinearHead::init(&mut rng, cfg.hidden),
            mask_logits: Tensor::full(vec![n, cfg.hidden], cfg.mask_init),
            gamma: 1.0,
            config: *cfg,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.mask_logits.rows()
    }

    pub fn forward(&self, edges: &EdgeIndex, x: &Tensor) -> Result<FairForward> {
        if x.rows() != self.num_nodes() || x.row_len() != self.encoder.input_dim() {
            return Err(Error::Shape {
                op: "fair model input",
                left: x.shape().to_vec(),
                right: vec![self.num_nodes(), self.encoder.input_dim()],
            });
        }
        let tape = Tape::new();
        let enc = self.encoder.bind(&tape, false);
        let head = self.head.bind(&tape, false);
        let layers = enc.forward_all(edges, tape.constant(x.clone()))?;
        let last = *layers.last().expect("encoder has layers");
        let masked = apply_mask(last, tape.constant(self.mask_logits.clone()))?;
        let probs = head.probs(masked)?;
        let mut outs = vec![x.clone()];
        outs.extend(layers.iter().map(|v| v.to_tensor()));
        Ok(FairForward { layers: outs, masked: masked.to_tensor(), probs: probs.to_tensor() })
    }

    fn tensors_mut(&mut self, with_mask: bool) -> Vec<&mut Tensor> {
        let mut out = self.encoder.tensors_mut();
        if with_mask {
            out.push(&mut self.mask_logits);
        }
        out.extend(self.head.tensors_mut());
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub loss: LossBreakdown,
    pub gamma: f64,
    pub val_accuracy: f64,
    /// Hard-label parity gap on validation nodes under proxy groups.
    pub val_dp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairTraining {
    pub history: Vec<EpochLog>,
    pub selected_epoch: usize,
    pub warnings: Vec<String>,
}

/// Median heuristic bandwidth over up to 300 evenly spaced nodes.
pub fn median_gamma(h: &Tensor, nodes: &[usize]) -> f64 {
    let step = nodes.len().div_ceil(300).max(1);
    let pick: Vec<usize> = nodes.iter().step_by(step).copied().collect();
    let mut dists = Vec::with_capacity(pick.len() * pick.len() / 2);
    for (a, &i) in pick.iter().enumerate() {
        for &j in &pick[a + 1..] {
            let d2: f64 = h.row(i).iter().zip(h.row(j)).map(|(x, y)| (x - y).powi(2)).sum();
            dists.push(d2.sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 { 0.5 * (dists[mid - 1] + dists[mid]) } else { dists[mid] };
    if median > 1e-12 {
        1.0 / (2.0 * median * median)
    } else {
        1.0
    }
}

fn build_weights(proxies: &ProxyResult, cfg: &FairConfig, warnings: &mut Vec<String>) -> Result<ConfidenceWeights> {
    let w = match cfg.weighting {
        Weighting::Adaptive => confidence_weights(proxies, cfg.tau)?,
        Weighting::Uniform => uniform_weights(&proxies.group)?,
    };
    warnings.extend(w.warnings.iter().cloned());
    Ok(w)
}

/// Keeps at most `max` included nodes, split across groups in proportion,
/// and renormalizes their weights.
fn subsample_weights(w: &ConfidenceWeights, max: usize, rng: &mut Rng) -> ConfidenceWeights {
    let (nd, nf) = (w.included.n_deprived(), w.included.n_favored());
    if nd + nf <= max {
        return w.clone();
    }
    let kd = ((max * nd) as f64 / (nd + nf) as f64).round().clamp(1.0, (max - 1) as f64) as usize;
    let pick = |nodes: &[usize], weights: &[f64], k: usize, rng: &mut Rng| {
        let mut idx = sample(rng, nodes.len(), k.min(nodes.len())).into_vec();
        idx.sort_unstable();
        let total: f64 = idx.iter().map(|&i| weights[i]).sum();
        let chosen: Vec<usize> = idx.iter().map(|&i| nodes[i]).collect();
        let ws: Vec<f64> = idx.iter().map(|&i| weights[i] / total).collect();
        (chosen, ws)
    };
    let (deprived, alpha) = pick(&w.included.deprived, &w.alpha, kd, rng);
    let (favored, beta) = pick(&w.included.favored, &w.beta, max - kd, rng);
    ConfidenceWeights {
        included: GroupIndex { deprived, favored },
        alpha,
        beta,
        ..w.clone()
    }
}

fn accuracy(probs: &Tensor, labels: &[Option<u8>], nodes: &[usize]) -> f64 {
    let scored: Vec<bool> = nodes
        .iter()
        .filter_map(|&i| labels[i].map(|y| u8::from(probs.get(i, 1) > probs.get(i, 0)) == y))
        .collect();
    if scored.is_empty() {
        return 0.0;
    }
    scored.iter().filter(|&&c| c).count() as f64 / scored.len() as f64
}

/// Picks the epoch with the smallest validation parity gap among epochs whose
/// validation accuracy is within `tol` of the best.
pub fn select_epoch(history: &[EpochLog], tol: f64) -> Option<usize> {
    let best = history.iter().map(|e| e.val_accuracy).fold(f64::NEG_INFINITY, f64::max);
    history
        .iter()
        .enumerate()
        .filter(|(_, e)| e.val_accuracy >= best - tol)
        .min_by(|(i, x), (j, y)| {
            let (dx, dy) = (x.val_dp.unwrap_or(f64::INFINITY), y.val_dp.unwrap_or(f64::INFINITY));
            dx.total_cmp(&dy)
                .then(y.val_accuracy.total_cmp(&x.val_accuracy))
                .then(j.cmp(i))
        })
        .map(|(i, _)| i)
}

fn fairness_terms<'t>(
    h: Var<'t>,
    proxies: &ProxyResult,
    weights: &ConfidenceWeights,
    gamma: f64,
) -> Result<(Var<'t>, Var<'t>)> {
    Ok((
        weighted_mmd(h, weights, gamma)?,
        weighted_covariance_penalty(h, &proxies.group, weights)?,
    ))
}

/// Trains the fair encoder, masks and task head jointly.
///
/// `x` is the standardized feature matrix and `proxies` assigns every node a
/// group. With `refresher` and a positive `conf_refresh_every`, proxies are
/// refined on that schedule.
pub fn train_fairglite(
    g: &Graph,
    split: &DataSplit,
    x: &Tensor,
    proxies: &ProxyResult,
    cfg: &FairConfig,
    mut refresher: Option<&mut ProxyRefresher>,
) -> Result<(FairModel, FairTraining)> {
    cfg.validate()?;
    let n = g.num_nodes();
    if proxies.len() != n || x.rows() != n {
        return Err(Error::invalid(format!(
            "proxies ({}) and features ({}) must cover all {n} nodes",
            proxies.len(),
            x.rows()
        )));
    }
    let labeled = split.labeled_train(g);
    let val: Vec<usize> = split.val.iter().copied().filter(|&i| g.labels()[i].is_some()).collect();
    let edges = EdgeIndex::new(g);
    let mut model = FairModel::init(n, x.row_len(), cfg)?;
    let mut sampler = rng::stream(cfg.seed, Stream::Sampling);
    let mut mmd_rng = rng::stream(cfg.seed, Stream::Aux);
    let mut opt = Adam::new(cfg.adam);
    let mut warnings = Vec::new();
    let mut proxies = proxies.clone();
    let mut weights = build_weights(&proxies, cfg, &mut warnings)?;
    let mut gamma = match cfg.gamma {
        GammaMode::Fixed(v) => v,
        GammaMode::Median => 1.0,
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut snapshots = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if epoch > 0 && cfg.conf_refresh_every > 0 && epoch % cfg.conf_refresh_every == 0 {
            if let Some(r) = refresher.as_deref_mut() {
                proxies = r.refresh(&proxies)?;
                weights = build_weights(&proxies, cfg, &mut warnings)?;
            }
        }
        let tape = Tape::new();
        let enc = model.encoder.bind(&tape, true);
        let mask = if cfg.train_mask {
            tape.param(&model.mask_logits)
        } else {
            tape.constant(model.mask_logits.clone())
        };
        let head = model.head.bind(&tape, true);
        let h = enc.forward(&edges, tape.constant(x.clone()))?;
        let masked = apply_mask(h, mask)?;
        let probs = head.probs(masked)?;
        if !probs.value().all_finite() {
            return Err(Error::Divergence {
                epoch,
                what: "non-finite class probabilities".into(),
            });
        }

        if cfg.gamma == GammaMode::Median && epoch % cfg.gamma_refresh == 0 {
            let nodes: Vec<usize> = weights.included.deprived.iter().chain(&weights.included.favored).copied().collect();
            gamma = median_gamma(&masked.value(), &nodes);
        }
        let info = information_loss(probs, g.labels(), &labeled)?;
        let (pos, neg) = sample_reconstruction_pairs(g, &proxies.group, cfg.pos_per_group, cfg.neg_ratio, &mut sampler)?;
        let recon = reconstruction_loss(masked, &pos, &neg)?;
        let mmd_weights = subsample_weights(&weights, cfg.mmd_max_nodes, &mut mmd_rng);
        let (fairness, correlation) = if cfg.b > 0.0 {
            fairness_terms(masked, &proxies, &mmd_weights, gamma)?
        } else {
            // Values only: keeps the report complete without backward cost.
            let side = Tape::new();
            let (f, c) = fairness_terms(side.constant(masked.to_tensor()), &proxies, &mmd_weights, gamma)?;
            (tape.scalar(f.item()), tape.scalar(c.item()))
        };
        let parts = LossParts { info, recon, fairness, correlation };
        let total = total_loss(&parts, cfg.a, cfg.b)?;
        let loss = parts.breakdown(total.item());
        if ![loss.total, loss.info, loss.recon, loss.fairness, loss.correlation]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Divergence {
                epoch,
                what: format!("non-finite loss {loss:?}"),
            });
        }
        let probs_t = probs.to_tensor();
        let val_groups = GroupIndex::from_groups(&proxies.group, val.iter().copied());
        let val_dp = delta_dp(&predictions(&probs_t), &val_groups).ok();
        history.push(EpochLog {
            loss,
            gamma,
            val_accuracy: accuracy(&probs_t, g.labels(), &val),
            val_dp,
        });
        snapshots.push(FairModel { gamma, ..model.clone() });

        tape.backward(total)?;
        let mut vars = enc.vars();
        if cfg.train_mask {
            vars.push(mask);
        }
        vars.extend(head.vars());
        let grads: Vec<Tensor> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();
        opt.step(model.tensors_mut(cfg.train_mask), &grads);
    }

    let Some(selected_epoch) = select_epoch(&history, cfg.select_tolerance) else {
        model.gamma = gamma;
        return Ok((model, FairTraining { history, selected_epoch: 0, warnings }));
    };
    let selected = snapshots.swap_remove(selected_epoch);
    Ok((selected, FairTraining { history, selected_epoch, warnings }))
}

fn predictions(probs: &Tensor) -> Vec<u8> {
    (0..probs.rows()).map(|i| u8::from(probs.get(i, 1) > probs.get(i, 0))).collect()
}
