//! Demographic proxy identification.
//!
//! An attention encoder with a binary softmax head is trained on the nodes
//! whose demographic value is disclosed, then frozen. Undisclosed nodes get
//! the head's arg-max group as a proxy and its maximum probability as a
//! confidence score; disclosed nodes keep their value with confidence 1.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::encoder::{cross_entropy, EdgeIndex, EncoderParams, LinearHead};
use crate::error::{Error, Result};
use crate::graph::{DataSplit, Graph};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentifierConfig {
    pub layers: usize,
    pub hidden: usize,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for IdentifierConfig {
    fn default() -> Self {
        IdentifierConfig {
            layers: 2,
            hidden: 16,
            adam: AdamConfig::default(),
            epochs: 300,
            patience: 20,
            seed: 0,
        }
    }
}

/// Frozen identifier: encoder plus demographic head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identifier {
    pub encoder: EncoderParams,
    pub head: LinearHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentifierEpoch {
    pub train_loss: f64,
    /// Cross-entropy on disclosed validation nodes; `None` when there are none.
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifierTraining {
    pub curve: Vec<IdentifierEpoch>,
    /// Epoch whose parameters were kept (`None` if no epoch ran).
    pub best_epoch: Option<usize>,
}

/// Per-node demographic group (observed or inferred) and its reliability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyResult {
    pub group: Vec<u8>,
    pub confidence: Vec<f64>,
    pub observed: Vec<bool>,
}

impl ProxyResult {
    /// Fully observed groups: every confidence is 1.
    pub fn from_observed(groups: Vec<u8>) -> Self {
        let n = groups.len();
        ProxyResult {
            group: groups,
            confidence: vec![1.0; n],
            observed: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.group.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group.is_empty()
    }

    /// Share of `nodes` whose proxy group equals the true value in `g`;
    /// nodes without a true value are skipped.
    pub fn accuracy(&self, g: &Graph, nodes: &[usize]) -> Option<f64> {
        let scored: Vec<bool> = nodes
            .iter()
            .filter_map(|&i| g.demographics()[i].map(|s| s == self.group[i]))
            .collect();
        if scored.is_empty() {
            None
        } else {
            Some(scored.iter().filter(|&&c| c).count() as f64 / scored.len() as f64)
        }
    }
}

fn disclosed_subset(nodes: &[usize], visible: &[Option<u8>]) -> (Vec<usize>, Vec<u8>) {
    nodes
        .iter()
        .filter_map(|&i| visible[i].map(|s| (i, s)))
        .unzip()
}

impl Identifier {
    pub fn init(input_dim: usize, cfg: &IdentifierConfig) -> Result<Self> {
        if cfg.layers == 0 || cfg.hidden == 0 {
            return Err(Error::invalid("identifier needs at least one layer of positive width"));
        }
        let mut rng = rng::stream(cfg.seed, Stream::IdentifierInit);
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat_n(cfg.hidden, cfg.layers));
        let encoder = EncoderParams::init(&mut rng, &dims)?;
        let head = LinearHead::init(&mut rng, cfg.hidden);
        Ok(Identifier { encoder, head })
    }

    /// Class probabilities (n × 2) for every node.
    pub fn predict(&self, edges: &EdgeIndex, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let enc = self.encoder.bind(&tape, false);
        let head = self.head.bind(&tape, false);
        let h = enc.forward(edges, tape.constant(x.clone()))?;
        Ok(head.probs(h)?.to_tensor())
    }

    /// Frozen embeddings (n × hidden).
    pub fn embed(&self, edges: &EdgeIndex, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let enc = self.encoder.bind(&tape, false);
        Ok(enc.forward(edges, tape.constant(x.clone()))?.to_tensor())
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.tensors_mut();
        out.extend(self.head.tensors_mut());
        out
    }
}

/// Trains the identifier on disclosed train nodes with early stopping on
/// disclosed validation nodes. `x` is the (standardized) feature matrix.
pub fn train_identifier(
    g: &Graph,
    split: &DataSplit,
    x: &Tensor,
    cfg: &IdentifierConfig,
) -> Result<(Identifier, IdentifierTraining)> {
    let visible = split.visible_demographics(g);
    let (train_nodes, train_s) = disclosed_subset(&split.train, &visible);
    let (val_nodes, val_s) = disclosed_subset(&split.val, &visible);
    let zeros = train_s.iter().filter(|&&s| s == 0).count();
    if zeros == 0 || zeros == train_s.len() {
        return Err(Error::DegenerateSupervision(format!(
            "disclosed training demographics cover a single group ({} nodes)",
            train_s.len()
        )));
    }
    let edges = EdgeIndex::new(g);
    let mut model = Identifier::init(x.shape()[1], cfg)?;
    let mut best = model.clone();
    let mut best_score = f64::INFINITY;
    let mut best_epoch = None;
    let mut since_best = 0;
    let mut opt = Adam::new(cfg.adam);
    let mut curve = Vec::new();

    for epoch in 0..cfg.epochs {
        let tape = Tape::new();
        let enc = model.encoder.bind(&tape, true);
        let head = model.head.bind(&tape, true);
        let h = enc.forward(&edges, tape.constant(x.clone()))?;
        let probs = head.probs(h)?;
        let loss = cross_entropy(probs, &train_nodes, &train_s)?;
        let val_loss = if val_nodes.is_empty() {
            None
        } else {
            Some(cross_entropy(probs, &val_nodes, &val_s)?.item())
        };
        let train_loss = loss.item();
        if !train_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                what: "identifier cross-entropy is not finite".into(),
            });
        }
        curve.push(IdentifierEpoch { train_loss, val_loss });

        let score = val_loss.unwrap_or(train_loss);
        if score < best_score {
            best_score = score;
            best = model.clone();
            best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }

        tape.backward(loss)?;
        let mut vars = enc.vars();
        vars.extend(head.vars());
        let grads: Vec<Tensor> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();
        opt.step(model.tensors_mut(), &grads);
    }
    Ok((best, IdentifierTraining { curve, best_epoch }))
}

/// Assigns every node a group and confidence. Disclosed values pass
/// through unchanged with confidence 1.
pub fn infer_proxies(g: &Graph, model: &Identifier, split: &DataSplit, x: &Tensor) -> Result<ProxyResult> {
    let probs = model.predict(&EdgeIndex::new(g), x)?;
    Ok(proxies_from_probs(&probs, &split.visible_demographics(g)))
}

pub(crate) fn proxies_from_probs(probs: &Tensor, visible: &[Option<u8>]) -> ProxyResult {
    let n = visible.len();
    let mut out = ProxyResult {
        group: Vec::with_capacity(n),
        confidence: Vec::with_capacity(n),
        observed: Vec::with_capacity(n),
    };
    for (i, s) in visible.iter().enumerate() {
        match s {
            Some(s) => {
                out.group.push(*s);
                out.confidence.push(1.0);
                out.observed.push(true);
            }
            None => {
                let (p0, p1) = (probs.get(i, 0), probs.get(i, 1));
                out.group.push(u8::from(p1 > p0));
                out.confidence.push(p0.max(p1));
                out.observed.push(false);
            }
        }
    }
    out
}

/// Refines proxies by self-training the identifier head on disclosed nodes
/// plus undisclosed nodes whose current confidence is at least `tau`; the
/// encoder stays frozen.
#[derive(Debug, Clone)]
pub struct ProxyRefresher {
    identifier: Identifier,
    embeddings: Tensor,
    visible: Vec<Option<u8>>,
    tau: f64,
    epochs: usize,
    adam: AdamConfig,
}

impl ProxyRefresher {
    pub fn new(g: &Graph, split: &DataSplit, x: &Tensor, identifier: Identifier, tau: f64) -> Result<Self> {
        let embeddings = identifier.embed(&EdgeIndex::new(g), x)?;
        Ok(ProxyRefresher {
            identifier,
            embeddings,
            visible: split.visible_demographics(g),
            tau,
            epochs: 20,
            adam: AdamConfig::default(),
        })
    }

    pub fn refresh(&mut self, current: &ProxyResult) -> Result<ProxyResult> {
        let (nodes, targets): (Vec<usize>, Vec<u8>) = (0..current.len())
            .filter(|&i| current.observed[i] || current.confidence[i] >= self.tau)
            .map(|i| (i, current.group[i]))
            .unzip();
        let mut opt = Adam::new(self.adam);
        for _ in 0..self.epochs {
            let tape = Tape::new();
            let head = self.identifier.head.bind(&tape, true);
            let probs = head.probs(tape.constant(self.embeddings.clone()))?;
            let loss = cross_entropy(probs, &nodes, &targets)?;
            tape.backward(loss)?;
            let grads: Vec<Tensor> = head.vars().iter().map(|&v| tape.grad_or_zeros(v)).collect();
            opt.step(self.identifier.head.tensors_mut(), &grads);
        }
        let tape = Tape::new();
        let head = self.identifier.head.bind(&tape, false);
        let probs = head.probs(tape.constant(self.embeddings.clone()))?.to_tensor();
        Ok(proxies_from_probs(&probs, &self.visible))
    }
}
