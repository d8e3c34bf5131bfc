//! Attention-based message-passing encoder and linear softmax heads.
//!
//! One layer maps `H` (n×d_in) to
//!
//! ```text
//! P      = H · W
//! e_uk   = leaky_relu(a_src · P_u + a_dst · P_k)          for k ∈ N(u)
//! α_uk   = softmax over k ∈ N(u) of e_uk
//! h'_u   = ξ · P_u + Σ_k α_uk · relu(P_k)
//! ```
//!
//! The self term is taken after projection so that layers may change width.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::Rng;

/// Directed edge index of a graph in CSR order, shared by every layer.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub offsets: Arc<[usize]>,
}

impl EdgeIndex {
    pub fn new(g: &Graph) -> Self {
        let offsets = g.offsets();
        let mut src = Vec::with_capacity(g.neighbor_array().len());
        for u in 0..g.num_nodes() {
            src.extend(std::iter::repeat_n(u, offsets[u + 1] - offsets[u]));
        }
        EdgeIndex {
            src: src.into(),
            dst: g.neighbor_array().into(),
            offsets: offsets.into(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Parameters of one attention layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// Retention weight of the node's own projection (scalar).
    pub xi: Tensor,
    /// Projection, d_in × d_out.
    pub w: Tensor,
    /// Attention scorer, (2·d_out) × 1: source half then neighbor half.
    pub attn: Tensor,
}

fn glorot(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_parts(vec![rows, cols], data)
}

impl LayerParams {
    pub fn init(rng: &mut Rng, d_in: usize, d_out: usize) -> Self {
        let w = glorot(rng, d_in, d_out);
        let attn = (0..2 * d_out).map(|_| rng.random_range(-0.1..0.1)).collect();
        LayerParams {
            xi: Tensor::scalar(1.0),
            w,
            attn: Tensor::from_parts(vec![2 * d_out, 1], attn),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.w.shape()[1]
    }
}

/// Stack of attention layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    /// `dims = [d_in, d_1, ..., d_L]`.
    pub fn init(rng: &mut Rng, dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(format!("encoder dimensions must be positive, got {dims:?}")));
        }
        Ok(EncoderParams {
            layers: dims.windows(2).map(|w| LayerParams::init(rng, w[0], w[1])).collect(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, LayerParams::d_out)
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.xi, &l.w, &l.attn]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.xi, &mut l.w, &mut l.attn])
            .collect()
    }

    /// Records the parameters on `tape`, as trainable leaves when
    /// `trainable`, otherwise as constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundEncoder<'t> {
        let leaf = |t: &Tensor| if trainable { tape.param(t) } else { tape.constant(t.clone()) };
        BoundEncoder {
            layers: self
                .layers
                .iter()
                .map(|l| BoundLayer {
                    xi: leaf(&l.xi),
                    w: leaf(&l.w),
                    attn: leaf(&l.attn),
                })
                .collect(),
        }
    }
}

/// Layer parameters recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundLayer<'t> {
    pub xi: Var<'t>,
    pub w: Var<'t>,
    pub attn: Var<'t>,
}

#[derive(Debug, Clone)]
pub struct BoundEncoder<'t> {
    pub layers: Vec<BoundLayer<'t>>,
}

impl<'t> BoundEncoder<'t> {
    /// Leaf vars in [`EncoderParams::tensors`] order.
    pub fn vars(&self) -> Vec<Var<'t>> {
        self.layers.iter().flat_map(|l| [l.xi, l.w, l.attn]).collect()
    }

    /// Runs every layer; returns all layer outputs, input excluded.
    pub fn forward_all(&self, edges: &EdgeIndex, input: Var<'t>) -> Result<Vec<Var<'t>>> {
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut h = input;
        for layer in &self.layers {
            h = attention_layer(edges, h, layer)?.output;
            outs.push(h);
        }
        Ok(outs)
    }

    pub fn forward(&self, edges: &EdgeIndex, input: Var<'t>) -> Result<Var<'t>> {
        let outs = self.forward_all(edges, input)?;
        Ok(*outs.last().expect("encoder has at least one layer"))
    }
}

/// Output of one attention layer together with its attention weights, one
/// per directed edge in [`EdgeIndex`] order.
#[derive(Debug, Clone, Copy)]
pub struct LayerOutput<'t> {
    pub output: Var<'t>,
    pub attention: Var<'t>,
}

pub fn attention_layer<'t>(edges: &EdgeIndex, h_prev: Var<'t>, layer: &BoundLayer<'t>) -> Result<LayerOutput<'t>> {
    let shape = h_prev.shape();
    if shape.len() != 2 || shape[0] != edges.num_nodes() {
        return Err(Error::Shape {
            op: "attention_layer",
            left: shape,
            right: vec![edges.num_nodes()],
        });
    }
    let proj = h_prev.matmul(layer.w)?;
    let d_out = proj.shape()[1];
    let attn_shape = layer.attn.shape();
    if attn_shape != [2 * d_out, 1] {
        return Err(Error::Shape {
            op: "attention_layer",
            left: attn_shape,
            right: vec![2 * d_out, 1],
        });
    }
    let a_src = layer.attn.gather_rows((0..d_out).collect::<Vec<_>>())?;
    let a_dst = layer.attn.gather_rows((d_out..2 * d_out).collect::<Vec<_>>())?;
    let score_src = proj.matmul(a_src)?.gather_rows(edges.src.clone())?;
    let score_dst = proj.matmul(a_dst)?.gather_rows(edges.dst.clone())?;
    let logits = score_src.add(score_dst)?.leaky_relu(LEAKY_SLOPE);
    let attention = logits.segment_softmax(edges.offsets.clone())?;
    let messages = proj
        .relu()
        .gather_rows(edges.dst.clone())?
        .scale_rows(attention)?
        .segment_sum(edges.offsets.clone())?;
    let output = proj.mul(layer.xi)?.add(messages)?;
    Ok(LayerOutput { output, attention })
}

/// Linear map to two logits followed by a softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    /// d × 2; column `c` scores class `c`.
    pub w: Tensor,
    /// Length-2 bias.
    pub b: Tensor,
}

impl LinearHead {
    pub fn init(rng: &mut Rng, d_in: usize) -> Self {
        LinearHead {
            w: glorot(rng, d_in, 2),
            b: Tensor::zeros(vec![2]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w, &self.b]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundHead<'t> {
        let leaf = |t: &Tensor| if trainable { tape.param(t) } else { tape.constant(t.clone()) };
        BoundHead {
            w: leaf(&self.w),
            b: leaf(&self.b),
        }
    }

    /// Weight difference `w_1 - w_0` (class-1 minus class-0 column).
    pub fn class_direction(&self) -> Vec<f64> {
        (0..self.input_dim())
            .map(|r| self.w.get(r, 1) - self.w.get(r, 0))
            .collect()
    }

    /// Probability of class 1 for one input row, without a tape.
    pub fn prob_class1(&self, z: &[f64]) -> f64 {
        let dir = self.class_direction();
        let logit: f64 = z.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>() + self.b.data()[1] - self.b.data()[0];
        1.0 / (1.0 + (-logit).exp())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundHead<'t> {
    pub w: Var<'t>,
    pub b: Var<'t>,
}

impl<'t> BoundHead<'t> {
    pub fn vars(&self) -> Vec<Var<'t>> {
        vec![self.w, self.b]
    }

    pub fn logits(&self, h: Var<'t>) -> Result<Var<'t>> {
        h.matmul(self.w)?.add_row(self.b)
    }

    /// Row-wise class probabilities, n × 2.
    pub fn probs(&self, h: Var<'t>) -> Result<Var<'t>> {
        Ok(self.logits(h)?.softmax_rows())
    }
}

/// Mean negative log-likelihood of `targets` under row-wise probabilities
/// `probs` (n × 2), restricted to `nodes`. Probabilities are clamped to
/// `[1e-12, 1]` before the logarithm.
pub fn cross_entropy<'t>(probs: Var<'t>, nodes: &[usize], targets: &[u8]) -> Result<Var<'t>> {
    if nodes.is_empty() {
        return Err(Error::invalid("cross-entropy over an empty node set"));
    }
    let cols = probs.shape()[1];
    let flat: Vec<usize> = nodes
        .iter()
        .zip(targets)
        .map(|(&i, &y)| i * cols + y as usize)
        .collect();
    Ok(probs.select(flat)?.clamp(1e-12, 1.0).log()?.mean(None)?.neg())
}
