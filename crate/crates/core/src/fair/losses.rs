use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};
use crate::encoder::cross_entropy;
use crate::error::{Error, Result};
use crate::graph::{Graph, GroupIndex};
use crate::rng::Rng;

/// Scalar values of the objective's terms for one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub info: f64,
    pub recon: f64,
    pub fairness: f64,
    pub correlation: f64,
}

/// Differentiable terms of the objective on one tape.
#[derive(Debug, Clone, Copy)]
pub struct LossParts<'t> {
    pub info: Var<'t>,
    pub recon: Var<'t>,
    pub fairness: Var<'t>,
    pub correlation: Var<'t>,
}

/// `h * sigmoid(logits)`, element-wise.
pub fn apply_mask<'t>(h: Var<'t>, mask_logits: Var<'t>) -> Result<Var<'t>> {
    if h.shape() != mask_logits.shape() {
        return Err(Error::Shape {
            op: "apply_mask",
            left: h.shape(),
            right: mask_logits.shape(),
        });
    }
    h.mul(mask_logits.sigmoid())
}

/// Biased MMD estimate between the two groups' rows, diagonal terms included.
pub fn mmd_loss<'t>(h: Var<'t>, groups: &GroupIndex, gamma: f64) -> Result<Var<'t>> {
    groups.require_both("mmd")?;
    let d = h.gather_rows(groups.deprived.clone())?;
    let f = h.gather_rows(groups.favored.clone())?;
    let dd = d.rbf_kernel_matrix(d, gamma)?.mean(None)?;
    let ff = f.rbf_kernel_matrix(f, gamma)?.mean(None)?;
    let df = d.rbf_kernel_matrix(f, gamma)?.mean(None)?;
    dd.add(ff)?.sub(df.scale(2.0))
}

/// Sum over channels of the squared covariance (1/n) between `s` and the
/// channel.
pub fn covariance_penalty<'t>(h: Var<'t>, s: &[u8]) -> Result<Var<'t>> {
    let n = s.len();
    if n < 2 {
        return Err(Error::invalid("covariance needs at least two nodes"));
    }
    if h.shape().first() != Some(&n) {
        return Err(Error::Shape {
            op: "covariance_penalty",
            left: h.shape(),
            right: vec![n],
        });
    }
    let s_bar = s.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
    let centered_s: Vec<f64> = s.iter().map(|&v| (f64::from(v) - s_bar) / n as f64).collect();
    let s_row = h.tape().constant(Tensor::matrix(1, n, centered_s)?);
    let centered_h = h.add_row(h.mean(Some(0))?.neg())?;
    Ok(s_row.matmul(centered_h)?.square().sum_all())
}

/// Mean cross-entropy of class probabilities over labeled nodes.
pub fn information_loss<'t>(probs: Var<'t>, labels: &[Option<u8>], labeled: &[usize]) -> Result<Var<'t>> {
    if labeled.is_empty() {
        return Err(Error::invalid("information loss needs labeled nodes"));
    }
    let targets = labeled
        .iter()
        .map(|&i| labels[i].ok_or_else(|| Error::invalid(format!("node {i} has no label"))))
        .collect::<Result<Vec<u8>>>()?;
    cross_entropy(probs, labeled, &targets)
}

/// Edge-reconstruction cross-entropy with `sigmoid(<h_i, h_j>)` as the edge
/// probability, averaged over positive and negative pairs.
pub fn reconstruction_loss<'t>(h: Var<'t>, pos: &[(usize, usize)], neg: &[(usize, usize)]) -> Result<Var<'t>> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid("reconstruction needs positive and negative pairs"));
    }
    let (left, right): (Vec<usize>, Vec<usize>) = pos.iter().chain(neg).copied().unzip();
    let logits = h.gather_rows(left)?.mul(h.gather_rows(right)?)?.sum(Some(1))?;
    let targets: Vec<f64> = std::iter::repeat_n(1.0, pos.len())
        .chain(std::iter::repeat_n(0.0, neg.len()))
        .collect();
    let t = h.tape().constant(Tensor::vector(targets));
    logits.softplus().sub(logits.mul(t)?)?.mean(None)
}

/// `info + a * recon + b * (fairness + correlation)`.
pub fn total_loss<'t>(parts: &LossParts<'t>, a: f64, b: f64) -> Result<Var<'t>> {
    if !(a >= 0.0) || !(b >= 0.0) {
        return Err(Error::invalid(format!("loss weights must be non-negative, got a={a} b={b}")));
    }
    parts
        .info
        .add(parts.recon.scale(a))?
        .add(parts.fairness.add(parts.correlation)?.scale(b))
}

impl LossParts<'_> {
    pub fn breakdown(&self, total: f64) -> LossBreakdown {
        LossBreakdown {
            total,
            info: self.info.item(),
            recon: self.recon.item(),
            fairness: self.fairness.item(),
            correlation: self.correlation.item(),
        }
    }
}

/// Samples `per_group` edges incident to each proxy group (with replacement)
/// and `round(neg_ratio * positives)` uniform non-adjacent pairs, also
/// with replacement.
pub fn sample_reconstruction_pairs(
    g: &Graph,
    groups: &[u8],
    per_group: usize,
    neg_ratio: f64,
    rng: &mut Rng,
) -> Result<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
    let n = g.num_nodes();
    if n < 3 || g.num_edges() == 0 {
        return Err(Error::invalid("reconstruction sampling needs edges and at least three nodes"));
    }
    let mut pos = Vec::with_capacity(2 * per_group);
    for grp in 0..2u8 {
        let incident: Vec<(usize, usize)> = g
            .edges()
            .iter()
            .copied()
            .filter(|&(i, j)| groups[i] == grp || groups[j] == grp)
            .collect();
        if incident.is_empty() {
            continue;
        }
        pos.extend((0..per_group).map(|_| incident[rng.random_range(0..incident.len())]));
    }
    let want = (neg_ratio * pos.len() as f64).round() as usize;
    let max_neg = n * (n - 1) / 2 - g.num_edges();
    if want > 0 && max_neg == 0 {
        return Err(Error::invalid("complete graph has no non-edges to sample"));
    }
    let mut neg = Vec::with_capacity(want);
    while neg.len() < want {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j || g.has_edge(i, j) {
            continue;
        }
        neg.push((i.min(j), i.max(j)));
    }
    Ok((pos, neg))
}
