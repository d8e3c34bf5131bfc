//! Utility and group-fairness metrics.
//!
//! Every function takes a [`GroupIndex`] already restricted to the nodes
//! being scored. Parity gaps are absolute differences, so they do not depend
//! on which group is called deprived.

mod bounds;
mod report;

pub use bounds::{
    dp_bound_rhs, estimate_lipschitz, layer_bound_diagnostics, soft_delta_dp, spectral_norm, LayerBound,
    SPECTRAL_ITERS, SPECTRAL_TOL,
};
pub use report::{evaluate, FairnessReport, ReportMeta, BOUND_TOL};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::GroupIndex;

/// Accuracy and F1 of the positive class over `nodes`. F1 is 0 when
/// precision and recall are both 0.
pub fn classification_metrics(pred: &[u8], truth: &[u8], nodes: &[usize]) -> Result<(f64, f64)> {
    if nodes.is_empty() {
        return Err(Error::UndefinedMetric("classification metrics over an empty set".into()));
    }
    let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for &i in nodes {
        match (pred[i], truth[i]) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fn_ += 1,
            _ => {}
        }
        correct += usize::from(pred[i] == truth[i]);
    }
    let acc = correct as f64 / nodes.len() as f64;
    let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
    Ok((acc, f1))
}

fn positive_rate(pred: &[u8], nodes: &[usize]) -> f64 {
    nodes.iter().filter(|&&i| pred[i] == 1).count() as f64 / nodes.len() as f64
}

/// `|P(y_hat = 1 | deprived) - P(y_hat = 1 | favored)|`.
pub fn delta_dp(pred: &[u8], groups: &GroupIndex) -> Result<f64> {
    groups.require_both("demographic parity")?;
    Ok((positive_rate(pred, &groups.deprived) - positive_rate(pred, &groups.favored)).abs())
}

/// Gap in true-positive rates between the groups.
pub fn delta_eo(pred: &[u8], truth: &[u8], groups: &GroupIndex) -> Result<f64> {
    let positives = |nodes: &[usize]| -> Vec<usize> { nodes.iter().copied().filter(|&i| truth[i] == 1).collect() };
    let (d, f) = (positives(&groups.deprived), positives(&groups.favored));
    if d.is_empty() || f.is_empty() {
        return Err(Error::UndefinedMetric(
            "equal opportunity needs a positive node in each group".into(),
        ));
    }
    Ok((positive_rate(pred, &d) - positive_rate(pred, &f)).abs())
}

fn group_mean(h: &Tensor, nodes: &[usize]) -> Vec<f64> {
    let mut mean = vec![0.0; h.row_len()];
    for &i in nodes {
        for (m, x) in mean.iter_mut().zip(h.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nodes.len() as f64);
    mean
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Euclidean distance between the two groups' mean rows.
pub fn bias_gap(h: &Tensor, groups: &GroupIndex) -> Result<f64> {
    groups.require_both("bias gap")?;
    Ok(distance(&group_mean(h, &groups.deprived), &group_mean(h, &groups.favored)))
}
