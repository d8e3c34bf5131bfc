use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{distance, group_mean};
use crate::autodiff::Tensor;
use crate::encoder::LinearHead;
use crate::error::Result;
use crate::graph::GroupIndex;

pub const SPECTRAL_ITERS: usize = 100;
pub const SPECTRAL_TOL: f64 = 1e-9;
const SPECTRAL_SEED: u64 = 0x5eed;

/// Lipschitz constant of the head's class-1 probability in its input:
/// a quarter of the norm of the class-weight difference.
pub fn estimate_lipschitz(head: &LinearHead) -> f64 {
    0.25 * head.class_direction().iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Parity gap of mean class-1 probabilities.
pub fn soft_delta_dp(prob1: &[f64], groups: &GroupIndex) -> Result<f64> {
    groups.require_both("soft demographic parity")?;
    let mean = |nodes: &[usize]| nodes.iter().map(|&i| prob1[i]).sum::<f64>() / nodes.len() as f64;
    Ok((mean(&groups.deprived) - mean(&groups.favored)).abs())
}

/// Right-hand side of the parity bound: the head's output gap at the group
/// centroids plus `L/2` times the mean within-group spread. `z` holds the
/// head inputs.
pub fn dp_bound_rhs(z: &Tensor, groups: &GroupIndex, head: &LinearHead, lipschitz: f64) -> Result<f64> {
    groups.require_both("parity bound")?;
    let mu_d = group_mean(z, &groups.deprived);
    let mu_f = group_mean(z, &groups.favored);
    let spread = |nodes: &[usize], mu: &[f64]| {
        nodes.iter().map(|&i| distance(z.row(i), mu)).sum::<f64>() / nodes.len() as f64
    };
    let centroid_gap = (head.prob_class1(&mu_d) - head.prob_class1(&mu_f)).abs();
    Ok(centroid_gap + 0.5 * lipschitz * (spread(&groups.deprived, &mu_d) + spread(&groups.favored, &mu_f)))
}

/// Largest singular value by power iteration on `W^T W` from a fixed start.
pub fn spectral_norm(w: &Tensor, iters: usize, tol: f64) -> f64 {
    let (r, c) = (w.rows(), w.row_len());
    if w.data().iter().all(|&x| x == 0.0) || c == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SPECTRAL_SEED);
    let mut v: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut estimate = 0.0;
    for _ in 0..iters {
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let wv: Vec<f64> = (0..r).map(|i| w.row(i).iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        estimate = norm(&wv);
        let mut wtwv = vec![0.0; c];
        for (i, s) in wv.iter().enumerate() {
            for (o, a) in wtwv.iter_mut().zip(w.row(i)) {
                *o += a * s;
            }
        }
        // Residual of the eigen-equation for W^T W at the current vector.
        let lambda = estimate * estimate;
        let residual = norm(&wtwv.iter().zip(&v).map(|(a, b)| a - lambda * b).collect::<Vec<_>>());
        v = wtwv;
        if residual <= tol * lambda.max(1.0) || norm(&v) == 0.0 {
            break;
        }
    }
    estimate
}

/// Measurable terms of the per-layer representation-gap bound. The
/// unknown constant factor and base slack are not estimated; `residual`
/// is what they would have to cover.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerBound {
    pub layer: usize,
    /// Distance between group means at this layer.
    pub gap: f64,
    pub gap_prev: f64,
    /// Mean cross-group kernel value of `sigmoid(h_prev W)`.
    pub cross_kernel: f64,
    pub weight_norm: f64,
    /// Largest per-coordinate deviation from the own-group mean at the
    /// previous layer.
    pub delta_prev: f64,
    /// `(3 - 2 * cross_kernel) * gap_prev + gap`.
    pub constant_free_rhs: f64,
    /// `0.25 * weight_norm * (1 + 2 / N_f) * sqrt(d_h) * delta_prev`.
    pub slack_factor: f64,
    /// `max(0, gap - constant_free_rhs)`.
    pub residual: f64,
}

fn max_deviation(h: &Tensor, groups: &GroupIndex) -> f64 {
    [&groups.deprived, &groups.favored]
        .into_iter()
        .map(|nodes| {
            let mu = group_mean(h, nodes);
            nodes
                .iter()
                .flat_map(|&i| h.row(i).iter().zip(&mu).map(|(x, m)| (x - m).abs()))
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn sigmoid_projection(h: &Tensor, w: &Tensor) -> Tensor {
    let (n, d_in, d_out) = (h.rows(), w.rows(), w.row_len());
    let mut out = vec![0.0; n * d_out];
    for i in 0..n {
        let o = &mut out[i * d_out..(i + 1) * d_out];
        for (k, &x) in h.row(i).iter().enumerate().take(d_in) {
            for (ov, wv) in o.iter_mut().zip(w.row(k)) {
                *ov += x * wv;
            }
        }
        o.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
    }
    Tensor::matrix(n, d_out, out).expect("projection shape")
}

/// Per-layer diagnostics from `layers` (input followed by every layer
/// output) and the layer weight matrices.
pub fn layer_bound_diagnostics(
    layers: &[Tensor],
    weights: &[&Tensor],
    groups: &GroupIndex,
    gamma: f64,
) -> Result<Vec<LayerBound>> {
    groups.require_both("layer diagnostics")?;
    let nf = groups.n_favored() as f64;
    let mut out = Vec::with_capacity(weights.len());
    for (l, w) in weights.iter().enumerate() {
        let (prev, cur) = (&layers[l], &layers[l + 1]);
        let gap = super::bias_gap(cur, groups)?;
        let gap_prev = super::bias_gap(prev, groups)?;
        let proj = sigmoid_projection(prev, w);
        let mut cross = 0.0;
        for &i in &groups.deprived {
            for &j in &groups.favored {
                cross += (-gamma * distance(proj.row(i), proj.row(j)).powi(2)).exp();
            }
        }
        let cross_kernel = cross / (groups.n_deprived() as f64 * nf);
        let weight_norm = spectral_norm(w, SPECTRAL_ITERS, SPECTRAL_TOL);
        let delta_prev = max_deviation(prev, groups);
        let constant_free_rhs = (3.0 - 2.0 * cross_kernel) * gap_prev + gap;
        out.push(LayerBound {
            layer: l + 1,
            gap,
            gap_prev,
            cross_kernel,
            weight_norm,
            delta_prev,
            constant_free_rhs,
            slack_factor: 0.25 * weight_norm * (1.0 + 2.0 / nf) * (cur.row_len() as f64).sqrt() * delta_prev,
            residual: (gap - constant_free_rhs).max(0.0),
        });
    }
    Ok(out)
}
