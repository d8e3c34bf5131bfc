use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::Graph;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Group offset of the latent task score per unit of `label_bias`.
pub const LABEL_OFFSET_PER_BIAS: f64 = 0.3;
/// Standard deviation of the label noise added to the latent task score.
pub const LABEL_NOISE: f64 = 0.3;

/// Parameters of the two-block biased graph generator.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticParams {
    pub n: usize,
    /// Share of edge probability mass inside blocks: `p_in / (p_in + p_out)`.
    pub homophily: f64,
    pub feature_dim: usize,
    /// Distance between the two group means along the group direction.
    pub feature_shift: f64,
    /// Strength of the group effect on task labels.
    pub label_bias: f64,
    pub avg_degree: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            n: 1000,
            homophily: 0.8,
            feature_dim: 8,
            feature_shift: 1.5,
            label_bias: 0.7,
            avg_degree: 10.0,
            seed: 0,
        }
    }
}

/// Two-block stochastic block model with group-shifted Gaussian features.
///
/// Nodes `0..n/2` form the deprived block (`s = 0`), the rest the favored
/// block. Feature column 0 carries a latent task score `t ~ N(0, 1)` plus
/// unit noise; column 1 carries the group shift `±feature_shift / 2` plus
/// unit noise; remaining columns are pure noise. The label is
/// `1[t + 0.3 * label_bias * (2s - 1) + N(0, 0.3^2) > 0]`. Demographics are
/// fully observed.
pub fn synthesize_biased_graph(p: &SyntheticParams) -> Result<Graph> {
    if p.n < 20 {
        return Err(Error::invalid(format!("synthetic graphs need n >= 20, got {}", p.n)));
    }
    if p.feature_dim < 2 {
        return Err(Error::invalid(format!(
            "synthetic graphs need feature_dim >= 2, got {}",
            p.feature_dim
        )));
    }
    if !(0.0..=1.0).contains(&p.homophily) {
        return Err(Error::invalid(format!("homophily must lie in [0, 1], got {}", p.homophily)));
    }
    if !(p.avg_degree > 0.0) || !p.feature_shift.is_finite() || !p.label_bias.is_finite() {
        return Err(Error::invalid("avg_degree must be positive and shifts finite"));
    }
    let n = p.n;
    let half = n / 2;
    let group = |i: usize| u8::from(i >= half);
    let total = 2.0 * p.avg_degree / n as f64;
    let p_in = p.homophily * total;
    let p_out = (1.0 - p.homophily) * total;
    if p_in > 1.0 || p_out > 1.0 {
        return Err(Error::invalid(format!(
            "avg_degree {} is too large for n = {}",
            p.avg_degree, n
        )));
    }

    let mut rng = rng::stream(p.seed, Stream::Data);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let prob = if group(i) == group(j) { p_in } else { p_out };
            if prob > 0.0 && rng.random::<f64>() < prob {
                edges.push((i, j));
            }
        }
    }
    if edges.is_empty() {
        return Err(Error::Data("synthetic parameters produced an empty edge set".into()));
    }

    let d = p.feature_dim;
    let offset = LABEL_OFFSET_PER_BIAS * p.label_bias;
    let mut feats = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut demo = Vec::with_capacity(n);
    for i in 0..n {
        let s = group(i);
        let sign = if s == 1 { 1.0 } else { -1.0 };
        let t: f64 = StandardNormal.sample(&mut rng);
        for c in 0..d {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let v = match c {
                0 => t + noise,
                1 => sign * p.feature_shift / 2.0 + noise,
                _ => noise,
            };
            feats.push(v);
        }
        let eps: f64 = StandardNormal.sample(&mut rng);
        let score = t + sign * offset + LABEL_NOISE * eps;
        labels.push(Some(u8::from(score > 0.0)));
        demo.push(Some(s));
    }
    Graph::new(edges, Tensor::matrix(n, d, feats)?, labels, demo)
}
