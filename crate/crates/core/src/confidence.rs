//! Confidence-weighted fairness losses.
//!
//! Nodes whose proxy confidence reaches `tau` take part in the weighted MMD,
//! with weights normalized inside each predicted group. Every node keeps its
//! raw confidence as a weight in the covariance penalty.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::GroupIndex;
use crate::identify::ProxyResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceWeights {
    /// Nodes that enter the MMD, split by proxy group.
    pub included: GroupIndex,
    /// Weights aligned with `included.deprived`; they sum to 1.
    pub alpha: Vec<f64>,
    /// Weights aligned with `included.favored`; they sum to 1.
    pub beta: Vec<f64>,
    /// Per-node covariance weight.
    pub raw: Vec<f64>,
    pub w_sum: f64,
    pub tau: f64,
    /// Threshold actually applied to the deprived and favored groups.
    pub effective_tau: [f64; 2],
    pub warnings: Vec<String>,
}

fn normalized(conf: &[f64], nodes: &[usize]) -> Vec<f64> {
    let total: f64 = nodes.iter().map(|&i| conf[i]).sum();
    nodes.iter().map(|&i| conf[i] / total).collect()
}

/// Builds the weights for `proxies` at threshold `tau` in [0.5, 1].
pub fn confidence_weights(proxies: &ProxyResult, tau: f64) -> Result<ConfidenceWeights> {
    if !(0.5..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau must lie in [0.5, 1], got {tau}")));
    }
    if let Some(c) = proxies.confidence.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::invalid(format!("confidence {c} outside [0, 1]")));
    }
    let all = GroupIndex::from_groups(&proxies.group, 0..proxies.len());
    all.require_both("proxy groups")?;
    let mut warnings = Vec::new();
    let mut effective_tau = [tau; 2];
    let mut pick = |members: &[usize], g: usize| -> Vec<usize> {
        let max = members
            .iter()
            .map(|&i| proxies.confidence[i])
            .fold(f64::NEG_INFINITY, f64::max);
        if max < tau {
            effective_tau[g] = max;
            warnings.push(format!(
                "no {} node reaches tau={tau}; threshold relaxed to {max}",
                if g == 0 { "deprived" } else { "favored" }
            ));
        }
        members
            .iter()
            .copied()
            .filter(|&i| proxies.confidence[i] >= effective_tau[g])
            .collect()
    };
    let deprived = pick(&all.deprived, 0);
    let favored = pick(&all.favored, 1);
    let raw = proxies.confidence.clone();
    let w_sum = raw.iter().sum();
    Ok(ConfidenceWeights {
        alpha: normalized(&raw, &deprived),
        beta: normalized(&raw, &favored),
        included: GroupIndex { deprived, favored },
        raw,
        w_sum,
        tau,
        effective_tau,
        warnings,
    })
}

/// Confidence-free weights: every node included, `1/N` per group, raw weight 1.
pub fn uniform_weights(groups: &[u8]) -> Result<ConfidenceWeights> {
    let included = GroupIndex::from_groups(groups, 0..groups.len());
    included.require_both("proxy groups")?;
    let (nd, nf) = (included.n_deprived(), included.n_favored());
    Ok(ConfidenceWeights {
        alpha: vec![1.0 / nd as f64; nd],
        beta: vec![1.0 / nf as f64; nf],
        included,
        raw: vec![1.0; groups.len()],
        w_sum: groups.len() as f64,
        tau: 0.5,
        effective_tau: [0.5; 2],
        warnings: Vec::new(),
    })
}

/// Weighted MMD `c' K c` with `c = (alpha, -beta)` over the included nodes.
pub fn weighted_mmd<'t>(h: Var<'t>, weights: &ConfidenceWeights, gamma: f64) -> Result<Var<'t>> {
    weights.included.require_both("weighted mmd")?;
    let nodes: Vec<usize> = weights
        .included
        .deprived
        .iter()
        .chain(&weights.included.favored)
        .copied()
        .collect();
    let c: Vec<f64> = weights
        .alpha
        .iter()
        .copied()
        .chain(weights.beta.iter().map(|b| -b))
        .collect();
    let m = c.len();
    let tape = h.tape();
    let x = h.gather_rows(nodes)?;
    let k = x.rbf_kernel_matrix(x, gamma)?;
    let row = tape.constant(Tensor::matrix(1, m, c.clone())?);
    let col = tape.constant(Tensor::matrix(m, 1, c)?);
    Ok(row.matmul(k)?.matmul(col)?.sum_all())
}

/// Sum over channels of the squared weighted covariance between the proxy
/// group and the channel.
pub fn weighted_covariance_penalty<'t>(h: Var<'t>, s_hat: &[u8], weights: &ConfidenceWeights) -> Result<Var<'t>> {
    let n = s_hat.len();
    if h.shape().first() != Some(&n) || weights.raw.len() != n {
        return Err(Error::Shape {
            op: "weighted_covariance_penalty",
            left: h.shape(),
            right: vec![n, weights.raw.len()],
        });
    }
    let w_sum: f64 = weights.raw.iter().sum();
    if !(w_sum > 0.0) {
        return Err(Error::invalid("covariance weights sum to zero"));
    }
    let s_bar = weights.raw.iter().zip(s_hat).map(|(w, &s)| w * f64::from(s)).sum::<f64>() / w_sum;
    let v: Vec<f64> = weights
        .raw
        .iter()
        .zip(s_hat)
        .map(|(w, &s)| w * (f64::from(s) - s_bar) / w_sum)
        .collect();
    let tape = h.tape();
    let w_row = tape.constant(Tensor::matrix(1, n, weights.raw.clone())?);
    let h_bar = w_row.matmul(h)?.scale(1.0 / w_sum);
    let centered = h.add_row(h_bar.neg())?;
    let v_row = tape.constant(Tensor::matrix(1, n, v)?);
    Ok(v_row.matmul(centered)?.square().sum_all())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tape};
    use crate::fair::{covariance_penalty, mmd_loss};
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn proxies(group: Vec<u8>, confidence: Vec<f64>) -> ProxyResult {
        let n = group.len();
        ProxyResult { group, confidence, observed: vec![false; n] }
    }

    fn kernel(a: &[f64], b: &[f64], gamma: f64) -> f64 {
        (-gamma * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).exp()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
        Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
    }

    fn brute_weighted_mmd(h: &Tensor, w: &ConfidenceWeights, gamma: f64) -> f64 {
        let (d, f) = (&w.included.deprived, &w.included.favored);
        let mut total = 0.0;
        for (a, &i) in d.iter().enumerate() {
            for (b, &j) in d.iter().enumerate() {
                total += w.alpha[a] * w.alpha[b] * kernel(h.row(i), h.row(j), gamma);
            }
        }
        for (a, &i) in f.iter().enumerate() {
            for (b, &j) in f.iter().enumerate() {
                total += w.beta[a] * w.beta[b] * kernel(h.row(i), h.row(j), gamma);
            }
        }
        for (a, &i) in d.iter().enumerate() {
            for (b, &j) in f.iter().enumerate() {
                total -= 2.0 * w.alpha[a] * w.beta[b] * kernel(h.row(i), h.row(j), gamma);
            }
        }
        total
    }

    fn brute_weighted_cov(h: &Tensor, s: &[u8], w: &[f64]) -> f64 {
        let total: f64 = w.iter().sum();
        let s_bar: f64 = s.iter().zip(w).map(|(&s, w)| w * s as f64).sum::<f64>() / total;
        (0..h.row_len())
            .map(|c| {
                let h_bar: f64 = (0..s.len()).map(|i| w[i] * h.get(i, c)).sum::<f64>() / total;
                let cov: f64 = (0..s.len())
                    .map(|i| w[i] * (s[i] as f64 - s_bar) * (h.get(i, c) - h_bar))
                    .sum::<f64>()
                    / total;
                cov * cov
            })
            .sum()
    }

    #[test]
    fn full_information_gives_uniform_weights() {
        let w = confidence_weights(&proxies(vec![0, 0, 1, 1, 1], vec![1.0; 5]), 0.7).unwrap();
        assert_eq!(w.alpha, vec![0.5, 0.5]);
        for b in &w.beta {
            assert!((b - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(w.warnings.is_empty());
    }

    #[test]
    fn weights_normalize_confidences() {
        let w = confidence_weights(&proxies(vec![0, 0, 1], vec![1.0, 0.6, 0.8]), 0.5).unwrap();
        assert!((w.alpha[0] - 0.625).abs() < 1e-15 && (w.alpha[1] - 0.375).abs() < 1e-15);
        assert_eq!(w.beta, vec![1.0]);
        assert_eq!(w.raw, vec![1.0, 0.6, 0.8]);
    }

    #[test]
    fn threshold_excludes_from_mmd_only() {
        let w = confidence_weights(&proxies(vec![0, 0, 1, 1], vec![1.0, 0.6, 0.95, 1.0]), 0.9).unwrap();
        assert_eq!(w.included.deprived, vec![0]);
        assert_eq!(w.alpha, vec![1.0]);
        assert_eq!(w.raw[1], 0.6);
    }

    #[test]
    fn threshold_relaxes_for_an_unconfident_group() {
        let w = confidence_weights(&proxies(vec![0, 0, 1], vec![0.6, 0.55, 1.0]), 0.8).unwrap();
        assert_eq!(w.included.deprived, vec![0]);
        assert_eq!(w.effective_tau, [0.6, 0.8]);
        assert_eq!(w.warnings.len(), 1);
    }

    #[test]
    fn tau_out_of_range_is_rejected() {
        let p = proxies(vec![0, 1], vec![1.0, 1.0]);
        assert!(confidence_weights(&p, 0.4).is_err());
        assert!(confidence_weights(&p, 1.1).is_err());
        assert!(matches!(
            confidence_weights(&proxies(vec![0, 0], vec![1.0, 1.0]), 0.7),
            Err(Error::EmptyGroup(_))
        ));
    }

    #[test]
    fn two_point_closed_form() {
        let p = proxies(vec![0, 0, 1, 1], vec![1.0, 0.6, 0.55, 0.9]);
        let w = confidence_weights(&p, 0.7).unwrap();
        let tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&[vec![0.0], vec![5.0], vec![-3.0], vec![0.5]]).unwrap());
        let v = weighted_mmd(h, &w, 1.0).unwrap().item();
        assert!((v - (2.0 - 2.0 * (-0.25f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn weighted_mmd_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let group: Vec<u8> = (0..16).map(|i| u8::from(i >= 8)).collect();
            let conf: Vec<f64> = (0..16).map(|_| rng.random_range(0.5..=1.0)).collect();
            let w = confidence_weights(&proxies(group, conf), 0.6).unwrap();
            let x = random_matrix(&mut rng, 16, 3);
            let tape = Tape::new();
            let got = weighted_mmd(tape.constant(x.clone()), &w, 0.7).unwrap().item();
            assert!((got - brute_weighted_mmd(&x, &w, 0.7)).abs() < 1e-10);
        }
    }

    #[test]
    fn weighted_covariance_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let s: Vec<u8> = (0..10).map(|_| rng.random_range(0..2)).collect();
            let conf: Vec<f64> = (0..10).map(|_| rng.random_range(0.5..=1.0)).collect();
            let mut s_ok = s.clone();
            s_ok[0] = 0;
            s_ok[1] = 1;
            let w = confidence_weights(&proxies(s_ok.clone(), conf.clone()), 0.5).unwrap();
            let x = random_matrix(&mut rng, 10, 4);
            let tape = Tape::new();
            let got = weighted_covariance_penalty(tape.constant(x.clone()), &s_ok, &w).unwrap().item();
            assert!((got - brute_weighted_cov(&x, &s_ok, &conf)).abs() < 1e-10);
        }
    }

    #[test]
    fn dominant_node_has_no_covariance() {
        let s = vec![0, 1, 1, 0, 1];
        let mut conf = vec![1e-9; 5];
        conf[2] = 1.0;
        let w = ConfidenceWeights { raw: conf, ..uniform_weights(&s).unwrap() };
        let tape = Tape::new();
        let x = Tensor::from_rows(&[vec![1.0], vec![-2.0], vec![3.0], vec![0.5], vec![7.0]]).unwrap();
        let v = weighted_covariance_penalty(tape.constant(x), &s, &w).unwrap().item();
        assert!(v < 1e-12, "{v}");
    }

    #[test]
    fn full_information_reduces_to_unweighted_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let s: Vec<u8> = (0..12).map(|i| u8::from(i % 3 == 0)).collect();
            let p = ProxyResult::from_observed(s.clone());
            let w = confidence_weights(&p, 0.7).unwrap();
            let groups = GroupIndex::from_groups(&s, 0..12);
            let x = random_matrix(&mut rng, 12, 5);
            let tape = Tape::new();
            let h = tape.constant(x);
            let a = weighted_mmd(h, &w, 0.4).unwrap().item();
            let b = mmd_loss(h, &groups, 0.4).unwrap().item();
            assert!((a - b).abs() < 1e-10);
            let a = weighted_covariance_penalty(h, &s, &w).unwrap().item();
            let b = covariance_penalty(h, &s).unwrap().item();
            assert!((a - b).abs() < 1e-10);
            let u = uniform_weights(&s).unwrap();
            assert!((weighted_mmd(h, &u, 0.4).unwrap().item() - mmd_loss(h, &groups, 0.4).unwrap().item()).abs() < 1e-10);
        }
    }

    #[test]
    fn weighted_losses_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s: Vec<u8> = (0..12).map(|i| u8::from(i % 2 == 0)).collect();
        let conf: Vec<f64> = (0..12).map(|_| rng.random_range(0.5..=1.0)).collect();
        let w = confidence_weights(&proxies(s.clone(), conf), 0.6).unwrap();
        let x = random_matrix(&mut rng, 12, 6);
        let err = grad_check(|_, v| weighted_mmd(v[0], &w, 0.3), &[x.clone()], 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
        let err = grad_check(|_, v| weighted_covariance_penalty(v[0], &s, &w), &[x], 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn weights_are_normalized_and_deterministic(
            conf in proptest::collection::vec(0.5f64..=1.0, 4..20),
            tau in 0.5f64..=1.0,
        ) {
            let group: Vec<u8> = (0..conf.len()).map(|i| (i % 2) as u8).collect();
            let p = proxies(group, conf);
            let w = confidence_weights(&p, tau).unwrap();
            prop_assert!((w.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!((w.beta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.alpha.iter().chain(&w.beta).all(|&a| a >= 0.0));
            prop_assert_eq!(w, confidence_weights(&p, tau).unwrap());
        }

        #[test]
        fn raising_confidence_raises_weight(
            conf in proptest::collection::vec(0.5f64..=1.0, 4..12),
            bump in 0.0f64..0.5,
        ) {
            let group: Vec<u8> = (0..conf.len()).map(|i| (i % 2) as u8).collect();
            let before = confidence_weights(&proxies(group.clone(), conf.clone()), 0.5).unwrap();
            let mut raised = conf.clone();
            raised[0] = (raised[0] + bump).min(1.0);
            let after = confidence_weights(&proxies(group, raised), 0.5).unwrap();
            prop_assert!(after.alpha[0] >= before.alpha[0] - 1e-15);
        }
    }
}
