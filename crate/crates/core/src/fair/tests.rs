use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check, Tape, Tensor, Var};
use crate::confidence::{confidence_weights, weighted_covariance_penalty, weighted_mmd};
use crate::encoder::{BoundEncoder, BoundHead, BoundLayer, EdgeIndex, EncoderParams, LinearHead};
use crate::error::{Error, Result};
use crate::graph::{make_split, synthesize_biased_graph, Graph, GroupIndex, MaskMode, SplitRatios, SyntheticParams};
use crate::identify::ProxyResult;

fn kernel(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).exp()
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn brute_mmd(h: &Tensor, g: &GroupIndex, gamma: f64) -> f64 {
    let avg = |a: &[usize], b: &[usize]| {
        let mut s = 0.0;
        for &i in a {
            for &j in b {
                s += kernel(h.row(i), h.row(j), gamma);
            }
        }
        s / (a.len() * b.len()) as f64
    };
    avg(&g.deprived, &g.deprived) + avg(&g.favored, &g.favored) - 2.0 * avg(&g.deprived, &g.favored)
}

fn brute_cov(h: &Tensor, s: &[u8]) -> f64 {
    let n = s.len() as f64;
    let s_bar = s.iter().map(|&v| v as f64).sum::<f64>() / n;
    (0..h.row_len())
        .map(|c| {
            let m = (0..s.len()).map(|i| h.get(i, c)).sum::<f64>() / n;
            let cov = (0..s.len()).map(|i| (s[i] as f64 - s_bar) * (h.get(i, c) - m)).sum::<f64>() / n;
            cov * cov
        })
        .sum()
}

#[test]
fn mask_examples() {
    let tape = Tape::new();
    let h = tape.constant(Tensor::matrix(1, 2, vec![2.0, 4.0]).unwrap());
    let half = apply_mask(h, tape.constant(Tensor::zeros(vec![1, 2]))).unwrap();
    assert_eq!(half.value().data(), &[1.0, 2.0]);
    let open = apply_mask(h, tape.constant(Tensor::full(vec![1, 2], 30.0))).unwrap();
    assert!(open.value().data().iter().zip([2.0, 4.0]).all(|(a, b)| (a - b).abs() < 1e-9));
    let shut = apply_mask(h, tape.constant(Tensor::full(vec![1, 2], -30.0))).unwrap();
    assert!(shut.value().data().iter().all(|a| a.abs() < 1e-9));
    assert!(apply_mask(h, tape.constant(Tensor::zeros(vec![2, 1]))).is_err());
}

#[test]
fn mmd_closed_form_and_identity() {
    let tape = Tape::new();
    let h = tape.constant(Tensor::from_rows(&[vec![0.0], vec![0.0], vec![1.0], vec![1.0]]).unwrap());
    let groups = GroupIndex { deprived: vec![0, 1], favored: vec![2, 3] };
    let v = mmd_loss(h, &groups, 1.0).unwrap().item();
    assert!((v - (2.0 - 2.0 * (-1.0f64).exp())).abs() < 1e-9);
    assert!((v - 1.264241).abs() < 1e-6);

    let same = tape.constant(Tensor::from_rows(&[vec![0.3, 1.0], vec![-2.0, 0.5], vec![-2.0, 0.5], vec![0.3, 1.0]]).unwrap());
    assert!(mmd_loss(same, &groups, 0.7).unwrap().item().abs() < 1e-10);
    let empty = GroupIndex { deprived: vec![0], favored: vec![] };
    assert!(matches!(mmd_loss(h, &empty, 1.0), Err(Error::EmptyGroup(_))));
}

#[test]
fn mmd_and_covariance_match_double_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let x = random_matrix(&mut rng, 20, 3);
        let groups = GroupIndex { deprived: (0..10).collect(), favored: (10..20).collect() };
        let tape = Tape::new();
        let h = tape.constant(x.clone());
        assert!((mmd_loss(h, &groups, 0.8).unwrap().item() - brute_mmd(&x, &groups, 0.8)).abs() < 1e-10);
        let s: Vec<u8> = (0..20).map(|_| rng.random_range(0..2)).collect();
        assert!((covariance_penalty(h, &s).unwrap().item() - brute_cov(&x, &s)).abs() < 1e-10);
    }
}

#[test]
fn covariance_examples() {
    let tape = Tape::new();
    let h = tape.constant(Tensor::from_rows(&[vec![0.0, 5.0], vec![1.0, 5.0]]).unwrap());
    assert!((covariance_penalty(h, &[0, 1]).unwrap().item() - 0.0625).abs() < 1e-15);
    let shifted = tape.constant(Tensor::from_rows(&[vec![100.0, 5.0], vec![101.0, 5.0]]).unwrap());
    assert!((covariance_penalty(shifted, &[0, 1]).unwrap().item() - 0.0625).abs() < 1e-10);
    let constant = tape.constant(Tensor::from_rows(&[vec![3.0], vec![3.0], vec![3.0]]).unwrap());
    assert_eq!(covariance_penalty(constant, &[0, 1, 1]).unwrap().item(), 0.0);
    let indicator = tape.constant(Tensor::from_rows(&[vec![0.0], vec![1.0], vec![1.0]]).unwrap());
    assert!(covariance_penalty(indicator, &[0, 1, 1]).unwrap().item() > 0.0);
    let one = tape.constant(Tensor::matrix(1, 1, vec![1.0]).unwrap());
    assert!(covariance_penalty(one, &[0]).is_err());
}

#[test]
fn information_loss_examples() {
    let tape = Tape::new();
    let labels = [Some(1), Some(0), Some(1), Some(0)];
    let onehot = tape.constant(Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap());
    assert!(information_loss(onehot, &labels, &[0, 1, 2, 3]).unwrap().item() < 1e-10);
    let uniform = tape.constant(Tensor::full(vec![4, 2], 0.5));
    let v = information_loss(uniform, &labels, &[0, 1, 2, 3]).unwrap().item();
    assert!((v - std::f64::consts::LN_2).abs() < 1e-9);
    let p = tape.constant(Tensor::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.4], vec![0.9, 0.1], vec![0.3, 0.7]]).unwrap());
    let expected = -(0.8f64.ln() + 0.6f64.ln() + 0.1f64.ln() + 0.3f64.ln()) / 4.0;
    assert!((information_loss(p, &labels, &[0, 1, 2, 3]).unwrap().item() - expected).abs() < 1e-12);
    assert!(information_loss(p, &labels, &[]).is_err());
    assert!(information_loss(p, &[None, Some(0), Some(1), Some(0)], &[0]).is_err());
}

#[test]
fn reconstruction_examples() {
    let tape = Tape::new();
    let ortho = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap());
    let v = reconstruction_loss(ortho, &[(0, 1)], &[(0, 2)]).unwrap().item();
    assert!((v - std::f64::consts::LN_2).abs() < 1e-12);

    let sat = tape.constant(Tensor::from_rows(&[vec![30f64.sqrt()], vec![30f64.sqrt()], vec![-(30f64.sqrt())]]).unwrap());
    assert!(reconstruction_loss(sat, &[(0, 1)], &[(0, 2)]).unwrap().item() < 1e-9);

    let h = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0], vec![-0.3, 0.4], vec![2.0, 0.0]]).unwrap();
    let pos = [(0, 1), (2, 3)];
    let neg = [(0, 3), (1, 2)];
    let dot = |i: usize, j: usize| h.row(i).iter().zip(h.row(j)).map(|(a, b)| a * b).sum::<f64>();
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let expected = -(sig(dot(0, 1)).ln() + sig(dot(2, 3)).ln() + (1.0 - sig(dot(0, 3))).ln() + (1.0 - sig(dot(1, 2))).ln()) / 4.0;
    let got = reconstruction_loss(tape.constant(h.clone()), &pos, &neg).unwrap().item();
    assert!((got - expected).abs() < 1e-12);
    assert!(reconstruction_loss(tape.constant(h), &pos, &[]).is_err());
}

#[test]
fn total_loss_examples() {
    let tape = Tape::new();
    let one = tape.scalar(1.0);
    let parts = LossParts { info: one, recon: one, fairness: one, correlation: one };
    assert_eq!(total_loss(&parts, 2.0, 3.0).unwrap().item(), 9.0);
    assert_eq!(total_loss(&parts, 0.0, 0.0).unwrap().item(), 1.0);
    assert!(total_loss(&parts, -1.0, 0.0).is_err());
    assert!(total_loss(&parts, 0.0, -1.0).is_err());
}

struct Instance {
    edges: EdgeIndex,
    x: Tensor,
    params: Vec<Tensor>,
    proxies: ProxyResult,
    labels: Vec<Option<u8>>,
    pos: Vec<(usize, usize)>,
    neg: Vec<(usize, usize)>,
}

/// 12 nodes, 4 input features, two attention layers of width 6.
fn instance() -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut edges: Vec<(usize, usize)> = (0..12).map(|i| (i, (i + 1) % 12)).collect();
    edges.extend([(0, 6), (2, 9), (3, 7), (4, 10)]);
    let x = random_matrix(&mut rng, 12, 4);
    let labels: Vec<Option<u8>> = (0..12).map(|i| Some((i % 3 == 0) as u8)).collect();
    let demo: Vec<Option<u8>> = (0..12).map(|i| Some((i < 6) as u8)).collect();
    let g = Graph::new(edges.clone(), x.clone(), labels.clone(), demo).unwrap();
    let enc = EncoderParams::init(&mut rng, &[4, 6, 6]).unwrap();
    let head = LinearHead::init(&mut rng, 6);
    let mut params: Vec<Tensor> = enc.tensors().into_iter().cloned().collect();
    params.push(random_matrix(&mut rng, 12, 6));
    params.extend(head.tensors().into_iter().cloned());
    let group: Vec<u8> = (0..12).map(|i| (i < 6) as u8).collect();
    let confidence: Vec<f64> = (0..12).map(|_| rng.random_range(0.5..=1.0)).collect();
    Instance {
        edges: EdgeIndex::new(&g),
        x,
        params,
        proxies: ProxyResult { group, confidence, observed: vec![false; 12] },
        labels,
        pos: vec![(0, 1), (2, 9), (4, 10), (7, 8)],
        neg: vec![(0, 5), (1, 8), (3, 11), (2, 6)],
    }
}

#[derive(Clone, Copy)]
enum Term {
    Info,
    Recon,
    Mmd,
    Cov,
    WeightedMmd,
    WeightedCov,
    Total,
}

fn objective<'t>(inst: &Instance, tape: &'t Tape, v: &[Var<'t>], term: Term) -> Result<Var<'t>> {
    let enc = BoundEncoder {
        layers: vec![
            BoundLayer { xi: v[0], w: v[1], attn: v[2] },
            BoundLayer { xi: v[3], w: v[4], attn: v[5] },
        ],
    };
    let head = BoundHead { w: v[7], b: v[8] };
    let h = enc.forward(&inst.edges, tape.constant(inst.x.clone()))?;
    let masked = apply_mask(h, v[6])?;
    let groups = GroupIndex::from_groups(&inst.proxies.group, 0..12);
    let weights = confidence_weights(&inst.proxies, 0.6)?;
    let labeled: Vec<usize> = (0..8).collect();
    let info = || information_loss(head.probs(masked)?, &inst.labels, &labeled);
    match term {
        Term::Info => info(),
        Term::Recon => reconstruction_loss(masked, &inst.pos, &inst.neg),
        Term::Mmd => mmd_loss(masked, &groups, 0.5),
        Term::Cov => covariance_penalty(masked, &inst.proxies.group),
        Term::WeightedMmd => weighted_mmd(masked, &weights, 0.5),
        Term::WeightedCov => weighted_covariance_penalty(masked, &inst.proxies.group, &weights),
        Term::Total => {
            let parts = LossParts {
                info: info()?,
                recon: reconstruction_loss(masked, &inst.pos, &inst.neg)?,
                fairness: weighted_mmd(masked, &weights, 0.5)?,
                correlation: weighted_covariance_penalty(masked, &inst.proxies.group, &weights)?,
            };
            total_loss(&parts, 1.0, std::f64::consts::E)
        }
    }
}

#[test]
fn every_term_passes_grad_check() {
    let inst = instance();
    for term in [Term::Info, Term::Recon, Term::Mmd, Term::Cov, Term::WeightedMmd, Term::WeightedCov, Term::Total] {
        let err = grad_check(|t, v| objective(&inst, t, v, term), &inst.params, 1e-6).unwrap();
        assert!(err < 1e-5, "relative error {err}");
    }
}

#[test]
fn fairness_gradient_scales_with_b() {
    let inst = instance();
    let grad_at = |b: f64| {
        let tape = Tape::new();
        let v: Vec<Var> = inst.params.iter().map(|p| tape.param(p)).collect();
        let zero = tape.scalar(0.0);
        let f = objective(&inst, &tape, &v, Term::WeightedMmd).unwrap();
        let parts = LossParts { info: zero, recon: zero, fairness: f, correlation: zero };
        tape.backward(total_loss(&parts, 0.0, b).unwrap()).unwrap();
        tape.grad_or_zeros(v[6])
    };
    let (g1, g2) = (grad_at(1.0), grad_at(2.0));
    for (a, b) in g1.data().iter().zip(g2.data()) {
        assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn sampled_pairs_respect_the_graph() {
    let g = synthesize_biased_graph(&SyntheticParams { n: 100, ..Default::default() }).unwrap();
    let groups: Vec<u8> = g.demographics().iter().map(|s| s.unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (pos, neg) = sample_reconstruction_pairs(&g, &groups, 40, 1.5, &mut rng).unwrap();
    assert_eq!(pos.len(), 80);
    assert_eq!(neg.len(), 120);
    assert!(pos.iter().all(|&(i, j)| g.has_edge(i, j)));
    assert!(neg.iter().all(|&(i, j)| i < j && !g.has_edge(i, j)));
    assert!(pos[..40].iter().all(|&(i, j)| groups[i] == 0 || groups[j] == 0));
    assert!(pos[40..].iter().all(|&(i, j)| groups[i] == 1 || groups[j] == 1));
}

#[test]
fn epoch_selection_trades_accuracy_slack_for_parity() {
    let log = |acc: f64, dp: Option<f64>| EpochLog {
        loss: LossBreakdown::default(),
        gamma: 1.0,
        val_accuracy: acc,
        val_dp: dp,
    };
    let history = [
        log(0.5, Some(0.0)),
        log(0.80, Some(0.3)),
        log(0.79, Some(0.1)),
        log(0.75, Some(0.05)),
        log(0.81, None),
    ];
    assert_eq!(select_epoch(&history, 0.02), Some(2));
    assert_eq!(select_epoch(&history, 0.0), Some(4));
    assert_eq!(select_epoch(&[], 0.02), None);
}

#[test]
fn median_gamma_matches_direct_median() {
    let h = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap();
    // Distances 1, 2, 3: median 2.
    assert!((median_gamma(&h, &[0, 1, 2]) - 1.0 / 8.0).abs() < 1e-15);
    assert_eq!(median_gamma(&h, &[0]), 1.0);
}

fn small_run(n: usize, seed: u64) -> (Graph, crate::graph::DataSplit, Tensor, ProxyResult) {
    let g = synthesize_biased_graph(&SyntheticParams { n, seed, ..Default::default() })
        .unwrap()
        .remove_isolated()
        .unwrap();
    let split = make_split(&g, SplitRatios::default(), 0.4, MaskMode::Uniform, seed).unwrap();
    let x = g.standardized_features(&split.train);
    let proxies = ProxyResult::from_observed(g.demographics().iter().map(|s| s.unwrap()).collect());
    (g, split, x, proxies)
}

#[test]
fn training_logs_satisfy_the_objective_identity() {
    let (g, split, x, proxies) = small_run(150, 2);
    let cfg = FairConfig { epochs: 25, seed: 2, ..Default::default() };
    let (model, hist) = train_fairglite(&g, &split, &x, &proxies, &cfg, None).unwrap();
    assert_eq!(hist.history.len(), 25);
    for e in &hist.history {
        let l = e.loss;
        let expect = l.info + cfg.a * l.recon + cfg.b * (l.fairness + l.correlation);
        assert!((l.total - expect).abs() < 1e-9);
    }
    assert!(hist.selected_epoch < 25);
    assert_eq!(model.mask_logits.shape(), &[g.num_nodes(), cfg.hidden]);
    let out = model.forward(&EdgeIndex::new(&g), &x).unwrap();
    assert!(out.probs.all_finite());
}

#[test]
fn training_is_deterministic() {
    let (g, split, x, proxies) = small_run(120, 3);
    let cfg = FairConfig { epochs: 10, seed: 3, ..Default::default() };
    let a = train_fairglite(&g, &split, &x, &proxies, &cfg, None).unwrap();
    let b = train_fairglite(&g, &split, &x, &proxies, &cfg, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn vanilla_keeps_masks_open() {
    let (g, split, x, proxies) = small_run(120, 4);
    let cfg = FairConfig { epochs: 10, seed: 4, ..Default::default() }.with_variant(Variant::Vanilla);
    let (model, hist) = train_fairglite(&g, &split, &x, &proxies, &cfg, None).unwrap();
    assert!(model.mask_logits.data().iter().all(|&m| m == OPEN_MASK_LOGIT));
    assert!(hist.history.iter().all(|e| e.loss.total == e.loss.info));
}

#[test]
fn non_finite_input_reports_divergence() {
    let (g, split, mut x, proxies) = small_run(120, 5);
    x.data_mut()[0] = f64::NAN;
    let cfg = FairConfig { epochs: 5, ..Default::default() };
    let err = train_fairglite(&g, &split, &x, &proxies, &cfg, None).unwrap_err();
    assert!(matches!(err, Error::Divergence { epoch: 0, .. }));
}

#[test]
fn invalid_config_is_rejected() {
    let (g, split, x, proxies) = small_run(120, 6);
    for cfg in [
        FairConfig { a: -1.0, ..Default::default() },
        FairConfig { tau: 0.3, ..Default::default() },
        FairConfig { gamma: GammaMode::Fixed(0.0), ..Default::default() },
    ] {
        assert!(train_fairglite(&g, &split, &x, &proxies, &cfg, None).is_err());
    }
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    assert!("bogus".parse::<Variant>().is_err());
    assert_eq!(FairConfig::default().with_variant(Variant::NoGraph).a, 0.0);
    assert_eq!(FairConfig::default().with_variant(Variant::NoFairness).b, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mmd_is_symmetric_permutation_invariant_and_non_negative(
        data in proptest::collection::vec(-3.0f64..3.0, 24),
        gamma in 0.05f64..3.0,
        rot in 0usize..6,
    ) {
        let x = Tensor::matrix(12, 2, data).unwrap();
        let groups = GroupIndex { deprived: (0..6).collect(), favored: (6..12).collect() };
        let tape = Tape::new();
        let h = tape.constant(x);
        let v = mmd_loss(h, &groups, gamma).unwrap().item();
        prop_assert!(v >= -1e-10);
        let swapped = mmd_loss(h, &groups.swapped(), gamma).unwrap().item();
        prop_assert!((v - swapped).abs() < 1e-12);
        let mut perm = groups.clone();
        perm.deprived.rotate_left(rot);
        let permuted = mmd_loss(h, &perm, gamma).unwrap().item();
        prop_assert!((v - permuted).abs() < 1e-12);
    }

    #[test]
    fn covariance_vanishes_for_group_constant_equal_means(c in -5.0f64..5.0, d in 1usize..5) {
        let tape = Tape::new();
        let h = tape.constant(Tensor::full(vec![8, d], c));
        let s = [0, 1, 0, 1, 1, 0, 0, 1];
        prop_assert!(covariance_penalty(h, &s).unwrap().item().abs() < 1e-20);
    }
}
