use serde::{Deserialize, Serialize};

use super::{
    bias_gap, classification_metrics, delta_dp, delta_eo, dp_bound_rhs, estimate_lipschitz, layer_bound_diagnostics,
    soft_delta_dp, LayerBound,
};
use crate::autodiff::Tensor;
use crate::encoder::EdgeIndex;
use crate::error::{Error, Result};
use crate::fair::FairModel;
use crate::graph::{DataSplit, Graph, GroupIndex};

/// Bookkeeping attached by the experiment driver.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    pub config_hash: String,
    pub variant: String,
    pub started_unix_ms: Option<u128>,
    pub finished_unix_ms: Option<u128>,
}

/// Test-split evaluation of a trained model, scored against true
/// demographics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub accuracy: f64,
    pub f1: f64,
    /// Hard-label parity gap.
    pub delta_dp: f64,
    /// `None` when a group has no positive test node.
    pub delta_eo: Option<f64>,
    /// Parity gap of mean class-1 probabilities; the bounded quantity.
    pub soft_delta_dp: f64,
    /// Group-mean distance after each encoder layer.
    pub bias_gap: Vec<f64>,
    pub bias_gap_masked: f64,
    pub bound_rhs: f64,
    /// `soft_delta_dp <= bound_rhs + 1e-9`.
    pub bound_holds: bool,
    /// `soft_delta_dp / bound_rhs`, when the bound is positive.
    pub tightness: Option<f64>,
    pub lipschitz_estimate: f64,
    pub layers: Vec<LayerBound>,
    pub test_nodes: usize,
    pub metadata: ReportMeta,
}

pub const BOUND_TOL: f64 = 1e-9;

/// Scores `model` on the test split of `split`.
pub fn evaluate(g: &Graph, split: &DataSplit, x: &Tensor, model: &FairModel) -> Result<FairnessReport> {
    if model.num_nodes() != g.num_nodes() {
        return Err(Error::Shape {
            op: "evaluate",
            left: vec![model.num_nodes()],
            right: vec![g.num_nodes()],
        });
    }
    let out = model.forward(&EdgeIndex::new(g), x)?;
    let pred = out.predictions();
    let prob1 = out.prob_class1();
    let scored: Vec<usize> = split
        .test
        .iter()
        .copied()
        .filter(|&i| g.labels()[i].is_some() && g.demographics()[i].is_some())
        .collect();
    let truth: Vec<u8> = g.labels().iter().map(|y| y.unwrap_or(0)).collect();
    let groups = GroupIndex::from_values(g.demographics(), scored.iter().copied());
    let (accuracy, f1) = classification_metrics(&pred, &truth, &scored)?;
    let delta_dp = delta_dp(&pred, &groups)?;
    let delta_eo = match delta_eo(&pred, &truth, &groups) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    let soft = soft_delta_dp(&prob1, &groups)?;
    let lipschitz = estimate_lipschitz(&model.head);
    let bound_rhs = dp_bound_rhs(&out.masked, &groups, &model.head, lipschitz)?;
    let weights: Vec<&Tensor> = model.encoder.layers.iter().map(|l| &l.w).collect();
    let layers = layer_bound_diagnostics(&out.layers, &weights, &groups, model.gamma)?;
    Ok(FairnessReport {
        accuracy,
        f1,
        delta_dp,
        delta_eo,
        soft_delta_dp: soft,
        bias_gap: out.layers[1..].iter().map(|h| bias_gap(h, &groups)).collect::<Result<_>>()?,
        bias_gap_masked: bias_gap(&out.masked, &groups)?,
        bound_rhs,
        bound_holds: soft <= bound_rhs + BOUND_TOL,
        tightness: (bound_rhs > 0.0).then(|| soft / bound_rhs),
        lipschitz_estimate: lipschitz,
        layers,
        test_nodes: scored.len(),
        metadata: ReportMeta::default(),
    })
}
