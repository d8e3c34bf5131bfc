//! One seed of the pipeline: load, split, identify, train, evaluate.

use std::time::{SystemTime, UNIX_EPOCH};

use fairglite_core::fair::{train_fairglite, FairTraining, Variant};
use fairglite_core::graph::{load_graph, make_split, synthesize_biased_graph, GraphFiles};
use fairglite_core::identify::{infer_proxies, train_identifier, Identifier, IdentifierTraining, ProxyRefresher};
use fairglite_core::metrics::{evaluate, ReportMeta};
use fairglite_core::{DataSplit, FairConfig, FairModel, FairnessReport, Graph, ProxyResult, Tensor};
use serde::Serialize;

use crate::config::{DatasetSource, ExperimentConfig};
use crate::CliResult;

/// Graph for `seed` with isolated nodes removed.
pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> CliResult<Graph> {
    let g = match &cfg.dataset {
        DatasetSource::Synthetic { params, data_seed } => synthesize_biased_graph(&fairglite_core::graph::SyntheticParams {
            seed: data_seed.unwrap_or(seed),
            ..*params
        })?,
        DatasetSource::Files(dir) => load_graph(&GraphFiles::in_dir(dir))?,
    };
    Ok(g.remove_isolated()?)
}

/// Graph, split and standardized features for `seed`.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> CliResult<(Graph, DataSplit, Tensor)> {
    let g = load_dataset(cfg, seed)?;
    let split = make_split(&g, cfg.ratios, cfg.mask_fraction, cfg.mask_mode, seed)?;
    let x = g.standardized_features(&split.train);
    Ok((g, split, x))
}

/// Everything shared by the variants trained for one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seed: u64,
    pub graph: Graph,
    pub split: DataSplit,
    pub x: Tensor,
    pub identifier: Identifier,
    pub identifier_training: IdentifierTraining,
    pub proxies: ProxyResult,
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> CliResult<Prepared> {
    let (graph, split, x) = prepare_data(cfg, seed)?;
    let (identifier, identifier_training) = train_identifier(&graph, &split, &x, &cfg.identifier_for(seed))?;
    let proxies = infer_proxies(&graph, &identifier, &split, &x)?;
    Ok(Prepared { seed, graph, split, x, identifier, identifier_training, proxies })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifierSummary {
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    /// Proxy accuracy on nodes whose demographics were hidden.
    pub hidden_accuracy: Option<f64>,
    pub mean_hidden_confidence: Option<f64>,
}

impl Prepared {
    pub fn identifier_summary(&self) -> IdentifierSummary {
        let hidden: Vec<usize> = (0..self.graph.num_nodes()).filter(|&i| !self.proxies.observed[i]).collect();
        let mean_conf = (!hidden.is_empty())
            .then(|| hidden.iter().map(|&i| self.proxies.confidence[i]).sum::<f64>() / hidden.len() as f64);
        IdentifierSummary {
            epochs_run: self.identifier_training.curve.len(),
            best_epoch: self.identifier_training.best_epoch,
            hidden_accuracy: self.proxies.accuracy(&self.graph, &hidden),
            mean_hidden_confidence: mean_conf,
        }
    }
}

/// Per-seed result file contents.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub variant: String,
    pub a: f64,
    pub b: f64,
    pub tau: f64,
    pub report: FairnessReport,
    pub identifier: IdentifierSummary,
    pub training: FairTraining,
}

pub struct SeedRun {
    pub record: SeedRecord,
    pub model: FairModel,
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Trains and evaluates one configuration on prepared data.
pub fn run_fair(p: &Prepared, fair: &FairConfig, variant: Variant, config_hash: &str) -> CliResult<SeedRun> {
    let started = now_ms();
    let mut refresher = if fair.conf_refresh_every > 0 {
        Some(ProxyRefresher::new(&p.graph, &p.split, &p.x, p.identifier.clone(), fair.tau)?)
    } else {
        None
    };
    let (model, training) = train_fairglite(&p.graph, &p.split, &p.x, &p.proxies, fair, refresher.as_mut())?;
    let mut report = evaluate(&p.graph, &p.split, &p.x, &model)?;
    report.metadata = ReportMeta {
        seed: p.seed,
        config_hash: config_hash.to_string(),
        variant: variant.name().to_string(),
        started_unix_ms: Some(started),
        finished_unix_ms: Some(now_ms()),
    };
    Ok(SeedRun {
        record: SeedRecord {
            seed: p.seed,
            variant: variant.name().to_string(),
            a: fair.a,
            b: fair.b,
            tau: fair.tau,
            report,
            identifier: p.identifier_summary(),
            training,
        },
        model,
    })
}

/// Runs the configured variant for one seed.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, variant: Variant) -> CliResult<SeedRun> {
    let p = prepare(cfg, seed)?;
    run_fair(&p, &cfg.fair_for(seed, variant), variant, &cfg.hash())
}
