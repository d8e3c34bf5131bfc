//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown or repeated keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fairglite_core::fair::{GammaMode, Variant, Weighting};
use fairglite_core::graph::{MaskMode, SplitRatios, SyntheticParams};
use fairglite_core::{FairConfig, IdentifierConfig};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DatasetSource {
    /// Generated per seed unless `data_seed` pins one graph.
    Synthetic {
        params: SyntheticParams,
        data_seed: Option<u64>,
    },
    /// Directory holding `edges.tsv`, `features.csv`, `labels.csv` and
    /// `demographics.csv`.
    Files(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub ratios: SplitRatios,
    pub mask_fraction: f64,
    pub mask_mode: MaskMode,
    pub identifier: IdentifierConfig,
    pub fair: FairConfig,
    /// Variant trained by `train`.
    pub ablation: Variant,
    /// Variants compared by `ablate`.
    pub variants: Vec<Variant>,
    pub sweep_a: Vec<f64>,
    pub sweep_b: Vec<f64>,
    #[serde(skip)]
    pub seeds: Vec<u64>,
    #[serde(skip)]
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses the available parallelism.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Synthetic {
                params: SyntheticParams::default(),
                data_seed: None,
            },
            ratios: SplitRatios::default(),
            mask_fraction: 0.4,
            mask_mode: MaskMode::Uniform,
            identifier: IdentifierConfig::default(),
            fair: FairConfig::default(),
            ablation: Variant::Full,
            variants: vec![
                Variant::Full,
                Variant::NoFairness,
                Variant::NoGraph,
                Variant::NoAdaptive,
                Variant::Vanilla,
            ],
            sweep_a: vec![1.0],
            sweep_b: [0.0, 1.0, std::f64::consts::E, 2f64.exp()].to_vec(),
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            workers: 0,
        }
    }
}

fn err(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("line {line}: {msg}"))
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| err(line, format!("{key}: cannot parse {v:?}")))
}

/// Accepts plain floats, `e` and `e^k` for powers of Euler's number.
fn real(line: usize, key: &str, v: &str) -> Result<f64, CliError> {
    let x = match v.strip_prefix("e^") {
        Some(k) => num::<f64>(line, key, k)?.exp(),
        None if v == "e" => std::f64::consts::E,
        None => num::<f64>(line, key, v)?,
    };
    if x.is_finite() {
        Ok(x)
    } else {
        Err(err(line, format!("{key}: value must be finite")))
    }
}

fn list<T>(v: &str, mut f: impl FnMut(&str) -> Result<T, CliError>) -> Result<Vec<T>, CliError> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(&mut f).collect()
}

/// `0..10`, `3`, or a comma list.
fn seeds(line: usize, v: &str) -> Result<Vec<u64>, CliError> {
    if let Some((lo, hi)) = v.split_once("..") {
        let (lo, hi): (u64, u64) = (num(line, "seeds", lo.trim())?, num(line, "seeds", hi.trim())?);
        return Ok((lo..hi).collect());
    }
    list(v, |s| num(line, "seeds", s))
}

fn boolean(line: usize, key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(err(line, format!("{key}: expected a boolean, got {v:?}"))),
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses `text`; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut seen = BTreeMap::new();
        let mut cfg = ExperimentConfig::default();
        let mut synth = SyntheticParams::default();
        let mut data_seed = None;
        let mut dataset_kind = "synthetic".to_string();
        let mut data_dir = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(line, "expected key = value"))?;
            let (key, v) = (key.trim(), value.trim());
            if let Some(prev) = seen.insert(key.to_string(), line) {
                return Err(err(line, format!("{key} already set on line {prev}")));
            }
            let id = &mut cfg.identifier;
            let fc = &mut cfg.fair;
            match key {
                "dataset" => dataset_kind = v.to_string(),
                "data_dir" => data_dir = Some(base.join(v)),
                "data_seed" => data_seed = Some(num(line, key, v)?),
                "n" => synth.n = num(line, key, v)?,
                "homophily" => synth.homophily = real(line, key, v)?,
                "feature_dim" => synth.feature_dim = num(line, key, v)?,
                "feature_shift" => synth.feature_shift = real(line, key, v)?,
                "label_bias" => synth.label_bias = real(line, key, v)?,
                "avg_degree" => synth.avg_degree = real(line, key, v)?,
                "train_ratio" => cfg.ratios.train = real(line, key, v)?,
                "val_ratio" => cfg.ratios.val = real(line, key, v)?,
                "test_ratio" => cfg.ratios.test = real(line, key, v)?,
                "mask_fraction" => cfg.mask_fraction = real(line, key, v)?,
                "mask_mode" => {
                    cfg.mask_mode = match v {
                        "uniform" => MaskMode::Uniform,
                        "stratified" => MaskMode::Stratified,
                        _ => return Err(err(line, format!("mask_mode: unknown value {v:?}"))),
                    }
                }
                "id_layers" => id.layers = num(line, key, v)?,
                "id_hidden" => id.hidden = num(line, key, v)?,
                "id_lr" => id.adam.lr = real(line, key, v)?,
                "id_epochs" => id.epochs = num(line, key, v)?,
                "id_patience" => id.patience = num(line, key, v)?,
                "a" => fc.a = real(line, key, v)?,
                "b" => fc.b = real(line, key, v)?,
                "fair_layers" => fc.layers = num(line, key, v)?,
                "fair_hidden" => fc.hidden = num(line, key, v)?,
                "lr" => fc.adam.lr = real(line, key, v)?,
                "epochs" => fc.epochs = num(line, key, v)?,
                "kernel" if v == "rbf" => {}
                "kernel" => return Err(err(line, format!("kernel: only \"rbf\" is supported, got {v:?}"))),
                "gamma" if v == "median" => fc.gamma = GammaMode::Median,
                "gamma" => fc.gamma = GammaMode::Fixed(real(line, key, v)?),
                "gamma_refresh" => fc.gamma_refresh = num(line, key, v)?,
                "neg_ratio" => fc.neg_ratio = real(line, key, v)?,
                "pos_per_group" => fc.pos_per_group = num(line, key, v)?,
                "tau" => fc.tau = real(line, key, v)?,
                "conf_refresh_every" => fc.conf_refresh_every = num(line, key, v)?,
                "weighting" => {
                    fc.weighting = match v {
                        "adaptive" => Weighting::Adaptive,
                        "uniform" => Weighting::Uniform,
                        _ => return Err(err(line, format!("weighting: unknown value {v:?}"))),
                    }
                }
                "train_mask" => fc.train_mask = boolean(line, key, v)?,
                "mask_init" => fc.mask_init = real(line, key, v)?,
                "mmd_max_nodes" => fc.mmd_max_nodes = num(line, key, v)?,
                "select_tolerance" => fc.select_tolerance = real(line, key, v)?,
                "seeds" => cfg.seeds = seeds(line, v)?,
                "output_dir" => cfg.output_dir = base.join(v),
                "ablation" => cfg.ablation = v.parse().map_err(|e| err(line, e))?,
                "variants" => cfg.variants = list(v, |s| s.parse().map_err(|e| err(line, e)))?,
                "sweep_a" => cfg.sweep_a = list(v, |s| real(line, key, s))?,
                "sweep_b" => cfg.sweep_b = list(v, |s| real(line, key, s))?,
                "workers" => cfg.workers = num(line, key, v)?,
                _ => return Err(err(line, format!("unknown key {key:?}"))),
            }
        }
        cfg.dataset = match dataset_kind.as_str() {
            "synthetic" => DatasetSource::Synthetic { params: synth, data_seed },
            "files" => DatasetSource::Files(
                data_dir.ok_or_else(|| CliError::Config("dataset = files needs data_dir".into()))?,
            ),
            other => return Err(CliError::Config(format!("unknown dataset {other:?}"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return bad(format!("mask_fraction must lie in [0, 1), got {}", self.mask_fraction));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.variants.is_empty() {
            return bad("variants must not be empty".into());
        }
        if self.sweep_a.iter().chain(&self.sweep_b).any(|&x| x < 0.0) {
            return bad("sweep values must be non-negative".into());
        }
        if self.identifier.layers == 0 || self.identifier.hidden == 0 {
            return bad("identifier needs at least one layer of positive width".into());
        }
        self.fair.validate().map_err(|e| CliError::Config(e.to_string()))
    }

    /// Content hash of every setting that affects results; seeds, output
    /// location and worker count are excluded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }

    /// Fair-training settings for `seed` and `variant`.
    pub fn fair_for(&self, seed: u64, variant: Variant) -> FairConfig {
        FairConfig { seed, ..self.fair }.with_variant(variant)
    }

    pub fn identifier_for(&self, seed: u64) -> IdentifierConfig {
        IdentifierConfig { seed, ..self.identifier }
    }
}
