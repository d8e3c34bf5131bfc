//! Result files and the binary model format.
//!
//! A model file is the magic `FGLMODEL`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header, then every
//! parameter as little-endian `f64` in header order.

use std::fs;
use std::path::{Path, PathBuf};

use fairglite_core::encoder::{EncoderParams, LayerParams, LinearHead};
use fairglite_core::{FairConfig, FairModel, Tensor};
use serde::{Deserialize, Serialize};

use crate::pipeline::SeedRecord;
use crate::stats::mean_std;
use crate::{CliError, CliResult};

const MAGIC: &[u8; 8] = b"FGLMODEL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    config_hash: String,
    variant: String,
    gamma: f64,
    config: FairConfig,
    layers: usize,
    tensors: Vec<TensorEntry>,
}

fn write_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Write { path: path.to_path_buf(), source }
}

fn data_err(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Core(fairglite_core::Error::Data(format!("{}: {msg}", path.display())))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| write_err(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| write_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("result serializes");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn named_tensors(model: &FairModel) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    for (l, layer) in model.encoder.layers.iter().enumerate() {
        out.push((format!("layer{l}.xi"), &layer.xi));
        out.push((format!("layer{l}.w"), &layer.w));
        out.push((format!("layer{l}.attn"), &layer.attn));
    }
    out.push(("mask_logits".into(), &model.mask_logits));
    out.push(("head.w".into(), &model.head.w));
    out.push(("head.b".into(), &model.head.b));
    out
}

/// Provenance stored next to the parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelInfo {
    pub config_hash: String,
    pub variant: String,
}

pub fn save_model(path: &Path, model: &FairModel, info: &ModelInfo) -> CliResult<()> {
    let tensors = named_tensors(model);
    let header = ModelHeader {
        format_version: FORMAT_VERSION,
        config_hash: info.config_hash.clone(),
        variant: info.variant.clone(),
        gamma: model.gamma,
        config: model.config,
        layers: model.encoder.layers.len(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry { name: name.clone(), shape: t.shape().to_vec() })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_bytes(path, &bytes)
}

pub fn load_model(path: &Path) -> CliResult<(FairModel, ModelInfo)> {
    let bytes = fs::read(path).map_err(|e| CliError::Core(fairglite_core::Error::Io { path: path.display().to_string(), source: e }))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(data_err(path, "not a model file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(data_err(path, format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body_start = 20usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| data_err(path, "truncated header"))?;
    let header: ModelHeader =
        serde_json::from_slice(&bytes[20..body_start]).map_err(|e| data_err(path, format!("bad header: {e}")))?;
    let mut body = bytes[body_start..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if bytes.len() - body_start != 8 * expected {
        return Err(data_err(path, "parameter payload does not match header"));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let count = entry.shape.iter().product();
        let data: Vec<f64> = body.by_ref().take(count).collect();
        tensors.push(Tensor::new(entry.shape.clone(), data)?);
    }
    if tensors.len() != 3 * header.layers + 3 {
        return Err(data_err(path, "tensor count does not match layer count"));
    }
    let mut it = tensors.into_iter();
    let mut layers = Vec::with_capacity(header.layers);
    for _ in 0..header.layers {
        let (xi, w, attn) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
        layers.push(LayerParams { xi, w, attn });
    }
    let mask_logits = it.next().unwrap();
    let head = LinearHead { w: it.next().unwrap(), b: it.next().unwrap() };
    let model = FairModel {
        encoder: EncoderParams { layers },
        mask_logits,
        head,
        gamma: header.gamma,
        config: header.config,
    };
    Ok((model, ModelInfo { config_hash: header.config_hash, variant: header.variant }))
}

pub const SUMMARY_COLUMNS: [&str; 10] = ["seed", "a", "b", "tau", "acc", "f1", "dp", "eo", "bound_rhs", "bound_holds"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-record rows followed by `mean` and `std` rows, optionally prefixed
/// by a `variant` column.
pub fn summary_rows(records: &[&SeedRecord], with_variant: bool) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    let prefix = |r: &SeedRecord| if with_variant { vec![r.variant.clone()] } else { vec![] };
    for r in records {
        let rep = &r.report;
        let mut row = prefix(r);
        row.extend([
            r.seed.to_string(),
            r.a.to_string(),
            r.b.to_string(),
            r.tau.to_string(),
            rep.accuracy.to_string(),
            rep.f1.to_string(),
            rep.delta_dp.to_string(),
            opt(rep.delta_eo),
            rep.bound_rhs.to_string(),
            rep.bound_holds.to_string(),
        ]);
        rows.push(row);
    }
    if let Some(first) = records.first() {
        let col = |f: &dyn Fn(&SeedRecord) -> Option<f64>| -> Vec<f64> { records.iter().filter_map(|r| f(r)).collect() };
        let cols: Vec<Vec<f64>> = vec![
            col(&|r| Some(r.report.accuracy)),
            col(&|r| Some(r.report.f1)),
            col(&|r| Some(r.report.delta_dp)),
            col(&|r| r.report.delta_eo),
            col(&|r| Some(r.report.bound_rhs)),
            col(&|r| Some(if r.report.bound_holds { 1.0 } else { 0.0 })),
        ];
        for (label, pick) in [("mean", 0usize), ("std", 1usize)] {
            let mut row = prefix(first);
            row.extend([label.to_string(), first.a.to_string(), first.b.to_string(), first.tau.to_string()]);
            for c in &cols {
                let (m, s) = mean_std(c);
                row.push(if c.is_empty() { String::new() } else { [m, s][pick].to_string() });
            }
            rows.push(row);
        }
    }
    rows
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| write_err(path, std::io::Error::other(e));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| write_err(path, std::io::Error::other(e.to_string())))?;
    write_bytes(path, &bytes)
}

pub fn run_dir(root: &Path, hash: &str) -> PathBuf {
    root.join(hash)
}
