use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::Graph;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Paths of the four files describing one graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphFiles {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub demographics: PathBuf,
}

impl GraphFiles {
    /// Conventional file names inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        GraphFiles {
            edges: dir.join("edges.tsv"),
            features: dir.join("features.csv"),
            labels: dir.join("labels.csv"),
            demographics: dir.join("demographics.csv"),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_edges(path: &Path, text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(path, no + 1, "expected two node ids separated by a tab"));
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(path, no + 1, format!("invalid node id '{s}'")))
        };
        edges.push((parse(a)?, parse(b)?));
    }
    Ok(edges)
}

fn parse_features(path: &Path, text: &str) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, no + 1, format!("invalid number '{field}'")))?;
            if !v.is_finite() {
                return Err(parse_err(path, no + 1, "non-finite feature value"));
            }
            data.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(parse_err(
                    path,
                    no + 1,
                    format!("expected {c} feature columns, found {count}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Data(format!("{}: no feature rows", path.display())))?;
    Tensor::matrix(rows, cols, data)
}

/// Parses "node_id,value" lines; `?` (when allowed) marks a missing value.
/// A first line whose id is not numeric is treated as a header.
fn parse_assignments(path: &Path, text: &str, n: usize, allow_missing: bool) -> Result<Vec<Option<u8>>> {
    let mut out = vec![None; n];
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((id, value)) = line.split_once(',') else {
            return Err(parse_err(path, no + 1, "expected 'node_id,value'"));
        };
        let id = match id.trim().parse::<usize>() {
            Ok(id) => id,
            Err(_) if no == 0 => continue,
            Err(_) => return Err(parse_err(path, no + 1, format!("invalid node id '{id}'"))),
        };
        if id >= n {
            return Err(parse_err(path, no + 1, format!("node id {id} exceeds node count {n}")));
        }
        out[id] = match value.trim() {
            "0" => Some(0),
            "1" => Some(1),
            "?" if allow_missing => None,
            other => return Err(parse_err(path, no + 1, format!("invalid value '{other}'"))),
        };
    }
    Ok(out)
}

/// Reads a graph from an edge list, a feature CSV, a label CSV and a
/// demographic CSV.
///
/// Row `i` of the feature file defines node `i`. Nodes absent from the label
/// or demographic file get `None`.
pub fn load_graph(files: &GraphFiles) -> Result<Graph> {
    let features = parse_features(&files.features, &read(&files.features)?)?;
    let n = features.shape()[0];
    let edges = parse_edges(&files.edges, &read(&files.edges)?)?;
    if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| i >= n || j >= n) {
        return Err(Error::Data(format!(
            "{}: dangling node id in edge ({i}, {j}); only {n} feature rows",
            files.edges.display()
        )));
    }
    let labels = parse_assignments(&files.labels, &read(&files.labels)?, n, false)?;
    let demographics = parse_assignments(&files.demographics, &read(&files.demographics)?, n, true)?;
    Graph::new(edges, features, labels, demographics)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `g` in the format read by [`load_graph`]. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_graph(g: &Graph, files: &GraphFiles) -> Result<()> {
    let mut edges = String::new();
    for &(i, j) in g.edges() {
        writeln!(edges, "{i}\t{j}").unwrap();
    }
    let mut feats = String::new();
    for i in 0..g.num_nodes() {
        let row: Vec<String> = g.features().row(i).iter().map(|v| format!("{v:?}")).collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    let mut labels = String::from("node_id,label\n");
    for (i, y) in g.labels().iter().enumerate() {
        if let Some(y) = y {
            writeln!(labels, "{i},{y}").unwrap();
        }
    }
    let mut demo = String::from("node_id,s\n");
    for (i, s) in g.demographics().iter().enumerate() {
        match s {
            Some(s) => writeln!(demo, "{i},{s}").unwrap(),
            None => writeln!(demo, "{i},?").unwrap(),
        }
    }
    write(&files.edges, &edges)?;
    write(&files.features, &feats)?;
    write(&files.labels, &labels)?;
    write(&files.demographics, &demo)
}
