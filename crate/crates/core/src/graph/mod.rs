//! Graph data model, file ingestion, splitting and synthetic generation.

mod io;
mod split;
mod synth;

pub use io::{load_graph, write_graph, GraphFiles};
pub use split::{make_split, DataSplit, MaskMode, SplitRatios};
pub use synth::{synthesize_biased_graph, SyntheticParams};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Undirected, unweighted attributed graph with binary task labels and
/// binary, possibly undisclosed, demographic values.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    features: Tensor,
    labels: Vec<Option<u8>>,
    demographics: Vec<Option<u8>>,
    node_ids: Vec<usize>,
}

fn check_binary(what: &str, values: &[Option<u8>]) -> Result<()> {
    match values.iter().position(|v| matches!(v, Some(x) if *x > 1)) {
        Some(i) => Err(Error::Data(format!("{what} of node {i} is not binary"))),
        None => Ok(()),
    }
}

impl Graph {
    /// Builds a graph from an edge list. Edges are symmetrized and
    /// deduplicated; self-loops are dropped.
    pub fn new(
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Tensor,
        labels: Vec<Option<u8>>,
        demographics: Vec<Option<u8>>,
    ) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Data(format!(
                "feature matrix must be 2-D, got shape {:?}",
                features.shape()
            )));
        }
        let n = features.shape()[0];
        if labels.len() != n || demographics.len() != n {
            return Err(Error::Data(format!(
                "{n} feature rows but {} labels and {} demographic entries",
                labels.len(),
                demographics.len()
            )));
        }
        check_binary("label", &labels)?;
        check_binary("demographic value", &demographics)?;
        let mut list = Vec::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Data(format!(
                    "edge ({i}, {j}) references a node outside 0..{n}"
                )));
            }
            if i != j {
                list.push((i.min(j), i.max(j)));
            }
        }
        list.sort_unstable();
        list.dedup();

        let mut degree = vec![0usize; n];
        for &(i, j) in &list {
            degree[i] += 1;
            degree[j] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut fill = offsets.clone();
        let mut neighbors = vec![0usize; offsets[n]];
        for &(i, j) in &list {
            neighbors[fill[i]] = j;
            fill[i] += 1;
            neighbors[fill[j]] = i;
            fill[j] += 1;
        }
        for i in 0..n {
            neighbors[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        Ok(Graph {
            edges: list,
            offsets,
            neighbors,
            features,
            labels,
            demographics,
            node_ids: (0..n).collect(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[1]
    }

    /// Unique undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted neighbor list of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// CSR row offsets; `neighbor_array()[offsets[u]..offsets[u + 1]]` is N(u).
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn neighbor_array(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[Option<u8>] {
        &self.labels
    }

    pub fn demographics(&self) -> &[Option<u8>] {
        &self.demographics
    }

    /// Identifier of each node in the graph it was derived from.
    pub fn node_ids(&self) -> &[usize] {
        &self.node_ids
    }

    /// Drops degree-0 nodes and re-indexes the rest contiguously, keeping
    /// relative order.
    pub fn remove_isolated(&self) -> Result<Graph> {
        let keep: Vec<usize> = (0..self.num_nodes()).filter(|&i| self.degree(i) > 0).collect();
        if keep.is_empty() {
            return Err(Error::Data("graph has no edges; every node is isolated".into()));
        }
        if keep.len() == self.num_nodes() {
            return Ok(self.clone());
        }
        let mut remap = vec![usize::MAX; self.num_nodes()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let d = self.feature_dim();
        let mut feats = Vec::with_capacity(keep.len() * d);
        for &i in &keep {
            feats.extend_from_slice(self.features.row(i));
        }
        let features = Tensor::matrix(keep.len(), d, feats)?;
        let mut g = Graph::new(
            self.edges.iter().map(|&(i, j)| (remap[i], remap[j])),
            features,
            keep.iter().map(|&i| self.labels[i]).collect(),
            keep.iter().map(|&i| self.demographics[i]).collect(),
        )?;
        g.node_ids = keep.iter().map(|&i| self.node_ids[i]).collect();
        Ok(g)
    }

    /// Same graph with a different set of disclosed demographics.
    pub fn with_demographics(&self, demographics: Vec<Option<u8>>) -> Result<Graph> {
        if demographics.len() != self.num_nodes() {
            return Err(Error::Data("demographic vector length differs from node count".into()));
        }
        check_binary("demographic value", &demographics)?;
        let mut g = self.clone();
        g.demographics = demographics;
        Ok(g)
    }

    /// Applies a node permutation: node `i` of the result is node `perm[i]`
    /// of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("not a permutation of the node set"));
        }
        let mut inverse = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let d = self.feature_dim();
        let mut feats = Vec::with_capacity(n * d);
        for &old in perm {
            feats.extend_from_slice(self.features.row(old));
        }
        let mut g = Graph::new(
            self.edges.iter().map(|&(i, j)| (inverse[i], inverse[j])),
            Tensor::matrix(n, d, feats)?,
            perm.iter().map(|&i| self.labels[i]).collect(),
            perm.iter().map(|&i| self.demographics[i]).collect(),
        )?;
        g.node_ids = perm.iter().map(|&i| self.node_ids[i]).collect();
        Ok(g)
    }

    /// Features standardized to zero mean and unit variance per column,
    /// with statistics taken over `fit_nodes` only.
    pub fn standardized_features(&self, fit_nodes: &[usize]) -> Tensor {
        let d = self.feature_dim();
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        let count = fit_nodes.len().max(1) as f64;
        for &i in fit_nodes {
            for (m, x) in mean.iter_mut().zip(self.features.row(i)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for &i in fit_nodes {
            for ((v, x), m) in var.iter_mut().zip(self.features.row(i)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std: Vec<f64> = var
            .iter()
            .map(|v| {
                let s = (v / count).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let mut out = self.features.data().to_vec();
        for row in out.chunks_mut(d) {
            for c in 0..d {
                row[c] = (row[c] - mean[c]) / std[c];
            }
        }
        Tensor::from_parts(self.features.shape().to_vec(), out)
    }
}

/// Node sets of the deprived (`s = 0`) and favored (`s = 1`) groups.
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct GroupIndex {
    pub deprived: Vec<usize>,
    pub favored: Vec<usize>,
}

impl GroupIndex {
    /// Groups every node of `nodes` whose value is known.
    pub fn from_values(values: &[Option<u8>], nodes: impl IntoIterator<Item = usize>) -> Self {
        let mut g = GroupIndex::default();
        for i in nodes {
            match values[i] {
                Some(0) => g.deprived.push(i),
                Some(_) => g.favored.push(i),
                None => {}
            }
        }
        g.deprived.sort_unstable();
        g.favored.sort_unstable();
        g
    }

    /// Groups nodes by fully known binary values.
    pub fn from_groups(groups: &[u8], nodes: impl IntoIterator<Item = usize>) -> Self {
        let mut g = GroupIndex::default();
        for i in nodes {
            if groups[i] == 0 {
                g.deprived.push(i);
            } else {
                g.favored.push(i);
            }
        }
        g.deprived.sort_unstable();
        g.favored.sort_unstable();
        g
    }

    pub fn n_deprived(&self) -> usize {
        self.deprived.len()
    }

    pub fn n_favored(&self) -> usize {
        self.favored.len()
    }

    /// Errors unless both groups are nonempty.
    pub fn require_both(&self, context: &str) -> Result<()> {
        if self.deprived.is_empty() {
            return Err(Error::EmptyGroup(format!("{context}: deprived group is empty")));
        }
        if self.favored.is_empty() {
            return Err(Error::EmptyGroup(format!("{context}: favored group is empty")));
        }
        Ok(())
    }

    pub fn swapped(&self) -> Self {
        GroupIndex {
            deprived: self.favored.clone(),
            favored: self.deprived.clone(),
        }
    }
}
