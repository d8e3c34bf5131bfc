use rand::seq::SliceRandom;

use super::Graph;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Fractions of nodes assigned to train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.5,
            val: 0.2,
            test: 0.3,
        }
    }
}

/// How the hidden-demographic subset of train ∪ val is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum MaskMode {
    /// Uniformly over train ∪ val.
    #[default]
    Uniform,
    /// The same fraction within each demographic group.
    Stratified,
}

/// Node partition plus the set of train/val nodes whose demographics are
/// withheld from learning. All sets are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub demographic_mask: Vec<usize>,
}

impl DataSplit {
    /// Per-node flag: demographic value is available to the learner.
    ///
    /// A node is disclosed when its value is present in the graph, it is not
    /// in the demographic mask, and it is not a test node (test
    /// demographics are reserved for evaluation).
    pub fn disclosed(&self, g: &Graph) -> Vec<bool> {
        let mut out: Vec<bool> = g.demographics().iter().map(Option::is_some).collect();
        for &i in self.demographic_mask.iter().chain(&self.test) {
            out[i] = false;
        }
        out
    }

    /// Demographic values visible to the learner, `None` elsewhere.
    pub fn visible_demographics(&self, g: &Graph) -> Vec<Option<u8>> {
        let disclosed = self.disclosed(g);
        g.demographics()
            .iter()
            .zip(disclosed)
            .map(|(&s, d)| if d { s } else { None })
            .collect()
    }

    /// Train nodes that carry a task label.
    pub fn labeled_train(&self, g: &Graph) -> Vec<usize> {
        self.train.iter().copied().filter(|&i| g.labels()[i].is_some()).collect()
    }
}

/// Random train/val/test partition with demographic masking, deterministic
/// in `seed`.
pub fn make_split(
    g: &Graph,
    ratios: SplitRatios,
    mask_fraction: f64,
    mode: MaskMode,
    seed: u64,
) -> Result<DataSplit> {
    let SplitRatios { train, val, test } = ratios;
    if [train, val, test].iter().any(|r| !(0.0..=1.0).contains(r)) || (train + val + test - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios must be non-negative and sum to 1, got ({train}, {val}, {test})"
        )));
    }
    if !(0.0..1.0).contains(&mask_fraction) {
        return Err(Error::invalid(format!("mask_fraction must lie in [0, 1), got {mask_fraction}")));
    }
    let n = g.num_nodes();
    let n_train = (train * n as f64).round() as usize;
    let n_val = (val * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Data(format!(
            "{n} nodes are too few to give every split at least one node"
        )));
    }
    let mut rng = rng::stream(seed, Stream::Split);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut train_set = order[..n_train].to_vec();
    let mut val_set = order[n_train..n_train + n_val].to_vec();
    let mut test_set = order[n_train + n_val..].to_vec();
    train_set.sort_unstable();
    val_set.sort_unstable();
    test_set.sort_unstable();

    let mut pool: Vec<usize> = train_set.iter().chain(&val_set).copied().collect();
    pool.sort_unstable();
    let mut mask = match mode {
        MaskMode::Uniform => {
            let k = (mask_fraction * pool.len() as f64).round() as usize;
            pool.shuffle(&mut rng);
            pool.truncate(k);
            pool
        }
        MaskMode::Stratified => {
            let mut picked = Vec::new();
            for group in [Some(0u8), Some(1u8), None] {
                let mut members: Vec<usize> =
                    pool.iter().copied().filter(|&i| g.demographics()[i] == group).collect();
                let k = (mask_fraction * members.len() as f64).round() as usize;
                members.shuffle(&mut rng);
                picked.extend_from_slice(&members[..k]);
            }
            picked
        }
    };
    mask.sort_unstable();
    Ok(DataSplit {
        train: train_set,
        val: val_set,
        test: test_set,
        demographic_mask: mask,
    })
}
