//! Fairness-aware node representation learning for graphs whose demographic
//! attributes are only partially disclosed.
//!
//! The pipeline has three stages:
//!
//! 1. [`identify`] trains an attention-based graph encoder on the disclosed
//!    demographics and produces a proxy group plus a confidence score for
//!    every node.
//! 2. [`fair`] learns per-node feature masks on top of a second encoder so
//!    that masked representations stay predictive and structure-preserving
//!    while their distribution matches across (proxy) groups. The
//!    [`confidence`] module weights that fairness pressure by proxy
//!    reliability.
//! 3. [`metrics`] scores the result: accuracy, F1, demographic parity,
//!    equal opportunity and the representation-level parity bound.

pub mod autodiff;
pub mod confidence;
pub mod encoder;
pub mod error;
pub mod fair;
pub mod graph;
pub mod identify;
pub mod metrics;
pub mod optim;
pub mod rng;

pub use autodiff::{grad_check, Tape, Tensor, Var};
pub use confidence::ConfidenceWeights;
pub use encoder::{EncoderParams, LayerParams, LinearHead};
pub use error::{Error, Result};
pub use fair::{FairConfig, FairModel, LossBreakdown};
pub use graph::{DataSplit, Graph, GroupIndex};
pub use identify::{IdentifierConfig, ProxyResult};
pub use metrics::FairnessReport;
