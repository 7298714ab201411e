//! Differentiable rule learning over knowledge graphs, with logical entity
//! representations (LERP) as constraints on the entities a rule visits.
//!
//! The crate is organized bottom up: dense and sparse tensors, the graph, a
//! small reverse-mode tape, the LERP grid, rules, training and evaluation.
//! [`oracle`] holds slow reference implementations used by the tests.

pub mod autodiff;
pub mod checks;
pub mod error;
pub mod eval;
pub mod formula;
pub mod interpret;
pub mod kg;
pub mod lerp;
pub mod model;
pub mod oracle;
pub mod param;
pub mod rules;
pub mod sparse;
pub mod tensor;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
pub use eval::{evaluate, EvalReport, Split};
pub use kg::{EdgeMask, KnowledgeGraph, Triplet};
pub use lerp::{ClampVariant, LerpMatrix, LerpParams, Operator};
pub use model::{Model, TrainConfig};
pub use param::{AdamConfig, ParamId, ParamStore};
pub use rules::{Query, RuleSet};
pub use sparse::SparseMatrix;
pub use tensor::Tensor;
pub use trainer::{fit, fit_observed, fit_with, EpochStats, TrainObserver};
