//! Interpretable continual learning on tabular data streams.
//!
//! The model couples a *frozen* shallow decision tree, whose leaves act as a
//! fixed rule-based concept vocabulary, with a trainable concept-bottleneck
//! predictor (a concept extractor plus a label head) that is updated
//! sequentially over distribution-shifted data slices using a bounded replay
//! buffer. Because the tree never changes after initialization, every concept
//! id keeps the same human-readable path rule across all updates.
//!
//! The crate also ships the full benchmark harness around that model:
//! slice construction, per-slice-retrained tree and raw-feature MLP baselines,
//! stability/plasticity metrics, concept-consistency audits, ablations, and
//! deterministic run reports.
//!
//! With the default `parallel` feature, independent seeds and large row-wise
//! kernels run on rayon; every parallel path is a pure map over disjoint
//! outputs, so results are bit-identical to the sequential fallback.

pub mod baselines;
pub mod fixtures;
pub mod mat;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod protocol;
pub mod replay;
pub mod report;
pub mod seed;
pub mod tabular;
pub mod toc;
pub mod tree;

pub use mat::Mat;
pub use metrics::{ConceptAudit, MetricMatrix, MetricTag};
pub use replay::ReplayBuffer;
pub use tabular::{Preprocessor, RawTable, Slice};
pub use toc::TocModel;
pub use tree::FrozenTree;
