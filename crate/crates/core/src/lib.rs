//! Offline toolkit for detecting influence-operation narratives in tweet
//! corpora, classifying participating accounts, and estimating each
//! account's causal impact on narrative propagation.
//!
//! The pipeline stages map onto modules:
//!
//! * [`corpus`]: JSONL ingestion, filtering and per-account sampling.
//! * [`topics`]: tokenization, collapsed-Gibbs LDA and narrative matching.
//! * [`weaklabel`]: behavioral profiles, heuristic labeling functions and
//!   the label model.
//! * [`features`]: behavioral, language and n-gram features plus
//!   extremely-randomized-trees feature selection.
//! * [`forest`]: random forest classifier and the cross-validation harness.
//! * [`network`]: narrative network construction, PageRank, degree-corrected
//!   stochastic blockmodel and GraphML/DOT export.
//! * [`causal`]: exposures, the Poisson GLMM, its MCMC sampler and the
//!   causal estimands.
//! * [`synth`]: synthetic corpora and network outcome fixtures.
//! * [`pipeline`]: configuration, stage orchestration, manifests and reports.

pub mod causal;
pub mod corpus;
pub mod features;
pub mod forest;
pub mod network;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod topics;
pub mod weaklabel;
