//! Training-data selection by acoustic likelihood ratio.
//!
//! Each candidate utterance is scored by how much better a target-domain
//! mixture model explains it than a background model trained on the whole
//! pool; utterances are then picked greedily under a budget, or above a
//! threshold read off the score distribution.
//!
//! * [`corpus`]: manifests and binary feature files
//! * [`gmm`]: diagonal-covariance mixtures and EM
//! * [`scoring`]: per-utterance likelihood ratios
//! * [`selection`]: the objective, greedy and automatic selection
//! * [`synthbench`]: synthetic corpora and selection reports

pub mod corpus;
pub mod gmm;
pub mod numeric;
pub mod scoring;
pub mod selection;
pub mod synthbench;

pub use corpus::{CorpusManifest, FeatureMatrix, UtteranceRecord};
pub use gmm::{DiagonalGmm, EmConfig, FramePool};
pub use scoring::{LrScore, ScoreMode};
pub use selection::{AutoBudgetConfig, Budget, SelectionDocument, SelectionResult};
