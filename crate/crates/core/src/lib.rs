//! Low-resource named-entity recognition by self-training.
//!
//! The pipeline has two stages. An embedding table is first adapted to the
//! target domain with a masked-token objective ([`mlm`]). A linear-chain CRF
//! tagger ([`crf`]) is then trained on a small labeled seed set and
//! iteratively retrained on unlabeled in-domain text that it has tagged
//! itself, keeping only confident tags ([`bootstrap`]).
//!
//! Supporting modules cover corpora and CoNLL IO ([`corpus`]), the BIO tag
//! scheme ([`tagscheme`]), emission scorers ([`emissions`]), span-level
//! micro F1 ([`metrics`]) and the model file format ([`artifact`]).

pub mod artifact;
pub mod bootstrap;
pub mod corpus;
pub mod crf;
pub mod emissions;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod mlm;
mod optim;
pub mod report;
pub mod tagscheme;

pub use artifact::ModelArtifact;
pub use bootstrap::{bootstrap_run, relabel, sweep_theta, BootstrapConfig, EvalSets, IterationRecord};
pub use corpus::{LabeledDataset, Sentence, Token, UnlabeledCorpus, WeakDataset};
pub use crf::{CrfModel, TrainConfig, TransitionModel};
pub use emissions::{EmissionMatrix, EmissionScorer, ScorerKind};
pub use error::{ArtifactError, Error, Result};
pub use metrics::{micro_prf, Scores};
pub use mlm::{AdaptConfig, EmbeddingTable};
pub use tagscheme::{Span, TagSequence, TagSet};
