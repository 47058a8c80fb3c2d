//! Quadratic word embedding models: corpus statistics, the QWEM target,
//! spectral factorization, training dynamics, SGD trainers and evaluation.

pub mod corpus;
pub mod dynamics;
pub mod embedding;
mod error;
pub mod eval;
pub mod mxc;
pub mod spectral;
pub mod target;
pub mod taskvec;
pub mod trainers;

pub use corpus::{generate_planted, CountConfig, PlantedConfig, PlantedCorpus, SkipGramStats, Vocabulary};
pub use embedding::{EmbeddingMatrix, Provenance};
pub use error::{Error, Result};
pub use eval::{analogy_accuracy, pc_neighbors, spearman, AnalogySet, Normalization, SimilaritySet};
pub use spectral::{eigh, factorize_target, requiv_distance, subspace_overlap, SpectralDecomposition, TopK};
pub use target::{build_mstar, build_pmi, PairDistribution, Reweight, TargetMatrix};
pub use taskvec::{build_task_vectors, mp_fit, signal_in_mean, snr_sweep, spike_snr, MPFit, TaskVectorSet};
pub use trainers::{train, LossKind, PairObjective, Schedule, TrainConfig};
