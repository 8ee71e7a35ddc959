//! Authorship-attribution training curriculum over document embeddings.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`corpus`] loads labeled documents and their base embeddings.
//! 2. [`miner`] picks one same-author pair per author, either the least
//!    similar pair under a similarity ceiling or a random pair.
//! 3. [`batcher`] plans each epoch's batches so that every author contributes
//!    one document to a dense cluster centre of topically similar documents.
//! 4. [`trainer`] fits a half-width linear projection with a supervised
//!    contrastive loss, re-planning batches from the latest model each epoch.
//! 5. [`evalkit`] builds query/target/haystack tasks and scores Success@8 and
//!    MRR.
//!
//! [`synth`] generates corpora with known style/topic structure and
//! [`experiment`] wires the stages into reproducible multi-seed runs.

pub mod batcher;
pub mod corpus;
pub mod error;
pub mod evalkit;
pub mod experiment;
pub mod geometry;
pub mod miner;
mod rng;
pub mod synth;
pub mod trainer;

pub use batcher::{BatchConfig, BatchPlan, BatchingMode, VectorSource};
pub use corpus::{Corpus, Document};
pub use error::{Error, Result};
pub use evalkit::{MetricsReport, RetrievalTask, TaskMode};
pub use geometry::{KMeansResult, VectorMatrix};
pub use miner::{MinerConfig, MinerMode, TrainingPair};
pub use synth::SynthConfig;
pub use trainer::{EpochState, ProjectionModel, TrainConfig};
