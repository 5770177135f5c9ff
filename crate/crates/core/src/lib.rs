//! Indoor localization from Wi-Fi RSS fingerprints with a Siamese
//! multi-head attention encoder and a gradient-boosted tree classifier.
//!
//! - [`dataset`]: fingerprint data model, normalization, CSV format, splits
//! - [`synthgen`]: synthetic multi-device, multi-CI worlds
//! - [`triplets`]: anchor / positive / negative mining
//! - [`siamese`]: the encoder, FaSt augmentation, triplet loss and trainer
//! - [`gbt`]: boosted trees on embeddings plus KNN and LT-KNN baselines
//! - [`eval`]: experiment configuration, pipeline, sweeps and reports

pub mod dataset;
pub mod error;
pub mod eval;
pub mod gbt;
pub mod persist;
pub mod rng;
pub mod siamese;
pub mod synthgen;
pub mod triplets;

pub use dataset::{Fingerprint, FingerprintDataset, NormalizedFingerprint, ReferencePoint, RpId, SplitSpec};
pub use error::{Error, Result};
pub use eval::{localization_error, EvalReport, ExperimentConfig, Session};
pub use gbt::{BoostedEnsemble, GbtParams, KnnModel};
pub use siamese::{Embedding, ModelConfig, SiameseModel};
pub use triplets::{MinerConfig, Triplet};
