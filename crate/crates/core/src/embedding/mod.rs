//! Contrastive GINE scene encoder.

pub mod augment;
pub mod features;
pub mod loss;
pub mod model;
pub mod optim;
pub mod train;

pub use features::{featurize, FeatureStats, FeaturizedGraph};
pub use model::{EncoderConfig, ModelParams};
pub use train::{train, EmbeddingMatrix, Encoder, EpochRecord, TrainOutcome};
