//! Scene graphs, archetype coverage and contrastive scene embeddings for
//! comparing traffic datasets.

pub mod actor_graph;
pub mod archetype;
pub mod coverage;
pub mod embedding;
pub mod embedding_analytics;
pub mod error;
pub mod geometry;
pub mod io;
pub mod lane_map;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
