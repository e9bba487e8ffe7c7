use thiserror::Error;

use crate::lane_map::LaneId;

/// Errors produced by the scene-graph and coverage pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("map has no lanes")]
    EmptyMap,

    #[error("lane {lane} references unknown lane {missing} in `{field}`")]
    DanglingLane {
        lane: LaneId,
        missing: LaneId,
        field: &'static str,
    },

    #[error("duplicate lane id {0}")]
    DuplicateLane(LaneId),

    #[error("invalid lane {lane}: {reason}")]
    InvalidLane { lane: LaneId, reason: String },

    #[error("unknown lane {0}")]
    UnknownLane(LaneId),

    #[error("longitudinal position {s} outside [0, {length}] on lane {lane}")]
    PositionOutOfRange { lane: LaneId, s: f64, length: f64 },

    #[error("actor {actor} could not be mapped to any lane")]
    UnmappableActor { actor: String },

    #[error("record {index}: field `{field}`: {reason}")]
    Schema {
        index: usize,
        field: String,
        reason: String,
    },

    #[error("scene set is empty")]
    EmptySceneSet,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("archetype `{name}`: {reason}")]
    InvalidArchetype { name: String, reason: String },

    #[error("coverage tables have mismatching archetype columns")]
    ColumnMismatch,

    #[error("{0}")]
    EmptySamples(&'static str),

    #[error("feature normalizer has not been fitted")]
    UnfittedNormalizer,

    #[error("graph has no nodes")]
    EmptyGraph,

    #[error("need at least 2 {what}, got {got}")]
    TooFew { what: &'static str, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("infeasible synthetic placement: {0}")]
    Infeasible(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
