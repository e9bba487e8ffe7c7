//! Node and edge feature matrices for the encoder.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::actor_graph::{ActorGraph, RelationType};
use crate::error::{Error, Result};

pub const NODE_FEATURES: usize = 7;
pub const EDGE_FEATURES: usize = 7;
/// Column of the standardized speed in the node matrix.
pub const SPEED_COL: usize = 4;
/// Column of the standardized path length in the edge matrix.
pub const PATH_COL: usize = 6;

/// Mean and standard deviation of the continuous channels, fitted on a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub fitted: bool,
    pub speed_mean: f64,
    pub speed_std: f64,
    pub path_mean: f64,
    pub path_std: f64,
}

impl Default for FeatureStats {
    fn default() -> Self {
        Self {
            fitted: false,
            speed_mean: 0.0,
            speed_std: 1.0,
            path_mean: 0.0,
            path_std: 1.0,
        }
    }
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (0.0, 1.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

impl FeatureStats {
    /// Population statistics; a constant channel gets std 1.
    pub fn fit<'a>(graphs: impl IntoIterator<Item = &'a ActorGraph> + Clone) -> Self {
        let (speed_mean, speed_std) = mean_std(
            graphs
                .clone()
                .into_iter()
                .flat_map(|g| g.nodes().iter().map(|n| n.actor.long_speed_mps)),
        );
        let (path_mean, path_std) = mean_std(
            graphs
                .into_iter()
                .flat_map(|g| g.edges().iter().map(|e| e.path_length_m)),
        );
        Self {
            fitted: true,
            speed_mean,
            speed_std,
            path_mean,
            path_std,
        }
    }
}

/// Encoder input: node matrix (n × 7), edge list and edge matrix (m × 7).
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizedGraph {
    pub x: Array2<f64>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub e: Array2<f64>,
}

impl FeaturizedGraph {
    pub fn node_count(&self) -> usize {
        self.x.nrows()
    }

    pub fn edge_count(&self) -> usize {
        self.src.len()
    }
}

fn relation_slot(r: RelationType) -> usize {
    // slots 4 and 5 of the six-way encoding stay zero
    r.index()
}

pub fn featurize(graph: &ActorGraph, stats: &FeatureStats) -> Result<FeaturizedGraph> {
    if !stats.fitted {
        return Err(Error::UnfittedNormalizer);
    }
    let n = graph.node_count();
    let mut x = Array2::zeros((n, NODE_FEATURES));
    for (i, node) in graph.nodes().iter().enumerate() {
        x[[i, node.actor.actor_type.index()]] = 1.0;
        x[[i, SPEED_COL]] = (node.actor.long_speed_mps - stats.speed_mean) / stats.speed_std;
        x[[i, 5]] = f64::from(u8::from(node.on_intersection));
        x[[i, 6]] = f64::from(u8::from(node.actor.changed_lane));
    }
    let m = graph.edge_count();
    let mut e = Array2::zeros((m, EDGE_FEATURES));
    let mut src = Vec::with_capacity(m);
    let mut dst = Vec::with_capacity(m);
    for (k, edge) in graph.edges().iter().enumerate() {
        e[[k, relation_slot(edge.relation)]] = 1.0;
        e[[k, PATH_COL]] = (edge.path_length_m - stats.path_mean) / stats.path_std;
        src.push(edge.src);
        dst.push(edge.dst);
    }
    Ok(FeaturizedGraph { x, src, dst, e })
}
