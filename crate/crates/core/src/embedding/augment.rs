//! Stochastic graph views for contrastive training.
//!
//! Draw order is fixed so a seeded generator reproduces a view exactly:
//! one uniform `f64` per edge in edge order (the edge is kept iff the draw
//! is `>= p`), then one standard normal per node for the speed channel,
//! then one standard normal per kept edge for the path-length channel.

use rand::Rng;
use rand_distr::StandardNormal;

use super::features::{FeaturizedGraph, PATH_COL, SPEED_COL};

pub fn augment(
    graph: &FeaturizedGraph,
    sigma: f64,
    drop_p: f64,
    rng: &mut impl Rng,
) -> FeaturizedGraph {
    let keep: Vec<usize> = (0..graph.edge_count())
        .filter(|_| rng.gen::<f64>() >= drop_p)
        .collect();
    let mut x = graph.x.clone();
    for i in 0..x.nrows() {
        let noise: f64 = rng.sample(StandardNormal);
        x[[i, SPEED_COL]] += sigma * noise;
    }
    let mut e = graph.e.select(ndarray::Axis(0), &keep);
    for k in 0..keep.len() {
        let noise: f64 = rng.sample(StandardNormal);
        e[[k, PATH_COL]] += sigma * noise;
    }
    FeaturizedGraph {
        x,
        src: keep.iter().map(|&k| graph.src[k]).collect(),
        dst: keep.iter().map(|&k| graph.dst[k]).collect(),
        e,
    }
}
