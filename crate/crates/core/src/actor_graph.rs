//! Two-phase actor graph construction.
//!
//! Phase one discovers candidate relations between actor pairs from lane
//! paths and distance limits. Phase two inserts them in hierarchical order
//! (lead, neighbor, opposite), skipping any relation whose endpoints are
//! already joined by a short enough path in the graph built so far.

use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lane_map::{LaneId, LaneMapGraph, LanePath, PathPattern};
use crate::scene::{ActorState, Scene, SceneSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationType {
    FollowingLead,
    LeadingVehicle,
    NeighborVehicle,
    OppositeVehicle,
}

impl RelationType {
    pub const ALL: [RelationType; 4] = [
        RelationType::FollowingLead,
        RelationType::LeadingVehicle,
        RelationType::NeighborVehicle,
        RelationType::OppositeVehicle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Kind of a discovered (undirected) relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelationKind {
    Lead,
    Neighbor,
    Opposite,
}

impl RelationKind {
    pub fn pattern(self) -> PathPattern {
        match self {
            RelationKind::Lead => PathPattern::AllFollowing,
            RelationKind::Neighbor => PathPattern::ExactlyOneNeighbor,
            RelationKind::Opposite => PathPattern::ExactlyOneOpposite,
        }
    }
}

/// Distance limits for discovery and node-distance limits for construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstructionParams {
    pub max_distance_lead_veh_m: f64,
    pub max_distance_neighbor_forward_m: f64,
    pub max_distance_neighbor_backward_m: f64,
    pub max_distance_opposite_forward_m: f64,
    pub max_distance_opposite_backward_m: f64,
    pub max_node_distance_leading: usize,
    pub max_node_distance_neighbor: usize,
    pub max_node_distance_opposite: usize,
    pub delta_timestep_s: f64,
}

impl Default for ConstructionParams {
    fn default() -> Self {
        Self {
            max_distance_lead_veh_m: 100.0,
            max_distance_neighbor_forward_m: 50.0,
            max_distance_neighbor_backward_m: 50.0,
            max_distance_opposite_forward_m: 100.0,
            max_distance_opposite_backward_m: 10.0,
            max_node_distance_leading: 3,
            max_node_distance_neighbor: 2,
            max_node_distance_opposite: 2,
            delta_timestep_s: 1.0,
        }
    }
}

impl ConstructionParams {
    pub fn validate(&self) -> Result<()> {
        let distances = [
            ("max_distance_lead_veh_m", self.max_distance_lead_veh_m),
            (
                "max_distance_neighbor_forward_m",
                self.max_distance_neighbor_forward_m,
            ),
            (
                "max_distance_neighbor_backward_m",
                self.max_distance_neighbor_backward_m,
            ),
            (
                "max_distance_opposite_forward_m",
                self.max_distance_opposite_forward_m,
            ),
            (
                "max_distance_opposite_backward_m",
                self.max_distance_opposite_backward_m,
            ),
            ("delta_timestep_s", self.delta_timestep_s),
        ];
        for (name, v) in distances {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(name, "must be a positive finite number"));
            }
        }
        let hops = [
            ("max_node_distance_leading", self.max_node_distance_leading),
            (
                "max_node_distance_neighbor",
                self.max_node_distance_neighbor,
            ),
            (
                "max_node_distance_opposite",
                self.max_node_distance_opposite,
            ),
        ];
        for (name, v) in hops {
            if v < 1 {
                return Err(Error::param(name, "must be at least 1"));
            }
        }
        Ok(())
    }

    /// Discovery limit for a relation kind and the sign of its path length.
    pub fn distance_limit(&self, kind: RelationKind, path_length_m: f64) -> f64 {
        let ahead = path_length_m >= 0.0;
        match (kind, ahead) {
            (RelationKind::Lead, _) => self.max_distance_lead_veh_m,
            (RelationKind::Neighbor, true) => self.max_distance_neighbor_forward_m,
            (RelationKind::Neighbor, false) => self.max_distance_neighbor_backward_m,
            (RelationKind::Opposite, true) => self.max_distance_opposite_forward_m,
            (RelationKind::Opposite, false) => self.max_distance_opposite_backward_m,
        }
    }

    pub fn max_node_distance(&self, kind: RelationKind) -> usize {
        match kind {
            RelationKind::Lead => self.max_node_distance_leading,
            RelationKind::Neighbor => self.max_node_distance_neighbor,
            RelationKind::Opposite => self.max_node_distance_opposite,
        }
    }

    /// Lane-path cost budget used when searching for a relation between two
    /// lanes: the larger directional limit plus both lane lengths.
    pub fn search_budget(&self, kind: RelationKind, from_len: f64, to_len: f64) -> f64 {
        let limit = self
            .distance_limit(kind, 1.0)
            .max(self.distance_limit(kind, -1.0));
        limit + from_len + to_len
    }
}

/// A candidate relation found during discovery.
///
/// `actor_a`/`actor_b` index the scene's actor list. For lead relations
/// `actor_a` is the follower. `path_length_m` is the position of `actor_b`
/// relative to `actor_a` along `lane_path`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveredRelation {
    pub actor_a: usize,
    pub actor_b: usize,
    pub kind: RelationKind,
    pub path_length_m: f64,
    pub lane_path: LanePath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorNode {
    pub actor: ActorState,
    pub on_intersection: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActorEdge {
    pub src: usize,
    pub dst: usize,
    pub relation: RelationType,
    pub path_length_m: f64,
}

/// Directed multigraph of actors; edges refer to node indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "GraphRecord", into = "GraphRecord")]
pub struct ActorGraph {
    pub scene_id: String,
    pub source_tag: String,
    nodes: Vec<ActorNode>,
    edges: Vec<ActorEdge>,
    out: Vec<Vec<usize>>,
    inc: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    scene_id: String,
    source_tag: String,
    nodes: Vec<ActorNode>,
    edges: Vec<ActorEdge>,
}

impl From<GraphRecord> for ActorGraph {
    fn from(r: GraphRecord) -> Self {
        let mut g = ActorGraph::new(r.scene_id, r.source_tag, r.nodes);
        for e in r.edges {
            g.push_edge(e);
        }
        g
    }
}

impl From<ActorGraph> for GraphRecord {
    fn from(g: ActorGraph) -> Self {
        GraphRecord {
            scene_id: g.scene_id,
            source_tag: g.source_tag,
            nodes: g.nodes,
            edges: g.edges,
        }
    }
}

impl ActorGraph {
    pub fn new(
        scene_id: impl Into<String>,
        source_tag: impl Into<String>,
        nodes: Vec<ActorNode>,
    ) -> Self {
        let n = nodes.len();
        Self {
            scene_id: scene_id.into(),
            source_tag: source_tag.into(),
            nodes,
            edges: Vec::new(),
            out: vec![Vec::new(); n],
            inc: vec![Vec::new(); n],
        }
    }

    pub fn nodes(&self) -> &[ActorNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[ActorEdge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn out_edges(&self, v: usize) -> impl Iterator<Item = &ActorEdge> {
        self.out[v].iter().map(move |&i| &self.edges[i])
    }

    pub fn in_edges(&self, v: usize) -> impl Iterator<Item = &ActorEdge> {
        self.inc[v].iter().map(move |&i| &self.edges[i])
    }

    pub fn has_edge(&self, src: usize, dst: usize, relation: RelationType) -> bool {
        self.out_edges(src)
            .any(|e| e.dst == dst && e.relation == relation)
    }

    /// Adds an edge unless the same (src, dst, relation) already exists.
    pub fn push_edge(&mut self, edge: ActorEdge) -> bool {
        assert!(edge.src < self.nodes.len() && edge.dst < self.nodes.len());
        if self.has_edge(edge.src, edge.dst, edge.relation) {
            return false;
        }
        let idx = self.edges.len();
        self.edges.push(edge);
        self.out[edge.src].push(idx);
        self.inc[edge.dst].push(idx);
        true
    }

    /// Fewest directed edges on a path from `src` to `dst`, if within `max_edges`.
    pub fn hop_distance(&self, src: usize, dst: usize, max_edges: usize) -> Option<usize> {
        if src == dst {
            return Some(0);
        }
        let mut depth = vec![usize::MAX; self.nodes.len()];
        depth[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(v) = queue.pop_front() {
            if depth[v] >= max_edges {
                continue;
            }
            for e in self.out_edges(v) {
                if depth[e.dst] == usize::MAX {
                    depth[e.dst] = depth[v] + 1;
                    if e.dst == dst {
                        return Some(depth[e.dst]);
                    }
                    queue.push_back(e.dst);
                }
            }
        }
        None
    }

    /// Weakly connected component label per node, numbered by first appearance.
    pub fn weak_components(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                let neighbors = self
                    .out_edges(v)
                    .map(|e| e.dst)
                    .chain(self.in_edges(v).map(|e| e.src))
                    .collect::<Vec<_>>();
                for u in neighbors {
                    if label[u] == usize::MAX {
                        label[u] = next;
                        stack.push(u);
                    }
                }
            }
            next += 1;
        }
        label
    }
}

fn euclidean(a: &ActorState, b: &ActorState) -> f64 {
    let d: f64 = (0..3)
        .map(|k| (a.position[k] - b.position[k]).powi(2))
        .sum();
    d.sqrt()
}

type PathCache = BTreeMap<(LaneId, LaneId, RelationKind), Option<LanePath>>;

fn cached_path(
    map: &LaneMapGraph,
    params: &ConstructionParams,
    cache: &mut PathCache,
    from: LaneId,
    to: LaneId,
    kind: RelationKind,
) -> Result<Option<LanePath>> {
    if let Some(hit) = cache.get(&(from, to, kind)) {
        return Ok(hit.clone());
    }
    let from_len = map.lane(from).ok_or(Error::UnknownLane(from))?.length_m;
    let to_len = map.lane(to).ok_or(Error::UnknownLane(to))?.length_m;
    let budget = params.search_budget(kind, from_len, to_len);
    let path = map.find_lane_path(from, to, budget, kind.pattern())?;
    cache.insert((from, to, kind), path.clone());
    Ok(path)
}

/// Finds all candidate relations between actor pairs of `scene`.
///
/// For every unordered pair and relation kind, the cheapest lane path of the
/// kind's pattern (searched in both directions) decides the relation; it is
/// kept when both the lane-based path length and the Euclidean distance are
/// within the kind's directional limit. Lead relations only consider the
/// direction in which the second actor is ahead.
pub fn discover_relations(
    map: &LaneMapGraph,
    scene: &Scene,
    params: &ConstructionParams,
) -> Result<Vec<DiscoveredRelation>> {
    let actors = &scene.actors;
    let mut order: Vec<usize> = (0..actors.len()).collect();
    order.sort_by(|&i, &j| actors[i].actor_id.cmp(&actors[j].actor_id));

    let mut cache = PathCache::new();
    let mut found = Vec::new();
    for (pos, &a) in order.iter().enumerate() {
        for &b in &order[pos + 1..] {
            for kind in [
                RelationKind::Lead,
                RelationKind::Neighbor,
                RelationKind::Opposite,
            ] {
                // candidates as (cost, origin, target, path, path length); origin `a` first on ties
                let mut best: Option<(f64, usize, usize, LanePath, f64)> = None;
                for (from, to) in [(a, b), (b, a)] {
                    let (fa, ta) = (&actors[from], &actors[to]);
                    let Some(path) = cached_path(
                        map,
                        params,
                        &mut cache,
                        fa.primary_lane,
                        ta.primary_lane,
                        kind,
                    )?
                    else {
                        continue;
                    };
                    let pl = map.path_length_between(&path, fa.s_m, ta.s_m)?;
                    if kind == RelationKind::Lead && pl < 0.0 {
                        continue;
                    }
                    let better = match &best {
                        None => true,
                        Some((cost, ..)) => path.cost_m < *cost - 1e-9,
                    };
                    if better {
                        best = Some((path.cost_m, from, to, path, pl));
                    }
                }
                let Some((_, from, to, lane_path, pl)) = best else {
                    continue;
                };
                let limit = params.distance_limit(kind, pl);
                if pl.abs() > limit || euclidean(&actors[from], &actors[to]) > limit {
                    continue;
                }
                found.push(DiscoveredRelation {
                    actor_a: from,
                    actor_b: to,
                    kind,
                    path_length_m: pl,
                    lane_path,
                });
            }
        }
    }
    Ok(found)
}

/// Outcome of one relation during hierarchical construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Accepted,
    /// One direction was redundant, the other was added.
    Partial,
    Rejected,
}

/// Inserts discovered relations hierarchically with redundancy prevention.
pub fn build_actor_graph(
    map: &LaneMapGraph,
    scene: &Scene,
    relations: &[DiscoveredRelation],
    params: &ConstructionParams,
) -> ActorGraph {
    build_actor_graph_traced(map, scene, relations, params).0
}

/// Like [`build_actor_graph`], also returning the decision taken for each
/// relation (indexed like `relations`).
pub fn build_actor_graph_traced(
    map: &LaneMapGraph,
    scene: &Scene,
    relations: &[DiscoveredRelation],
    params: &ConstructionParams,
) -> (ActorGraph, Vec<Decision>) {
    let nodes = scene
        .actors
        .iter()
        .map(|actor| ActorNode {
            on_intersection: actor
                .lane_ids
                .iter()
                .chain(std::iter::once(&actor.primary_lane))
                .any(|id| map.lane(*id).is_some_and(|l| l.is_intersection)),
            actor: actor.clone(),
        })
        .collect();
    let mut graph = ActorGraph::new(scene.scene_id.clone(), scene.source_tag.clone(), nodes);
    let mut decisions = vec![Decision::Rejected; relations.len()];
    if scene.is_degenerate() {
        return (graph, decisions);
    }

    let id = |i: usize| scene.actors[i].actor_id.as_str();
    for kind in [
        RelationKind::Lead,
        RelationKind::Neighbor,
        RelationKind::Opposite,
    ] {
        let mut stage: Vec<usize> = (0..relations.len())
            .filter(|&i| relations[i].kind == kind)
            .collect();
        stage.sort_by(|&x, &y| {
            let (rx, ry) = (&relations[x], &relations[y]);
            rx.path_length_m
                .abs()
                .total_cmp(&ry.path_length_m.abs())
                .then_with(|| id(rx.actor_a).cmp(id(ry.actor_a)))
                .then_with(|| id(rx.actor_b).cmp(id(ry.actor_b)))
        });
        let hops = params.max_node_distance(kind);
        for idx in stage {
            let rel = &relations[idx];
            let (a, b, pl) = (rel.actor_a, rel.actor_b, rel.path_length_m);
            let forward_redundant = graph.hop_distance(a, b, hops).is_some();
            let backward_redundant = graph.hop_distance(b, a, hops).is_some();
            let (forward, backward) = match kind {
                RelationKind::Lead => (
                    (RelationType::LeadingVehicle, pl),
                    (RelationType::FollowingLead, -pl),
                ),
                RelationKind::Neighbor => (
                    (RelationType::NeighborVehicle, pl),
                    (RelationType::NeighborVehicle, -pl),
                ),
                // opposite actors see each other on the same side, so the sign is shared
                RelationKind::Opposite => (
                    (RelationType::OppositeVehicle, pl),
                    (RelationType::OppositeVehicle, pl),
                ),
            };
            let (add_forward, add_backward) = match kind {
                RelationKind::Opposite => {
                    let ok = !(forward_redundant || backward_redundant);
                    (ok, ok)
                }
                _ => (!forward_redundant, !backward_redundant),
            };
            if add_forward {
                graph.push_edge(ActorEdge {
                    src: a,
                    dst: b,
                    relation: forward.0,
                    path_length_m: forward.1,
                });
            }
            if add_backward {
                graph.push_edge(ActorEdge {
                    src: b,
                    dst: a,
                    relation: backward.0,
                    path_length_m: backward.1,
                });
            }
            decisions[idx] = match (add_forward, add_backward) {
                (true, true) => Decision::Accepted,
                (false, false) => Decision::Rejected,
                _ => Decision::Partial,
            };
        }
    }
    (graph, decisions)
}

/// Per-scene result of the batch driver.
#[derive(Debug, Clone)]
pub struct SceneGraphResult {
    pub scene_id: String,
    pub outcome: std::result::Result<BuiltGraph, String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct BuiltGraph {
    pub graph: ActorGraph,
    /// Directed edges implied by all discovered relations (two per relation).
    pub edges_discovered: usize,
    pub edges_final: usize,
}

/// Drops actors that cannot be placed on `map`, returning warnings.
fn sanitize_scene(map: &LaneMapGraph, scene: &Scene) -> (Scene, Vec<String>) {
    let mut warnings = Vec::new();
    let mut clean = scene.clone();
    clean.actors.retain(|a| match map.lane(a.primary_lane) {
        Some(lane) if a.s_m >= 0.0 && a.s_m <= lane.length_m + 1e-9 => true,
        Some(lane) => {
            warnings.push(format!(
                "actor {} dropped: s={} outside lane {} of length {}",
                a.actor_id, a.s_m, lane.id, lane.length_m
            ));
            false
        }
        None => {
            warnings.push(format!(
                "actor {} dropped: {}",
                a.actor_id,
                Error::UnmappableActor {
                    actor: a.actor_id.clone()
                }
            ));
            false
        }
    });
    (clean, warnings)
}

pub fn build_scene_graph(
    map: &LaneMapGraph,
    scene: &Scene,
    params: &ConstructionParams,
) -> SceneGraphResult {
    let (clean, warnings) = sanitize_scene(map, scene);
    let outcome = discover_relations(map, &clean, params)
        .map(|relations| {
            let graph = build_actor_graph(map, &clean, &relations, params);
            BuiltGraph {
                edges_discovered: 2 * relations.len(),
                edges_final: graph.edge_count(),
                graph,
            }
        })
        .map_err(|e| e.to_string());
    SceneGraphResult {
        scene_id: scene.scene_id.clone(),
        outcome,
        warnings,
    }
}

/// Builds one actor graph per scene, in order. Per-scene failures are
/// reported in the result rather than aborting the batch.
pub fn build_scene_graphs(
    map: &LaneMapGraph,
    set: &SceneSet,
    params: &ConstructionParams,
) -> Result<Vec<SceneGraphResult>> {
    if set.scenes.is_empty() {
        return Err(Error::EmptySceneSet);
    }
    params.validate()?;
    Ok(set
        .scenes
        .par_iter()
        .map(|scene| build_scene_graph(map, scene, params))
        .collect())
}
