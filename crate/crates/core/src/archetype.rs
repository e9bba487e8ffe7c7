//! Archetype pattern graphs and subgraph matching against actor graphs.
//!
//! Matching is a directed, non-induced monomorphism: every pattern edge must
//! map onto a scene edge with the same relation type, extra scene edges are
//! allowed. Candidates are generated VF2-style from already-mapped
//! neighbors, so connected patterns never scan the full node set twice.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actor_graph::{ActorGraph, ActorNode, RelationType};
use crate::error::{Error, Result};
use crate::scene::ActorType;

pub const DEFAULT_EMBEDDING_CAP: usize = 64;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConstraints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor_type: Option<ActorType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_intersection: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub changed_lane: Option<bool>,
}

impl NodeConstraints {
    pub fn accepts(&self, node: &ActorNode) -> bool {
        self.actor_type.map_or(true, |t| t == node.actor.actor_type)
            && self
                .on_intersection
                .map_or(true, |b| b == node.on_intersection)
            && self
                .changed_lane
                .map_or(true, |b| b == node.actor.changed_lane)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternNode {
    pub role_name: String,
    #[serde(default)]
    pub constraints: NodeConstraints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternEdgeDef {
    pub src_role: String,
    pub dst_role: String,
    pub relation: RelationType,
}

/// On-disk archetype definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeDefinition {
    pub name: String,
    #[serde(default)]
    pub display_name: String,
    #[serde(default)]
    pub isolation_required: bool,
    pub nodes: Vec<PatternNode>,
    pub edges: Vec<PatternEdgeDef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatternEdge {
    pub src: usize,
    pub dst: usize,
    pub relation: RelationType,
}

/// A validated archetype with role names resolved to node indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Archetype {
    pub name: String,
    pub display_name: String,
    pub isolation_required: bool,
    pub nodes: Vec<PatternNode>,
    pub edges: Vec<PatternEdge>,
    /// Node visiting order used by the matcher; each node after the first
    /// is adjacent to an earlier one.
    order: Vec<usize>,
}

impl Archetype {
    pub fn from_definition(def: ArchetypeDefinition) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidArchetype {
            name: def.name.clone(),
            reason,
        };
        if def.nodes.is_empty() {
            return Err(invalid("pattern has no nodes".into()));
        }
        let mut index = BTreeMap::new();
        for (i, n) in def.nodes.iter().enumerate() {
            if index.insert(n.role_name.clone(), i).is_some() {
                return Err(invalid(format!("duplicate role `{}`", n.role_name)));
            }
        }
        let mut edges = Vec::with_capacity(def.edges.len());
        let mut seen = BTreeSet::new();
        for e in &def.edges {
            let lookup = |role: &str| {
                index
                    .get(role)
                    .copied()
                    .ok_or_else(|| invalid(format!("edge references unknown role `{role}`")))
            };
            let (src, dst) = (lookup(&e.src_role)?, lookup(&e.dst_role)?);
            if src == dst {
                return Err(invalid(format!("self-loop on role `{}`", e.src_role)));
            }
            if !seen.insert((src, dst, e.relation)) {
                return Err(invalid(format!(
                    "duplicate edge {} -> {}",
                    e.src_role, e.dst_role
                )));
            }
            edges.push(PatternEdge {
                src,
                dst,
                relation: e.relation,
            });
        }
        let order = connected_order(def.nodes.len(), &edges)
            .ok_or_else(|| invalid("pattern is not weakly connected".into()))?;
        Ok(Self {
            display_name: if def.display_name.is_empty() {
                def.name.clone()
            } else {
                def.display_name
            },
            name: def.name,
            isolation_required: def.isolation_required,
            nodes: def.nodes,
            edges,
            order,
        })
    }

    pub fn actor_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn role_names(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.role_name.as_str())
    }

    /// Label for an edge, `src_role->dst_role`.
    pub fn edge_label(&self, edge: &PatternEdge) -> String {
        format!(
            "{}->{}",
            self.nodes[edge.src].role_name, self.nodes[edge.dst].role_name
        )
    }

    pub fn to_definition(&self) -> ArchetypeDefinition {
        ArchetypeDefinition {
            name: self.name.clone(),
            display_name: self.display_name.clone(),
            isolation_required: self.isolation_required,
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| PatternEdgeDef {
                    src_role: self.nodes[e.src].role_name.clone(),
                    dst_role: self.nodes[e.dst].role_name.clone(),
                    relation: e.relation,
                })
                .collect(),
        }
    }
}

/// BFS order from the highest-degree node (lowest index on ties), or None
/// when some node is unreachable ignoring edge direction.
fn connected_order(n: usize, edges: &[PatternEdge]) -> Option<Vec<usize>> {
    let degree = |i: usize| edges.iter().filter(|e| e.src == i || e.dst == i).count();
    let start = (0..n).max_by_key(|&i| (degree(i), std::cmp::Reverse(i)))?;
    let order = bfs_order(n, edges, start);
    (order.len() == n).then_some(order)
}

fn bfs_order(n: usize, edges: &[PatternEdge], start: usize) -> Vec<usize> {
    let mut adj = vec![BTreeSet::new(); n];
    for e in edges {
        adj[e.src].insert(e.dst);
        adj[e.dst].insert(e.src);
    }
    let mut order = vec![start];
    let mut seen = vec![false; n];
    seen[start] = true;
    let mut head = 0;
    while head < order.len() {
        let v = order[head];
        head += 1;
        for &u in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                order.push(u);
            }
        }
    }
    order
}

const DEFAULT_FILES: [&str; 18] = [
    include_str!("../archetypes/01_simple_following.json"),
    include_str!("../archetypes/02_simple_opposite.json"),
    include_str!("../archetypes/03_simple_neighbor.json"),
    include_str!("../archetypes/04_lead_neighbor_intersection.json"),
    include_str!("../archetypes/05_cut_in.json"),
    include_str!("../archetypes/06_cut_in_intersection.json"),
    include_str!("../archetypes/07_platoon_intersection.json"),
    include_str!("../archetypes/08_opposite_traffic_intersection.json"),
    include_str!("../archetypes/09_lead_neighbor_at_intersection.json"),
    include_str!("../archetypes/10_triple_opposite_intersection.json"),
    include_str!("../archetypes/11_lead_following_back.json"),
    include_str!("../archetypes/12_lead_neighbor.json"),
    include_str!("../archetypes/13_cut_out.json"),
    include_str!("../archetypes/14_cut_out_intersection.json"),
    include_str!("../archetypes/15_platoon4_intersection.json"),
    include_str!("../archetypes/16_opposite4_intersection.json"),
    include_str!("../archetypes/17_lead_neighbor_opposite.json"),
    include_str!("../archetypes/18_lead_neighbor_opposite_intersection.json"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ArchetypeCatalog {
    archetypes: Vec<Archetype>,
}

impl Default for ArchetypeCatalog {
    fn default() -> Self {
        let defs = DEFAULT_FILES
            .iter()
            .map(|text| serde_json::from_str(text).expect("bundled archetype file is valid json"))
            .collect();
        Self::new(defs).expect("bundled archetype catalog is valid")
    }
}

impl ArchetypeCatalog {
    pub fn new(defs: Vec<ArchetypeDefinition>) -> Result<Self> {
        let mut names = BTreeSet::new();
        let mut archetypes = Vec::with_capacity(defs.len());
        for def in defs {
            if !names.insert(def.name.clone()) {
                return Err(Error::InvalidArchetype {
                    name: def.name,
                    reason: "name used twice in catalog".into(),
                });
            }
            archetypes.push(Archetype::from_definition(def)?);
        }
        Ok(Self { archetypes })
    }

    /// Loads every `*.json` file of a directory, ordered by file name.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut paths = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().is_some_and(|x| x == "json") {
                paths.push(path);
            }
        }
        paths.sort();
        let defs = paths
            .iter()
            .map(|p| crate::io::read_json(p))
            .collect::<Result<Vec<ArchetypeDefinition>>>()?;
        Self::new(defs)
    }

    pub fn archetypes(&self) -> &[Archetype] {
        &self.archetypes
    }

    pub fn len(&self) -> usize {
        self.archetypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.archetypes.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.archetypes.iter().map(|a| a.name.clone()).collect()
    }
}

/// Knobs for a match call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchPolicy {
    /// Enumeration stops after this many embeddings.
    pub embedding_cap: usize,
    /// Optional bound on |path_length_m| of matched scene edges.
    pub max_abs_path_length_m: Option<f64>,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        Self {
            embedding_cap: DEFAULT_EMBEDDING_CAP,
            max_abs_path_length_m: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub archetype: String,
    pub matched: bool,
    /// Each mapping lists the scene node for every pattern node, in pattern order.
    pub embeddings: Vec<Vec<usize>>,
    /// True when enumeration hit the cap, so the real count is at least `embeddings.len()`.
    pub saturated: bool,
}

struct Matcher<'a> {
    pattern: &'a Archetype,
    graph: &'a ActorGraph,
    policy: &'a MatchPolicy,
    components: Vec<usize>,
    component_size: Vec<usize>,
    mapping: Vec<Option<usize>>,
    used: Vec<bool>,
    limit: usize,
    found: Vec<Vec<usize>>,
}

impl<'a> Matcher<'a> {
    fn new(
        pattern: &'a Archetype,
        graph: &'a ActorGraph,
        policy: &'a MatchPolicy,
        limit: usize,
    ) -> Self {
        let components = if pattern.isolation_required {
            graph.weak_components()
        } else {
            Vec::new()
        };
        let mut component_size = vec![0; graph.node_count()];
        for &c in &components {
            component_size[c] += 1;
        }
        Self {
            pattern,
            graph,
            policy,
            components,
            component_size,
            mapping: vec![None; pattern.actor_count()],
            used: vec![false; graph.node_count()],
            limit,
            found: Vec::new(),
        }
    }

    fn edge_ok(&self, src: usize, dst: usize, relation: RelationType) -> bool {
        self.graph.out_edges(src).any(|e| {
            e.dst == dst
                && e.relation == relation
                && self
                    .policy
                    .max_abs_path_length_m
                    .map_or(true, |m| e.path_length_m.abs() <= m)
        })
    }

    fn feasible(&self, p: usize, v: usize) -> bool {
        if self.used[v]
            || !self.pattern.nodes[p]
                .constraints
                .accepts(&self.graph.nodes()[v])
        {
            return false;
        }
        self.pattern.edges.iter().all(|e| {
            if e.src == p {
                match self.mapping[e.dst] {
                    Some(w) => self.edge_ok(v, w, e.relation),
                    None => true,
                }
            } else if e.dst == p {
                match self.mapping[e.src] {
                    Some(w) => self.edge_ok(w, v, e.relation),
                    None => true,
                }
            } else {
                true
            }
        })
    }

    fn candidates(&self, p: usize) -> Vec<usize> {
        // neighbors of an already-mapped pattern neighbor, else every node
        for e in &self.pattern.edges {
            if e.dst == p {
                if let Some(w) = self.mapping[e.src] {
                    let mut c: Vec<usize> = self
                        .graph
                        .out_edges(w)
                        .filter(|x| x.relation == e.relation)
                        .map(|x| x.dst)
                        .collect();
                    c.sort_unstable();
                    c.dedup();
                    return c;
                }
            }
            if e.src == p {
                if let Some(w) = self.mapping[e.dst] {
                    let mut c: Vec<usize> = self
                        .graph
                        .in_edges(w)
                        .filter(|x| x.relation == e.relation)
                        .map(|x| x.src)
                        .collect();
                    c.sort_unstable();
                    c.dedup();
                    return c;
                }
            }
        }
        (0..self.graph.node_count()).collect()
    }

    fn isolated(&self) -> bool {
        let first = self.mapping[0].expect("complete mapping");
        self.component_size[self.components[first]] == self.pattern.actor_count()
    }

    fn search(&mut self, depth: usize) {
        if self.found.len() >= self.limit {
            return;
        }
        if depth == self.pattern.order.len() {
            if !self.pattern.isolation_required || self.isolated() {
                self.found.push(
                    self.mapping
                        .iter()
                        .map(|m| m.expect("complete mapping"))
                        .collect(),
                );
            }
            return;
        }
        let p = self.pattern.order[depth];
        for v in self.candidates(p) {
            if !self.feasible(p, v) {
                continue;
            }
            self.mapping[p] = Some(v);
            self.used[v] = true;
            self.search(depth + 1);
            self.used[v] = false;
            self.mapping[p] = None;
            if self.found.len() >= self.limit {
                return;
            }
        }
    }
}

/// Enumerates embeddings of `pattern` in `graph`, up to the policy's cap.
pub fn match_archetype(
    pattern: &Archetype,
    graph: &ActorGraph,
    policy: &MatchPolicy,
) -> MatchResult {
    let cap = policy.embedding_cap.max(1);
    let mut m = Matcher::new(pattern, graph, policy, cap);
    m.search(0);
    MatchResult {
        archetype: pattern.name.clone(),
        matched: !m.found.is_empty(),
        saturated: m.found.len() >= cap,
        embeddings: m.found,
    }
}

/// One embedding with `pinned` pattern node mapped to scene node `node`.
fn find_pinned(
    pattern: &Archetype,
    graph: &ActorGraph,
    policy: &MatchPolicy,
    pinned: usize,
    node: usize,
) -> Option<Vec<usize>> {
    // re-root the visiting order so the pinned node is placed first
    let mut rerooted = pattern.clone();
    rerooted.order = bfs_order(pattern.actor_count(), &pattern.edges, pinned);
    let mut m = Matcher::new(&rerooted, graph, policy, 1);
    if !m.feasible(pinned, node) {
        return None;
    }
    m.mapping[pinned] = Some(node);
    m.used[node] = true;
    m.search(1);
    m.found.pop()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeCoverage {
    pub covered: usize,
    pub total: usize,
    pub fraction: f64,
    /// Set for graphs without nodes, whose fraction is reported as 0.
    pub degenerate: bool,
}

impl NodeCoverage {
    fn new(covered: usize, total: usize) -> Self {
        Self {
            covered,
            total,
            fraction: if total == 0 {
                0.0
            } else {
                covered as f64 / total as f64
            },
            degenerate: total == 0,
        }
    }

    /// Node-count weighted aggregate over scenes.
    pub fn aggregate<'a>(items: impl IntoIterator<Item = &'a NodeCoverage>) -> NodeCoverage {
        let (c, t) = items
            .into_iter()
            .fold((0, 0), |(c, t), x| (c + x.covered, t + x.total));
        NodeCoverage::new(c, t)
    }
}

/// Which scene nodes take part in at least one embedding of any archetype.
pub fn covered_nodes(
    catalog: &ArchetypeCatalog,
    graph: &ActorGraph,
    policy: &MatchPolicy,
) -> Vec<bool> {
    let mut covered = vec![false; graph.node_count()];
    for v in 0..graph.node_count() {
        if covered[v] {
            continue;
        }
        'search: for pattern in catalog.archetypes() {
            for p in 0..pattern.actor_count() {
                if let Some(embedding) = find_pinned(pattern, graph, policy, p, v) {
                    for w in embedding {
                        covered[w] = true;
                    }
                    break 'search;
                }
            }
        }
    }
    covered
}

pub fn node_coverage(
    catalog: &ArchetypeCatalog,
    graph: &ActorGraph,
    policy: &MatchPolicy,
) -> NodeCoverage {
    let covered = covered_nodes(catalog, graph, policy);
    NodeCoverage::new(covered.iter().filter(|&&c| c).count(), covered.len())
}

/// Samples captured from matched embeddings, deduplicated per scene.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSamples {
    /// Longitudinal speed per role.
    pub role_speed_mps: BTreeMap<String, Vec<f64>>,
    /// Path length per pattern edge, keyed `src_role->dst_role`.
    pub edge_path_length_m: BTreeMap<String, Vec<f64>>,
}

/// Scenes × archetypes hit table with embedding metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub scene_ids: Vec<String>,
    pub archetypes: Vec<String>,
    /// `hits[scene][archetype]`.
    pub hits: Vec<Vec<bool>>,
    pub embedding_counts: Vec<Vec<usize>>,
    pub saturated: Vec<Vec<bool>>,
    pub node_coverage: Vec<NodeCoverage>,
    pub samples: BTreeMap<String, ArchetypeSamples>,
}

impl CoverageTable {
    pub fn scene_count(&self) -> usize {
        self.scene_ids.len()
    }

    pub fn dataset_node_coverage(&self) -> NodeCoverage {
        NodeCoverage::aggregate(&self.node_coverage)
    }

    /// Percentage of scenes matching each archetype.
    pub fn coverage_percent(&self) -> Vec<f64> {
        let n = self.scene_count();
        (0..self.archetypes.len())
            .map(|j| {
                if n == 0 {
                    0.0
                } else {
                    100.0 * self.hits.iter().filter(|row| row[j]).count() as f64 / n as f64
                }
            })
            .collect()
    }
}

struct SceneRow {
    hits: Vec<bool>,
    counts: Vec<usize>,
    saturated: Vec<bool>,
    coverage: NodeCoverage,
    samples: Vec<ArchetypeSamples>,
}

fn scene_row(catalog: &ArchetypeCatalog, graph: &ActorGraph, policy: &MatchPolicy) -> SceneRow {
    let mut row = SceneRow {
        hits: Vec::with_capacity(catalog.len()),
        counts: Vec::with_capacity(catalog.len()),
        saturated: Vec::with_capacity(catalog.len()),
        coverage: node_coverage(catalog, graph, policy),
        samples: Vec::with_capacity(catalog.len()),
    };
    for pattern in catalog.archetypes() {
        let result = match_archetype(pattern, graph, policy);
        let mut samples = ArchetypeSamples::default();
        let mut seen_roles = BTreeSet::new();
        let mut seen_edges = BTreeSet::new();
        for emb in &result.embeddings {
            for (p, &v) in emb.iter().enumerate() {
                if seen_roles.insert((p, v)) {
                    samples
                        .role_speed_mps
                        .entry(pattern.nodes[p].role_name.clone())
                        .or_default()
                        .push(graph.nodes()[v].actor.long_speed_mps);
                }
            }
            for (k, e) in pattern.edges.iter().enumerate() {
                let (s, d) = (emb[e.src], emb[e.dst]);
                if !seen_edges.insert((k, s, d)) {
                    continue;
                }
                if let Some(edge) = graph
                    .out_edges(s)
                    .find(|x| x.dst == d && x.relation == e.relation)
                {
                    samples
                        .edge_path_length_m
                        .entry(pattern.edge_label(e))
                        .or_default()
                        .push(edge.path_length_m);
                }
            }
        }
        row.hits.push(result.matched);
        row.counts.push(result.embeddings.len());
        row.saturated.push(result.saturated);
        row.samples.push(samples);
    }
    row
}

/// Matches every archetype against every graph. Rows follow `graphs` order.
pub fn build_coverage_table(
    catalog: &ArchetypeCatalog,
    graphs: &[ActorGraph],
    policy: &MatchPolicy,
) -> CoverageTable {
    let rows: Vec<SceneRow> = graphs
        .par_iter()
        .map(|g| scene_row(catalog, g, policy))
        .collect();
    let mut samples: BTreeMap<String, ArchetypeSamples> = catalog
        .archetypes()
        .iter()
        .map(|a| (a.name.clone(), ArchetypeSamples::default()))
        .collect();
    let mut table = CoverageTable {
        scene_ids: graphs.iter().map(|g| g.scene_id.clone()).collect(),
        archetypes: catalog.names(),
        hits: Vec::with_capacity(rows.len()),
        embedding_counts: Vec::with_capacity(rows.len()),
        saturated: Vec::with_capacity(rows.len()),
        node_coverage: Vec::with_capacity(rows.len()),
        samples: BTreeMap::new(),
    };
    for row in rows {
        for (a, s) in catalog.archetypes().iter().zip(row.samples) {
            let acc = samples.get_mut(&a.name).expect("catalog name");
            for (k, v) in s.role_speed_mps {
                acc.role_speed_mps.entry(k).or_default().extend(v);
            }
            for (k, v) in s.edge_path_length_m {
                acc.edge_path_length_m.entry(k).or_default().extend(v);
            }
        }
        table.hits.push(row.hits);
        table.embedding_counts.push(row.counts);
        table.saturated.push(row.saturated);
        table.node_coverage.push(row.coverage);
    }
    table.samples = samples;
    table
}
