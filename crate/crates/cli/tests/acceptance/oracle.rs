//! Brute-force reference implementations. They work from plain data (lane
//! declarations, edge lists, sample vectors) and enumerate exhaustively
//! instead of searching.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use scenecov::actor_graph::{ActorGraph, ConstructionParams, RelationType};
use scenecov::archetype::Archetype;
use scenecov::lane_map::LaneDescription;
use scenecov::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Hop {
    Follow,
    Neighbor,
    Opposite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Kind {
    Lead,
    Neighbor,
    Opposite,
}

impl Kind {
    fn special(self) -> Option<Hop> {
        match self {
            Kind::Lead => None,
            Kind::Neighbor => Some(Hop::Neighbor),
            Kind::Opposite => Some(Hop::Opposite),
        }
    }

    /// Forward and backward discovery limits.
    fn limits(self, p: &ConstructionParams) -> (f64, f64) {
        match self {
            Kind::Lead => (p.max_distance_lead_veh_m, p.max_distance_lead_veh_m),
            Kind::Neighbor => (
                p.max_distance_neighbor_forward_m,
                p.max_distance_neighbor_backward_m,
            ),
            Kind::Opposite => (
                p.max_distance_opposite_forward_m,
                p.max_distance_opposite_backward_m,
            ),
        }
    }

    pub fn hops(self, p: &ConstructionParams) -> usize {
        match self {
            Kind::Lead => p.max_node_distance_leading,
            Kind::Neighbor => p.max_node_distance_neighbor,
            Kind::Opposite => p.max_node_distance_opposite,
        }
    }
}

/// Lane adjacency rebuilt from the declarations.
pub struct LaneTable {
    length: BTreeMap<u64, f64>,
    out: BTreeMap<u64, Vec<(u64, Hop)>>,
}

impl LaneTable {
    pub fn new(lanes: &[LaneDescription]) -> Self {
        let mut length = BTreeMap::new();
        let mut edges = BTreeSet::new();
        for l in lanes {
            let c = &l.centerline;
            let len: f64 = c
                .windows(2)
                .map(|w| {
                    ((w[1][0] - w[0][0]).powi(2)
                        + (w[1][1] - w[0][1]).powi(2)
                        + (w[1][2] - w[0][2]).powi(2))
                    .sqrt()
                })
                .sum();
            length.insert(l.id.0, len);
            for s in &l.successors {
                edges.insert((l.id.0, s.0, Hop::Follow));
            }
            for n in l.left_neighbors.iter().chain(&l.right_neighbors) {
                edges.insert((l.id.0, n.0, Hop::Neighbor));
                edges.insert((n.0, l.id.0, Hop::Neighbor));
            }
            for o in &l.opposites {
                edges.insert((l.id.0, o.0, Hop::Opposite));
                edges.insert((o.0, l.id.0, Hop::Opposite));
            }
        }
        let mut out: BTreeMap<u64, Vec<(u64, Hop)>> = BTreeMap::new();
        for (a, b, h) in edges {
            out.entry(a).or_default().push((b, h));
        }
        Self { length, out }
    }

    /// Every simple path from `from` to `to`, as (lanes, hops).
    fn all_paths(&self, from: u64, to: u64) -> Vec<(Vec<u64>, Vec<Hop>)> {
        let mut found = Vec::new();
        let mut lanes = vec![from];
        let mut hops = Vec::new();
        self.walk(to, &mut lanes, &mut hops, &mut found);
        found
    }

    fn walk(
        &self,
        to: u64,
        lanes: &mut Vec<u64>,
        hops: &mut Vec<Hop>,
        found: &mut Vec<(Vec<u64>, Vec<Hop>)>,
    ) {
        let at = *lanes.last().unwrap();
        if at == to {
            found.push((lanes.clone(), hops.clone()));
            return;
        }
        for &(next, hop) in self.out.get(&at).map(Vec::as_slice).unwrap_or(&[]) {
            if lanes.contains(&next) {
                continue;
            }
            lanes.push(next);
            hops.push(hop);
            self.walk(to, lanes, hops, found);
            lanes.pop();
            hops.pop();
        }
    }

    fn cost(&self, lanes: &[u64], hops: &[Hop]) -> f64 {
        hops.iter()
            .zip(lanes)
            .filter(|(h, _)| **h == Hop::Follow)
            .map(|(_, l)| self.length[l])
            .sum()
    }

    /// Signed distance from `s_from` on the first lane to `s_to` on the last.
    /// An opposite lane runs back from the far end of the lane it faces.
    fn signed_length(&self, lanes: &[u64], hops: &[Hop], s_from: f64, s_to: f64) -> f64 {
        let mut x = -s_from;
        let mut dir = 1.0;
        for (hop, lane) in hops.iter().zip(lanes) {
            match hop {
                Hop::Follow => x += dir * self.length[lane],
                Hop::Neighbor => {}
                Hop::Opposite => {
                    x += dir * self.length[lane];
                    dir = -dir;
                }
            }
        }
        x + dir * s_to
    }

    /// Cheapest path matching `kind` within `budget`, ties to the smallest
    /// lane sequence.
    pub fn best_path(
        &self,
        from: u64,
        to: u64,
        kind: Kind,
        budget: f64,
    ) -> Option<(Vec<u64>, Vec<Hop>, f64)> {
        let mut ok: Vec<(Vec<u64>, Vec<Hop>, f64)> = self
            .all_paths(from, to)
            .into_iter()
            .filter(|(_, hops)| {
                let specials: Vec<&Hop> = hops.iter().filter(|h| **h != Hop::Follow).collect();
                match kind.special() {
                    None => specials.is_empty(),
                    Some(s) => specials.len() == 1 && *specials[0] == s,
                }
            })
            .map(|(lanes, hops)| {
                let c = self.cost(&lanes, &hops);
                (lanes, hops, c)
            })
            .filter(|p| p.2 <= budget + 1e-9)
            .collect();
        let min = ok.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
        ok.retain(|p| p.2 <= min + 1e-9);
        ok.into_iter()
            .min_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    /// Actor indices; for lead relations `a` follows `b`.
    pub a: usize,
    pub b: usize,
    pub kind: Kind,
    pub pl: f64,
    pub lanes: Vec<u64>,
}

/// All-pairs relation discovery by exhaustive path enumeration.
pub fn discover(table: &LaneTable, scene: &Scene, p: &ConstructionParams) -> Vec<Relation> {
    let actors = &scene.actors;
    let mut order: Vec<usize> = (0..actors.len()).collect();
    order.sort_by(|&i, &j| actors[i].actor_id.cmp(&actors[j].actor_id));
    let mut out = Vec::new();
    for (k, &a) in order.iter().enumerate() {
        for &b in &order[k + 1..] {
            for kind in [Kind::Lead, Kind::Neighbor, Kind::Opposite] {
                let (fwd, back) = kind.limits(p);
                let mut best: Option<(f64, Relation)> = None;
                for (x, y) in [(a, b), (b, a)] {
                    let (lx, ly) = (actors[x].primary_lane.0, actors[y].primary_lane.0);
                    let budget = fwd.max(back) + table.length[&lx] + table.length[&ly];
                    let Some((lanes, hops, cost)) = table.best_path(lx, ly, kind, budget) else {
                        continue;
                    };
                    let pl = table.signed_length(&lanes, &hops, actors[x].s_m, actors[y].s_m);
                    if kind == Kind::Lead && pl < 0.0 {
                        continue;
                    }
                    if best.as_ref().map_or(true, |(c, _)| cost < c - 1e-9) {
                        best = Some((
                            cost,
                            Relation {
                                a: x,
                                b: y,
                                kind,
                                pl,
                                lanes,
                            },
                        ));
                    }
                }
                let Some((_, rel)) = best else { continue };
                let limit = if rel.pl >= 0.0 { fwd } else { back };
                let (pa, pb) = (actors[rel.a].position, actors[rel.b].position);
                let euclid =
                    ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2))
                        .sqrt();
                if rel.pl.abs() <= limit && euclid <= limit {
                    out.push(rel);
                }
            }
        }
    }
    out
}

/// Directed typed edge `(src, dst, relation)` with its path length.
pub type Edge = (usize, usize, RelationType, f64);

pub fn hop_path_exists(edges: &[Edge], n: usize, src: usize, dst: usize, max_hops: usize) -> bool {
    let mut depth = vec![usize::MAX; n];
    depth[src] = 0;
    let mut queue = VecDeque::from([src]);
    while let Some(v) = queue.pop_front() {
        if v == dst {
            return true;
        }
        if depth[v] == max_hops {
            continue;
        }
        for e in edges.iter().filter(|e| e.0 == v) {
            if depth[e.1] == usize::MAX {
                depth[e.1] = depth[v] + 1;
                queue.push_back(e.1);
            }
        }
    }
    false
}

/// Replays hierarchical insertion: lead, then neighbor, then opposite, each
/// by |path length| with actor-id tie-breaks, skipping redundant directions.
pub fn construct(scene: &Scene, relations: &[Relation], p: &ConstructionParams) -> Vec<Edge> {
    let n = scene.actors.len();
    let mut edges: Vec<Edge> = Vec::new();
    if n < 2 {
        return edges;
    }
    let id = |i: usize| scene.actors[i].actor_id.clone();
    for kind in [Kind::Lead, Kind::Neighbor, Kind::Opposite] {
        let mut stage: Vec<&Relation> = relations.iter().filter(|r| r.kind == kind).collect();
        stage.sort_by(|x, y| {
            x.pl.abs()
                .total_cmp(&y.pl.abs())
                .then(id(x.a).cmp(&id(y.a)))
                .then(id(x.b).cmp(&id(y.b)))
        });
        let k = kind.hops(p);
        for r in stage {
            let fwd_free = !hop_path_exists(&edges, n, r.a, r.b, k);
            let back_free = !hop_path_exists(&edges, n, r.b, r.a, k);
            let (add_f, add_b) = if kind == Kind::Opposite {
                (fwd_free && back_free, fwd_free && back_free)
            } else {
                (fwd_free, back_free)
            };
            let (rf, rb, plb) = match kind {
                Kind::Lead => (
                    RelationType::LeadingVehicle,
                    RelationType::FollowingLead,
                    -r.pl,
                ),
                Kind::Neighbor => (
                    RelationType::NeighborVehicle,
                    RelationType::NeighborVehicle,
                    -r.pl,
                ),
                Kind::Opposite => (
                    RelationType::OppositeVehicle,
                    RelationType::OppositeVehicle,
                    r.pl,
                ),
            };
            if add_f {
                edges.push((r.a, r.b, rf, r.pl));
            }
            if add_b {
                edges.push((r.b, r.a, rb, plb));
            }
        }
    }
    edges
}

pub fn graph_edges(g: &ActorGraph) -> Vec<Edge> {
    g.edges()
        .iter()
        .map(|e| (e.src, e.dst, e.relation, e.path_length_m))
        .collect()
}

fn weak_labels(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra] = rb;
    }
    (0..n).map(|x| find(&mut parent, x)).collect()
}

/// Every injective node assignment satisfying the pattern, in lexicographic
/// order of the assignment vectors.
pub fn brute_embeddings(pattern: &Archetype, g: &ActorGraph) -> Vec<Vec<usize>> {
    let n = g.node_count();
    let k = pattern.nodes.len();
    let edges: HashSet<(usize, usize, RelationType)> = g
        .edges()
        .iter()
        .map(|e| (e.src, e.dst, e.relation))
        .collect();
    let pairs: Vec<(usize, usize)> = g.edges().iter().map(|e| (e.src, e.dst)).collect();
    let label = weak_labels(n, &pairs);
    let node_ok = |p: usize, v: usize| {
        let c = &pattern.nodes[p].constraints;
        let node = &g.nodes()[v];
        c.actor_type.map_or(true, |t| t == node.actor.actor_type)
            && c.on_intersection
                .map_or(true, |b| b == node.on_intersection)
            && c.changed_lane
                .map_or(true, |b| b == node.actor.changed_lane)
    };
    let mut out = Vec::new();
    let mut assign = vec![0usize; k];
    fn rec(
        depth: usize,
        k: usize,
        n: usize,
        assign: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
        accept: &dyn Fn(&[usize]) -> bool,
    ) {
        if depth == k {
            if accept(assign) {
                out.push(assign.clone());
            }
            return;
        }
        for v in 0..n {
            if assign[..depth].contains(&v) {
                continue;
            }
            assign[depth] = v;
            rec(depth + 1, k, n, assign, out, accept);
        }
    }
    let accept = |m: &[usize]| {
        if !(0..k).all(|p| node_ok(p, m[p])) {
            return false;
        }
        if !pattern
            .edges
            .iter()
            .all(|e| edges.contains(&(m[e.src], m[e.dst], e.relation)))
        {
            return false;
        }
        if pattern.isolation_required {
            let comp = label[m[0]];
            let size = label.iter().filter(|&&l| l == comp).count();
            if size != k || m.iter().any(|&v| label[v] != comp) {
                return false;
            }
        }
        true
    };
    if k <= n {
        rec(0, k, n, &mut assign, &mut out, &accept);
    }
    out
}

/// Shared-bin histogram flags: bins anchored at a multiple of `w` at or below
/// the smallest sample of either set.
pub fn hole_flags(reference: &[f64], test: &[f64], w: f64, min_ref: f64, ratio: f64) -> Vec<bool> {
    let all: Vec<f64> = reference.iter().chain(test).copied().collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = (lo / w).floor() * w;
    let bins = ((hi - start) / w).floor() as usize + 1;
    // count by explicit bin edges; the top bin is closed
    let density = |xs: &[f64]| {
        (0..bins)
            .map(|i| {
                let lo = start + i as f64 * w;
                let hi = start + (i + 1) as f64 * w;
                let c = xs
                    .iter()
                    .filter(|&&x| x >= lo && (x < hi || i == bins - 1))
                    .count();
                if xs.is_empty() {
                    0.0
                } else {
                    c as f64 / xs.len() as f64
                }
            })
            .collect::<Vec<f64>>()
    };
    let (r, t) = (density(reference), density(test));
    r.iter()
        .zip(&t)
        .map(|(&r, &t)| r >= min_ref && t < ratio * r)
        .collect()
}
