//! Directed lane multigraph with following, neighbor and opposite relations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point2, Point3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LaneId(pub u64);

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MapEdgeType {
    Following,
    Neighbor,
    Opposite,
}

/// One lane record of the map interchange format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneDescription {
    pub id: LaneId,
    pub centerline: Vec<Point3>,
    pub left_boundary: Vec<Point3>,
    pub right_boundary: Vec<Point3>,
    #[serde(default)]
    pub successors: Vec<LaneId>,
    #[serde(default)]
    pub left_neighbors: Vec<LaneId>,
    #[serde(default)]
    pub right_neighbors: Vec<LaneId>,
    #[serde(default)]
    pub opposites: Vec<LaneId>,
    #[serde(default)]
    pub is_intersection: bool,
    #[serde(default)]
    pub road_type: String,
    #[serde(default)]
    pub lane_type: String,
}

/// Envelope of a map interchange document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDocument {
    pub format: String,
    pub version: u32,
    pub map_id: String,
    pub lanes: Vec<LaneDescription>,
}

impl MapDocument {
    pub const FORMAT: &'static str = "scenecov-map";
    pub const VERSION: u32 = 1;

    pub fn new(map_id: impl Into<String>, lanes: Vec<LaneDescription>) -> Self {
        Self {
            format: Self::FORMAT.to_string(),
            version: Self::VERSION,
            map_id: map_id.into(),
            lanes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: LaneId,
    pub centerline: Vec<Point3>,
    pub left_boundary: Vec<Point3>,
    pub right_boundary: Vec<Point3>,
    pub length_m: f64,
    pub is_intersection: bool,
    pub road_type: String,
    pub lane_type: String,
}

impl Lane {
    pub fn footprint(&self) -> Vec<Point2> {
        geometry::lane_footprint(&self.left_boundary, &self.right_boundary)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MapEdge {
    pub src: LaneId,
    pub dst: LaneId,
    pub kind: MapEdgeType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneMapGraph {
    pub map_id: String,
    lanes: BTreeMap<LaneId, Lane>,
    edges: Vec<MapEdge>,
    // outgoing (dst, kind), sorted by dst then kind
    out: BTreeMap<LaneId, Vec<(LaneId, MapEdgeType)>>,
}

/// Which non-following edge a lane path may contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathPattern {
    AllFollowing,
    ExactlyOneNeighbor,
    ExactlyOneOpposite,
}

impl PathPattern {
    fn special(self) -> Option<MapEdgeType> {
        match self {
            PathPattern::AllFollowing => None,
            PathPattern::ExactlyOneNeighbor => Some(MapEdgeType::Neighbor),
            PathPattern::ExactlyOneOpposite => Some(MapEdgeType::Opposite),
        }
    }

    /// Whether a sequence of edge types is an instance of this pattern.
    pub fn accepts(self, edges: &[MapEdgeType]) -> bool {
        let specials: Vec<_> = edges
            .iter()
            .filter(|e| **e != MapEdgeType::Following)
            .collect();
        match self.special() {
            None => specials.is_empty(),
            Some(kind) => specials.len() == 1 && *specials[0] == kind,
        }
    }
}

/// A simple path through the lane graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanePath {
    pub lanes: Vec<LaneId>,
    pub edges: Vec<MapEdgeType>,
    /// Accumulated length of the lanes left through following edges.
    pub cost_m: f64,
}

impl LanePath {
    pub fn from(&self) -> LaneId {
        self.lanes[0]
    }

    pub fn to(&self) -> LaneId {
        *self.lanes.last().expect("lane path is never empty")
    }
}

/// A lane whose footprint could not be used for overlap detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkWarning {
    pub lane: LaneId,
    pub reason: String,
}

/// Minimum overlap area for two lanes to count as crossing.
pub const OVERLAP_AREA_EPS_M2: f64 = 1e-3;

const LENGTH_REL_TOL: f64 = 1e-6;

/// Builds the lane graph from interchange records.
pub fn build_map(map_id: impl Into<String>, lanes: &[LaneDescription]) -> Result<LaneMapGraph> {
    if lanes.is_empty() {
        return Err(Error::EmptyMap);
    }
    let mut nodes = BTreeMap::new();
    for desc in lanes {
        if desc.centerline.len() < 2 {
            return Err(Error::InvalidLane {
                lane: desc.id,
                reason: "centerline needs at least 2 points".into(),
            });
        }
        let length_m = geometry::polyline_length(&desc.centerline);
        if !(length_m > 0.0) || !length_m.is_finite() {
            return Err(Error::InvalidLane {
                lane: desc.id,
                reason: "centerline has zero length".into(),
            });
        }
        let lane = Lane {
            id: desc.id,
            centerline: desc.centerline.clone(),
            left_boundary: desc.left_boundary.clone(),
            right_boundary: desc.right_boundary.clone(),
            length_m,
            is_intersection: desc.is_intersection,
            road_type: desc.road_type.clone(),
            lane_type: desc.lane_type.clone(),
        };
        if nodes.insert(desc.id, lane).is_some() {
            return Err(Error::DuplicateLane(desc.id));
        }
    }

    let mut edges = BTreeSet::new();
    for desc in lanes {
        let groups: [(&'static str, &[LaneId], MapEdgeType); 4] = [
            ("successors", &desc.successors, MapEdgeType::Following),
            (
                "left_neighbors",
                &desc.left_neighbors,
                MapEdgeType::Neighbor,
            ),
            (
                "right_neighbors",
                &desc.right_neighbors,
                MapEdgeType::Neighbor,
            ),
            ("opposites", &desc.opposites, MapEdgeType::Opposite),
        ];
        for (field, ids, kind) in groups {
            for &other in ids {
                if !nodes.contains_key(&other) {
                    return Err(Error::DanglingLane {
                        lane: desc.id,
                        missing: other,
                        field,
                    });
                }
                if other == desc.id {
                    return Err(Error::InvalidLane {
                        lane: desc.id,
                        reason: format!("lane lists itself in `{field}`"),
                    });
                }
                edges.insert(MapEdge {
                    src: desc.id,
                    dst: other,
                    kind,
                });
                if kind != MapEdgeType::Following {
                    edges.insert(MapEdge {
                        src: other,
                        dst: desc.id,
                        kind,
                    });
                }
            }
        }
    }
    Ok(LaneMapGraph::from_parts(
        map_id.into(),
        nodes,
        edges.into_iter().collect(),
    ))
}

impl LaneMapGraph {
    fn from_parts(map_id: String, lanes: BTreeMap<LaneId, Lane>, edges: Vec<MapEdge>) -> Self {
        let mut out: BTreeMap<LaneId, Vec<(LaneId, MapEdgeType)>> =
            lanes.keys().map(|id| (*id, Vec::new())).collect();
        for e in &edges {
            out.get_mut(&e.src)
                .expect("validated endpoint")
                .push((e.dst, e.kind));
        }
        for list in out.values_mut() {
            list.sort();
        }
        Self {
            map_id,
            lanes,
            edges,
            out,
        }
    }

    pub fn lane(&self, id: LaneId) -> Option<&Lane> {
        self.lanes.get(&id)
    }

    pub fn lanes(&self) -> impl Iterator<Item = &Lane> {
        self.lanes.values()
    }

    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }

    pub fn edges(&self) -> &[MapEdge] {
        &self.edges
    }

    pub fn outgoing(&self, id: LaneId) -> &[(LaneId, MapEdgeType)] {
        self.out.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn has_edge(&self, src: LaneId, dst: LaneId, kind: MapEdgeType) -> bool {
        self.outgoing(src).binary_search(&(dst, kind)).is_ok()
    }

    pub fn successors(&self, id: LaneId) -> impl Iterator<Item = LaneId> + '_ {
        self.outgoing(id)
            .iter()
            .filter(|(_, k)| *k == MapEdgeType::Following)
            .map(|(d, _)| *d)
    }

    fn require(&self, id: LaneId) -> Result<&Lane> {
        self.lanes.get(&id).ok_or(Error::UnknownLane(id))
    }

    /// Converts back to interchange records. Neighbor side information is not
    /// kept in the graph, so all neighbors are emitted as left neighbors.
    pub fn to_descriptions(&self) -> Vec<LaneDescription> {
        self.lanes
            .values()
            .map(|lane| {
                let pick = |kind| {
                    self.outgoing(lane.id)
                        .iter()
                        .filter(|(_, k)| *k == kind)
                        .map(|(d, _)| *d)
                        .collect::<Vec<_>>()
                };
                LaneDescription {
                    id: lane.id,
                    centerline: lane.centerline.clone(),
                    left_boundary: lane.left_boundary.clone(),
                    right_boundary: lane.right_boundary.clone(),
                    successors: pick(MapEdgeType::Following),
                    left_neighbors: pick(MapEdgeType::Neighbor),
                    right_neighbors: Vec::new(),
                    opposites: pick(MapEdgeType::Opposite),
                    is_intersection: lane.is_intersection,
                    road_type: lane.road_type.clone(),
                    lane_type: lane.lane_type.clone(),
                }
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(
            path,
            &MapDocument::new(self.map_id.clone(), self.to_descriptions()),
        )
    }

    /// Reads a map document, builds the graph and marks intersections.
    pub fn load(path: &Path) -> Result<(LaneMapGraph, Vec<MarkWarning>)> {
        let doc: MapDocument = crate::io::read_json(path)?;
        if doc.format != MapDocument::FORMAT {
            return Err(Error::Schema {
                index: 0,
                field: "format".into(),
                reason: format!("expected `{}`, got `{}`", MapDocument::FORMAT, doc.format),
            });
        }
        Ok(build_map(doc.map_id, &doc.lanes)?.mark_intersections())
    }

    /// Flags lanes whose footprints overlap a non-adjacent lane.
    ///
    /// Existing flags are preserved. Lanes with a degenerate footprint are
    /// skipped and reported.
    pub fn mark_intersections(&self) -> (LaneMapGraph, Vec<MarkWarning>) {
        let mut warnings = Vec::new();
        let footprints: Vec<(LaneId, Vec<Point2>)> = self
            .lanes
            .values()
            .filter_map(|lane| {
                let ring = lane.footprint();
                if ring.len() < 3 || geometry::signed_area(&ring).abs() < OVERLAP_AREA_EPS_M2 {
                    warnings.push(MarkWarning {
                        lane: lane.id,
                        reason: "degenerate footprint polygon".into(),
                    });
                    None
                } else {
                    Some((lane.id, ring))
                }
            })
            .collect();

        let bbox = |ring: &[Point2]| {
            ring.iter().fold(
                [
                    f64::INFINITY,
                    f64::INFINITY,
                    f64::NEG_INFINITY,
                    f64::NEG_INFINITY,
                ],
                |b, p| {
                    [
                        b[0].min(p[0]),
                        b[1].min(p[1]),
                        b[2].max(p[0]),
                        b[3].max(p[1]),
                    ]
                },
            )
        };
        let boxes: Vec<[f64; 4]> = footprints.iter().map(|(_, r)| bbox(r)).collect();

        let mut flagged = BTreeSet::new();
        for i in 0..footprints.len() {
            for j in (i + 1)..footprints.len() {
                let (a, b) = (&boxes[i], &boxes[j]);
                if a[2] < b[0] || b[2] < a[0] || a[3] < b[1] || b[3] < a[1] {
                    continue;
                }
                let (ia, ra) = &footprints[i];
                let (ib, rb) = &footprints[j];
                if self.adjacent_for_overlap(*ia, *ib) {
                    continue;
                }
                if geometry::intersection_area(ra, rb) > OVERLAP_AREA_EPS_M2 {
                    flagged.insert(*ia);
                    flagged.insert(*ib);
                }
            }
        }

        let mut lanes = self.lanes.clone();
        for id in flagged {
            lanes.get_mut(&id).expect("known lane").is_intersection = true;
        }
        (
            LaneMapGraph::from_parts(self.map_id.clone(), lanes, self.edges.clone()),
            warnings,
        )
    }

    fn adjacent_for_overlap(&self, a: LaneId, b: LaneId) -> bool {
        [MapEdgeType::Following, MapEdgeType::Neighbor]
            .into_iter()
            .any(|k| self.has_edge(a, b, k) || self.has_edge(b, a, k))
    }

    /// Shortest simple lane path from `from` to `to` whose edge types match
    /// `pattern` and whose cost does not exceed `max_len_m`.
    ///
    /// Following edges cost the length of the lane they leave; neighbor and
    /// opposite hops are lateral and cost nothing. Equal-cost paths resolve to
    /// the lexicographically smallest lane sequence.
    pub fn find_lane_path(
        &self,
        from: LaneId,
        to: LaneId,
        max_len_m: f64,
        pattern: PathPattern,
    ) -> Result<Option<LanePath>> {
        self.require(from)?;
        self.require(to)?;
        if !(max_len_m > 0.0) {
            return Err(Error::param("max_len_m", "must be positive"));
        }
        if from == to {
            return Ok(match pattern {
                PathPattern::AllFollowing => Some(LanePath {
                    lanes: vec![from],
                    edges: Vec::new(),
                    cost_m: 0.0,
                }),
                _ => None,
            });
        }
        let mut search = PathSearch {
            map: self,
            target: to,
            budget: max_len_m,
            special: pattern.special(),
            lanes: vec![from],
            edges: Vec::new(),
            visited: BTreeSet::from([from]),
            best: None,
        };
        search.dfs(from, 0.0, false);
        Ok(search.best)
    }

    /// Signed longitudinal distance from `s_from` on the first lane of `path`
    /// to `s_to` on its last lane, measured in the travel direction of the
    /// first lane. Positive means the target is ahead.
    ///
    /// Neighbor lanes are taken to start abreast; an opposite lane is taken to
    /// start where the lane it is opposite to ends.
    pub fn path_length_between(&self, path: &LanePath, s_from: f64, s_to: f64) -> Result<f64> {
        let first = self.require(path.from())?;
        let last = self.require(path.to())?;
        check_s(first, s_from)?;
        check_s(last, s_to)?;
        // start of the current lane relative to the origin, and its orientation
        let mut offset = -s_from;
        let mut orientation = 1.0;
        for (i, kind) in path.edges.iter().enumerate() {
            let current = self.require(path.lanes[i])?;
            match kind {
                MapEdgeType::Following => offset += orientation * current.length_m,
                MapEdgeType::Neighbor => {}
                MapEdgeType::Opposite => {
                    offset += orientation * current.length_m;
                    orientation = -orientation;
                }
            }
        }
        Ok(offset + orientation * s_to)
    }

    /// Checks the structural invariants; used by tests and after loading.
    pub fn validate(&self) -> Result<()> {
        for lane in self.lanes.values() {
            let arc = geometry::polyline_length(&lane.centerline);
            if (arc - lane.length_m).abs() > LENGTH_REL_TOL * arc.max(1.0) {
                return Err(Error::InvalidLane {
                    lane: lane.id,
                    reason: "length does not match centerline".into(),
                });
            }
        }
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            if !self.lanes.contains_key(&e.src) || !self.lanes.contains_key(&e.dst) {
                return Err(Error::UnknownLane(e.dst));
            }
            if !seen.insert(*e) {
                return Err(Error::InvalidLane {
                    lane: e.src,
                    reason: "duplicate edge".into(),
                });
            }
            if e.kind != MapEdgeType::Following && !self.has_edge(e.dst, e.src, e.kind) {
                return Err(Error::InvalidLane {
                    lane: e.src,
                    reason: format!("{:?} edge to {} is not symmetric", e.kind, e.dst),
                });
            }
        }
        Ok(())
    }
}

fn check_s(lane: &Lane, s: f64) -> Result<()> {
    let tol = 1e-9 * lane.length_m.max(1.0);
    if !(s >= -tol && s <= lane.length_m + tol) {
        return Err(Error::PositionOutOfRange {
            lane: lane.id,
            s,
            length: lane.length_m,
        });
    }
    Ok(())
}

const COST_TIE_EPS: f64 = 1e-9;

struct PathSearch<'a> {
    map: &'a LaneMapGraph,
    target: LaneId,
    budget: f64,
    special: Option<MapEdgeType>,
    lanes: Vec<LaneId>,
    edges: Vec<MapEdgeType>,
    visited: BTreeSet<LaneId>,
    best: Option<LanePath>,
}

impl PathSearch<'_> {
    // Pre-order DFS over neighbors in ascending id order visits simple paths in
    // lexicographic order, so only strictly cheaper paths replace the incumbent.
    fn dfs(&mut self, at: LaneId, cost: f64, used_special: bool) {
        let step_cost = self.map.lanes[&at].length_m;
        for &(next, kind) in self.map.outgoing(at) {
            if self.visited.contains(&next) {
                continue;
            }
            let (next_cost, next_used) = match kind {
                MapEdgeType::Following => (cost + step_cost, used_special),
                k if Some(k) == self.special && !used_special => (cost, true),
                _ => continue,
            };
            if next_cost > self.budget + COST_TIE_EPS {
                continue;
            }
            if let Some(best) = &self.best {
                if next_cost >= best.cost_m - COST_TIE_EPS {
                    continue;
                }
            }
            self.lanes.push(next);
            self.edges.push(kind);
            if next == self.target {
                if self.special.is_none() || next_used {
                    self.best = Some(LanePath {
                        lanes: self.lanes.clone(),
                        edges: self.edges.clone(),
                        cost_m: next_cost,
                    });
                }
            } else {
                self.visited.insert(next);
                self.dfs(next, next_cost, next_used);
                self.visited.remove(&next);
            }
            self.lanes.pop();
            self.edges.pop();
        }
    }
}
