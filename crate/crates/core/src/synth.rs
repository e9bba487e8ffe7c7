//! Synthetic corridor maps and scenes with planted archetypes.
//!
//! A corridor is a row of 50 m segments, each carrying two eastbound lanes
//! (`E1` inner, `E2` outer) and one westbound lane `W` opposite `E1`. The
//! corridor is cut into 500 m slots. Junction templates put a crossing road
//! over segment 5 of every slot, which flags that segment's lanes as
//! intersection lanes. Each planted instance or filler actor gets a slot of
//! its own, so instances are more than 100 m apart and never interact.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::archetype::ArchetypeCatalog;
use crate::error::{Error, Result};
use crate::lane_map::{build_map, LaneDescription, LaneId, LaneMapGraph};
use crate::scene::{ActorState, ActorType, DatasetRole, Scene, SceneSet};

pub const SEGMENT_M: f64 = 50.0;
pub const LANE_WIDTH_M: f64 = 3.5;
const SEGMENTS_PER_SLOT: usize = 10;
const SLOT_M: f64 = SEGMENT_M * SEGMENTS_PER_SLOT as f64;
/// Slot-local start of the junction segment.
const JUNCTION_X: f64 = 250.0;
const JUNCTION_SEGMENT: usize = 5;
/// Slot-local anchor range for instances off the junction.
const OPEN_ANCHOR: (f64, f64) = (100.0, 120.0);
const FILLER_X: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MapTemplate {
    #[serde(rename = "straight-multilane")]
    StraightMultilane,
    #[serde(rename = "T-junction", alias = "t-junction")]
    TJunction,
    #[serde(rename = "crossroads")]
    Crossroads,
}

impl MapTemplate {
    pub fn as_str(self) -> &'static str {
        match self {
            MapTemplate::StraightMultilane => "straight-multilane",
            MapTemplate::TJunction => "T-junction",
            MapTemplate::Crossroads => "crossroads",
        }
    }

    pub fn has_junctions(self) -> bool {
        self != MapTemplate::StraightMultilane
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lane {
    E1,
    E2,
    W,
}

impl Lane {
    fn y(self) -> f64 {
        match self {
            Lane::E1 => -0.5 * LANE_WIDTH_M,
            Lane::E2 => -1.5 * LANE_WIDTH_M,
            Lane::W => 0.5 * LANE_WIDTH_M,
        }
    }

    fn id(self, segment: usize) -> LaneId {
        let k = match self {
            Lane::E1 => 1,
            Lane::E2 => 2,
            Lane::W => 3,
        };
        LaneId(10 * segment as u64 + k)
    }
}

fn straight_lane(id: LaneId, from: [f64; 2], to: [f64; 2]) -> LaneDescription {
    let (dx, dy) = (to[0] - from[0], to[1] - from[1]);
    let len = (dx * dx + dy * dy).sqrt();
    // left normal of the travel direction
    let (nx, ny) = (
        -dy / len * 0.5 * LANE_WIDTH_M,
        dx / len * 0.5 * LANE_WIDTH_M,
    );
    let offset = |p: [f64; 2], k: f64| [p[0] + k * nx, p[1] + k * ny, 0.0];
    LaneDescription {
        id,
        centerline: vec![[from[0], from[1], 0.0], [to[0], to[1], 0.0]],
        left_boundary: vec![offset(from, 1.0), offset(to, 1.0)],
        right_boundary: vec![offset(from, -1.0), offset(to, -1.0)],
        successors: vec![],
        left_neighbors: vec![],
        right_neighbors: vec![],
        opposites: vec![],
        is_intersection: false,
        road_type: "urban".into(),
        lane_type: "driving".into(),
    }
}

/// Corridor map with `slots` slots, intersection flags already marked.
pub fn corridor_map(template: MapTemplate, slots: usize) -> Result<LaneMapGraph> {
    if slots == 0 {
        return Err(Error::param("slots", "must be positive"));
    }
    let segments = slots * SEGMENTS_PER_SLOT;
    let mut lanes = Vec::with_capacity(segments * 3 + 2 * slots);
    for k in 0..segments {
        let (x0, x1) = (k as f64 * SEGMENT_M, (k + 1) as f64 * SEGMENT_M);
        let mut e1 = straight_lane(Lane::E1.id(k), [x0, Lane::E1.y()], [x1, Lane::E1.y()]);
        let mut e2 = straight_lane(Lane::E2.id(k), [x0, Lane::E2.y()], [x1, Lane::E2.y()]);
        let mut w = straight_lane(Lane::W.id(k), [x1, Lane::W.y()], [x0, Lane::W.y()]);
        if k + 1 < segments {
            e1.successors.push(Lane::E1.id(k + 1));
            e2.successors.push(Lane::E2.id(k + 1));
        }
        if k > 0 {
            w.successors.push(Lane::W.id(k - 1));
        }
        e1.right_neighbors.push(Lane::E2.id(k));
        e1.opposites.push(Lane::W.id(k));
        lanes.extend([e1, e2, w]);
        if template.has_junctions() && k % SEGMENTS_PER_SLOT == JUNCTION_SEGMENT {
            let xc = x0 + 0.5 * SEGMENT_M;
            let south = if template == MapTemplate::Crossroads {
                -60.0
            } else {
                -2.0 * LANE_WIDTH_M
            };
            let (a, b) = (LaneId(10 * k as u64 + 4), LaneId(10 * k as u64 + 5));
            let mut north = straight_lane(
                a,
                [xc + 0.5 * LANE_WIDTH_M, south],
                [xc + 0.5 * LANE_WIDTH_M, 60.0],
            );
            let southbound = straight_lane(
                b,
                [xc - 0.5 * LANE_WIDTH_M, 60.0],
                [xc - 0.5 * LANE_WIDTH_M, south],
            );
            north.opposites.push(b);
            lanes.extend([north, southbound]);
        }
    }
    let map = build_map(format!("synth-{}-{slots}", template.as_str()), &lanes)?;
    Ok(map.mark_intersections().0)
}

/// Generator parameters for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub template: MapTemplate,
    pub slots: usize,
    pub scenes: usize,
    pub actors_min: usize,
    pub actors_max: usize,
    pub instances_min: usize,
    pub instances_max: usize,
    /// Archetype name to relative weight; empty means every feasible archetype, equally.
    pub mix: BTreeMap<String, f64>,
    pub speed_mean_mps: f64,
    pub speed_std_mps: f64,
    pub seed: u64,
    pub label: DatasetRole,
    pub source_tag: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            template: MapTemplate::Crossroads,
            slots: 16,
            scenes: 100,
            actors_min: 2,
            actors_max: 12,
            instances_min: 1,
            instances_max: 2,
            mix: BTreeMap::new(),
            speed_mean_mps: 10.0,
            speed_std_mps: 3.0,
            seed: 0,
            label: DatasetRole::Ref,
            source_tag: "synth".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedInstance {
    pub archetype: String,
    /// Role name to actor id.
    pub roles: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLabels {
    pub scene_id: String,
    pub planted: Vec<PlantedInstance>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub map: LaneMapGraph,
    pub scenes: SceneSet,
    pub labels: Vec<SceneLabels>,
}

struct Placement {
    role: &'static str,
    lane: Lane,
    x: f64,
    changed_lane: bool,
}

fn at(role: &'static str, lane: Lane, x: f64) -> Placement {
    Placement {
        role,
        lane,
        x,
        changed_lane: false,
    }
}

fn cutter(lane: Lane, x: f64) -> Placement {
    Placement {
        role: "cutter",
        lane,
        x,
        changed_lane: true,
    }
}

/// Slot-local placements realizing `name`. Offsets keep every planted
/// relation discoverable and every unwanted one either out of range or
/// pruned as redundant during construction.
/// Ego somewhere in the junction segment with `room` metres ahead still on it.
fn junction(rng: &mut ChaCha8Rng, room: f64) -> f64 {
    JUNCTION_X + rng.gen_range(2.0..(SEGMENT_M - 2.0 - room).max(2.5))
}

fn plant(name: &str, rng: &mut ChaCha8Rng) -> Result<Vec<Placement>> {
    let open = rng.gen_range(OPEN_ANCHOR.0..OPEN_ANCHOR.1);
    use Lane::*;
    let p = match name {
        "simple_following" => {
            let lane = if rng.gen_bool(0.5) { E1 } else { E2 };
            vec![
                at("ego", lane, open),
                at("lead", lane, open + rng.gen_range(10.0..60.0)),
            ]
        }
        "simple_opposite" => vec![
            at("ego", E1, open),
            at("opposite", W, open + rng.gen_range(5.0..60.0)),
        ],
        "simple_neighbor" => vec![
            at("ego", E1, open),
            at("neighbor", E2, open + rng.gen_range(-10.0..10.0)),
        ],
        "lead_neighbor" => {
            let d1 = rng.gen_range(12.0..30.0);
            let d2 = rng.gen_range(-6.0..3.0);
            vec![
                at("ego", E1, open),
                at("lead", E1, open + d1),
                at("neighbor", E2, open + d2),
            ]
        }
        "lead_neighbor_intersection" => {
            let d1 = rng.gen_range(12.0..25.0);
            let x = junction(rng, d1);
            let d2 = rng.gen_range(-6.0..3.0);
            vec![
                at("ego", E1, x),
                at("lead", E1, x + d1),
                at("neighbor", E2, x + d2),
            ]
        }
        "lead_neighbor_at_intersection" => {
            let d1 = rng.gen_range(12.0..25.0);
            let x = JUNCTION_X + rng.gen_range(7.0..(SEGMENT_M - 2.0 - d1));
            let d2 = rng.gen_range(-6.0..3.0);
            vec![
                at("ego", E1, x),
                at("lead", E1, x + d1),
                at("neighbor", E2, x + d2),
            ]
        }
        "cut_in" => {
            let (d1, d2) = (rng.gen_range(10.0..30.0), rng.gen_range(10.0..30.0));
            vec![
                at("ego", E1, open),
                cutter(E1, open + d1),
                at("lead", E1, open + d1 + d2),
            ]
        }
        "cut_in_intersection" => {
            let d1 = rng.gen_range(10.0..25.0);
            let x = junction(rng, d1);
            let d2 = rng.gen_range(10.0..30.0);
            vec![
                at("ego", E1, x),
                cutter(E1, x + d1),
                at("lead", E1, x + d1 + d2),
            ]
        }
        "lead_following_back" => {
            let (d1, d2) = (rng.gen_range(10.0..30.0), rng.gen_range(10.0..30.0));
            vec![
                at("follower", E1, open - d1),
                at("ego", E1, open),
                at("lead", E1, open + d2),
            ]
        }
        "platoon_intersection" => {
            let (d1, d2) = (rng.gen_range(10.0..20.0), rng.gen_range(10.0..20.0));
            let x = junction(rng, d1 + d2);
            vec![
                at("ego", E1, x),
                at("middle", E1, x + d1),
                at("lead", E1, x + d1 + d2),
            ]
        }
        "opposite_traffic_intersection" => {
            let d1 = rng.gen_range(15.0..40.0);
            let d2 = rng.gen_range(-8.0..(0.5 * d1 - 0.5));
            let x = junction(rng, 0.0);
            vec![
                at("ego", E1, x),
                at("lead", E1, x + d1),
                at("opposite", W, x + d2),
            ]
        }
        "triple_opposite_intersection" => {
            let x = junction(rng, 0.0);
            vec![
                at("ego", E1, x),
                at("opposite_1", W, x + rng.gen_range(93.5..99.0)),
                at("opposite_2", W, x + rng.gen_range(-9.3..-8.0)),
            ]
        }
        "cut_out" | "cut_out_intersection" => {
            let (d1, d2, d3) = (
                rng.gen_range(10.0..20.0),
                rng.gen_range(15.0..30.0),
                rng.gen_range(-3.0..3.0),
            );
            let x = if name == "cut_out" {
                open
            } else {
                junction(rng, d1)
            };
            vec![
                at("ego", E1, x),
                cutter(E1, x + d1),
                at("front", E1, x + d1 + d2),
                at("adjacent", E2, x + d1 + d3),
            ]
        }
        "platoon4_intersection" => {
            let d: Vec<f64> = (0..3).map(|_| rng.gen_range(8.0..14.0)).collect();
            let x = junction(rng, d.iter().sum());
            vec![
                at("ego", E1, x),
                at("second", E1, x + d[0]),
                at("third", E1, x + d[0] + d[1]),
                at("lead", E1, x + d[0] + d[1] + d[2]),
            ]
        }
        "opposite4_intersection" => {
            let d1 = rng.gen_range(30.0..45.0);
            let (e1, e2) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let x = junction(rng, 0.0);
            vec![
                at("ego", E1, x),
                at("lead", E1, x + d1),
                at("opposite_1", W, x + e1),
                at("opposite_2", W, x + d1 + e2),
            ]
        }
        "lead_neighbor_opposite" | "lead_neighbor_opposite_intersection" => {
            let (d0, d1) = (rng.gen_range(10.0..20.0), rng.gen_range(10.0..20.0));
            let (dn, dop) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let x = if name == "lead_neighbor_opposite" {
                open
            } else {
                junction(rng, 0.0)
            };
            vec![
                at("follower", E1, x - d0),
                at("ego", E1, x),
                at("lead", E1, x + d1),
                at("neighbor", E2, x + dn),
                at("opposite", W, x + dop),
            ]
        }
        other => {
            return Err(Error::param(
                "mix",
                format!("no placement rule for archetype `{other}`"),
            ))
        }
    };
    Ok(p)
}

/// Lane id and longitudinal position for a corridor x coordinate.
fn locate(lane: Lane, x: f64, segments: usize) -> (LaneId, f64) {
    match lane {
        Lane::E1 | Lane::E2 => {
            let k = ((x / SEGMENT_M).floor() as usize).min(segments - 1);
            (lane.id(k), x - k as f64 * SEGMENT_M)
        }
        Lane::W => {
            let k = ((x / SEGMENT_M).ceil() as usize)
                .saturating_sub(1)
                .min(segments - 1);
            (lane.id(k), (k + 1) as f64 * SEGMENT_M - x)
        }
    }
}

fn needs_junction(catalog: &ArchetypeCatalog, name: &str) -> bool {
    catalog
        .archetypes()
        .iter()
        .find(|a| a.name == name)
        .is_some_and(|a| {
            a.nodes
                .iter()
                .any(|n| n.constraints.on_intersection == Some(true))
        })
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.actors_max == 0 {
            return Err(Error::param(
                "actors_max",
                "at least one actor must be requested",
            ));
        }
        if self.actors_min > self.actors_max {
            return Err(Error::param("actors_min", "exceeds actors_max"));
        }
        if self.instances_min > self.instances_max {
            return Err(Error::param("instances_min", "exceeds instances_max"));
        }
        if !(self.speed_std_mps >= 0.0) || !self.speed_mean_mps.is_finite() {
            return Err(Error::param(
                "speed_std_mps",
                "speed distribution must be finite with std >= 0",
            ));
        }
        if self.mix.values().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::param(
                "mix",
                "weights must be finite and non-negative",
            ));
        }
        Ok(())
    }

    /// Weighted archetype names, resolving an empty mix to every feasible archetype.
    fn resolved_mix(&self, catalog: &ArchetypeCatalog) -> Result<Vec<(String, f64)>> {
        let mix: Vec<(String, f64)> = if self.mix.is_empty() {
            catalog
                .names()
                .into_iter()
                .filter(|n| self.template.has_junctions() || !needs_junction(catalog, n))
                .map(|n| (n, 1.0))
                .collect()
        } else {
            self.mix
                .iter()
                .filter(|(_, w)| **w > 0.0)
                .map(|(n, w)| (n.clone(), *w))
                .collect()
        };
        if self.instances_max > 0 && mix.is_empty() {
            return Err(Error::param("mix", "weights must sum to a positive value"));
        }
        for (name, _) in &mix {
            if !catalog.names().contains(name) {
                return Err(Error::param("mix", format!("unknown archetype `{name}`")));
            }
            if needs_junction(catalog, name) && !self.template.has_junctions() {
                return Err(Error::Infeasible(format!(
                    "`{name}` needs an intersection, template {} has none",
                    self.template.as_str()
                )));
            }
        }
        Ok(mix)
    }
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let catalog = ArchetypeCatalog::default();
    let mix = spec.resolved_mix(&catalog)?;
    let total_weight: f64 = mix.iter().map(|m| m.1).sum();
    let map = corridor_map(spec.template, spec.slots)?;
    let segments = spec.slots * SEGMENTS_PER_SLOT;
    let speed = Normal::new(spec.speed_mean_mps, spec.speed_std_mps)
        .map_err(|e| Error::param("speed_std_mps", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut scenes = Vec::with_capacity(spec.scenes);
    let mut labels = Vec::with_capacity(spec.scenes);
    for index in 0..spec.scenes {
        let scene_id = format!("{}-{index:05}", spec.label.as_str());
        let instances = rng.gen_range(spec.instances_min..=spec.instances_max);
        let mut groups: Vec<(Option<String>, Vec<Placement>)> = Vec::new();
        for _ in 0..instances {
            let mut pick = rng.gen_range(0.0..total_weight);
            let mut name = &mix[mix.len() - 1].0;
            for (n, w) in &mix {
                if pick < *w {
                    name = n;
                    break;
                }
                pick -= w;
            }
            groups.push((Some(name.clone()), plant(name, &mut rng)?));
        }
        let planted_actors: usize = groups.iter().map(|g| g.1.len()).sum();
        let target = rng
            .gen_range(spec.actors_min..=spec.actors_max)
            .max(planted_actors);
        for _ in planted_actors..target {
            groups.push((None, vec![at("filler", Lane::E1, FILLER_X)]));
        }
        if groups.len() > spec.slots {
            return Err(Error::Infeasible(format!(
                "scene {scene_id} needs {} slots, the map has {}",
                groups.len(),
                spec.slots
            )));
        }
        let mut slot_order: Vec<usize> = (0..spec.slots).collect();
        slot_order.shuffle(&mut rng);

        let mut actors = Vec::with_capacity(target);
        let mut planted = Vec::new();
        for ((archetype, placements), &slot) in groups.into_iter().zip(&slot_order) {
            let mut roles = BTreeMap::new();
            for p in placements {
                let actor_id = format!("a{:03}", actors.len());
                let x = slot as f64 * SLOT_M + p.x;
                let (lane, s) = locate(p.lane, x, segments);
                actors.push(ActorState {
                    actor_id: actor_id.clone(),
                    primary_lane: lane,
                    lane_ids: vec![lane],
                    s_m: s,
                    position: [x, p.lane.y(), 0.0],
                    long_speed_mps: speed.sample(&mut rng).max(0.0),
                    actor_type: ActorType::Vehicle,
                    changed_lane: p.changed_lane,
                    extra: BTreeMap::new(),
                });
                roles.insert(p.role.to_string(), actor_id);
            }
            if let Some(archetype) = archetype {
                planted.push(PlantedInstance { archetype, roles });
            }
        }
        scenes.push(Scene {
            scene_id: scene_id.clone(),
            map_ref: map.map_id.clone(),
            timestep_s: index as f64 * 0.1,
            actors,
            source_tag: spec.source_tag.clone(),
        });
        labels.push(SceneLabels { scene_id, planted });
    }
    Ok(SynthOutput {
        map,
        scenes: SceneSet {
            label: spec.label,
            scenes,
        },
        labels,
    })
}
