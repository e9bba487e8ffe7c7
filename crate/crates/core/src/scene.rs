//! Scenes, actor states and the scene interchange format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Point3};
use crate::lane_map::{LaneId, LaneMapGraph, MapEdgeType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorType {
    Vehicle,
    Pedestrian,
    Cyclist,
    Motorcycle,
}

impl ActorType {
    pub const ALL: [ActorType; 4] = [
        ActorType::Vehicle,
        ActorType::Pedestrian,
        ActorType::Cyclist,
        ActorType::Motorcycle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActorType::Vehicle => "vehicle",
            ActorType::Pedestrian => "pedestrian",
            ActorType::Cyclist => "cyclist",
            ActorType::Motorcycle => "motorcycle",
        }
    }
}

impl FromStr for ActorType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActorType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown actor type `{s}`"))
    }
}

impl fmt::Display for ActorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorState {
    pub actor_id: String,
    pub primary_lane: LaneId,
    pub lane_ids: Vec<LaneId>,
    pub s_m: f64,
    pub position: Point3,
    pub long_speed_mps: f64,
    pub actor_type: ActorType,
    pub changed_lane: bool,
    /// Free-form numeric attributes; ignored by graph construction.
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub map_ref: String,
    pub timestep_s: f64,
    pub actors: Vec<ActorState>,
    pub source_tag: String,
}

impl Scene {
    /// Scenes with fewer than two actors produce empty actor graphs.
    pub fn is_degenerate(&self) -> bool {
        self.actors.len() < 2
    }

    pub fn actor(&self, id: &str) -> Option<&ActorState> {
        self.actors.iter().find(|a| a.actor_id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DatasetRole {
    #[serde(rename = "REF")]
    Ref,
    #[serde(rename = "TEST")]
    Test,
}

impl DatasetRole {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetRole::Ref => "ref",
            DatasetRole::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSet {
    pub label: DatasetRole,
    pub scenes: Vec<Scene>,
}

/// Raw pose of an actor that still needs lane assignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawPose {
    pub position: Point3,
    /// Heading in radians, counter-clockwise from +x.
    pub heading: f64,
    #[serde(default = "default_length")]
    pub length_m: f64,
    #[serde(default = "default_width")]
    pub width_m: f64,
}

fn default_length() -> f64 {
    4.5
}

fn default_width() -> f64 {
    1.8
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneAssignment {
    pub primary_lane: LaneId,
    pub lane_ids: Vec<LaneId>,
    pub s_m: f64,
}

/// Lateral tolerance for snapping an actor that lies outside every footprint.
pub const LATERAL_TOLERANCE_M: f64 = 3.0;

/// Assigns an actor pose to lanes of `map`.
pub fn assign_lanes(map: &LaneMapGraph, actor_id: &str, pose: &RawPose) -> Result<LaneAssignment> {
    let (c, s) = (pose.heading.cos(), pose.heading.sin());
    let (hl, hw) = (pose.length_m / 2.0, pose.width_m / 2.0);
    let corners: Vec<[f64; 2]> = [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)]
        .iter()
        .map(|(dx, dy)| {
            [
                pose.position[0] + dx * c - dy * s,
                pose.position[1] + dx * s + dy * c,
            ]
        })
        .collect();
    let center = [pose.position[0], pose.position[1]];

    let mut occupied = BTreeSet::new();
    // (lateral, heading misalignment, id, s)
    let mut candidates: Vec<(f64, f64, LaneId, f64)> = Vec::new();
    for lane in map.lanes() {
        let ring = lane.footprint();
        let inside = ring.len() >= 3
            && (geometry::point_in_polygon(&ring, center)
                || corners
                    .iter()
                    .any(|p| geometry::point_in_polygon(&ring, *p)));
        if inside {
            occupied.insert(lane.id);
        }
        let Some(proj) = geometry::project_onto_polyline(&lane.centerline, center) else {
            continue;
        };
        if inside || proj.lateral <= LATERAL_TOLERANCE_M {
            let misalign = geometry::heading_difference(proj.heading, pose.heading);
            candidates.push((proj.lateral, misalign, lane.id, proj.s));
        }
    }
    const LATERAL_TIE: f64 = 1e-6;
    let best = candidates.into_iter().min_by(|a, b| {
        if (a.0 - b.0).abs() > LATERAL_TIE {
            a.0.total_cmp(&b.0)
        } else {
            a.1.total_cmp(&b.1).then(a.2.cmp(&b.2))
        }
    });
    let Some((_, _, primary, s_m)) = best else {
        return Err(Error::UnmappableActor {
            actor: actor_id.to_string(),
        });
    };
    occupied.insert(primary);
    let length = map.lane(primary).expect("candidate lane exists").length_m;
    Ok(LaneAssignment {
        primary_lane: primary,
        lane_ids: occupied.into_iter().collect(),
        s_m: s_m.clamp(0.0, length),
    })
}

/// Sets `changed_lane` on actors of `curr` that moved laterally since `prev`.
///
/// Moving into a following successor of the previous primary lane is not a
/// lane change. Actors missing from `prev` are reported as unchanged.
pub fn detect_lane_change(map: &LaneMapGraph, prev: &Scene, curr: &Scene) -> Result<Scene> {
    if prev.map_ref != curr.map_ref {
        return Err(Error::param(
            "map_ref",
            format!(
                "scenes use different maps: {} vs {}",
                prev.map_ref, curr.map_ref
            ),
        ));
    }
    let before: BTreeMap<&str, LaneId> = prev
        .actors
        .iter()
        .map(|a| (a.actor_id.as_str(), a.primary_lane))
        .collect();
    let mut out = curr.clone();
    for actor in &mut out.actors {
        actor.changed_lane = match before.get(actor.actor_id.as_str()) {
            Some(&old) => {
                old != actor.primary_lane
                    && !map.has_edge(old, actor.primary_lane, MapEdgeType::Following)
            }
            None => false,
        };
    }
    Ok(out)
}

// ---- interchange format ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneDocument {
    pub format: String,
    pub version: u32,
    pub label: DatasetRole,
    pub scenes: Vec<serde_json::Value>,
}

impl SceneDocument {
    pub const FORMAT: &'static str = "scenecov-scenes";
    pub const VERSION: u32 = 1;
}

/// Diagnostics collected while loading a scene file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub degenerate_scenes: Vec<String>,
    /// Actors dropped because lane assignment failed, as (scene_id, message).
    pub dropped_actors: Vec<(String, String)>,
}

pub fn save_scenes(set: &SceneSet, path: &Path) -> Result<()> {
    let doc = SceneDocument {
        format: SceneDocument::FORMAT.into(),
        version: SceneDocument::VERSION,
        label: set.label,
        scenes: set
            .scenes
            .iter()
            .map(|s| serde_json::to_value(s).expect("scene serializes"))
            .collect(),
    };
    crate::io::write_json(path, &doc)
}

/// Loads a scene file. `map` is required when records carry raw poses instead
/// of lane assignments, and enables range checks on `s_m`.
pub fn load_scenes(path: &Path, map: Option<&LaneMapGraph>) -> Result<(SceneSet, LoadReport)> {
    let doc: SceneDocument = crate::io::read_json(path)?;
    if doc.format != SceneDocument::FORMAT {
        return Err(Error::Schema {
            index: 0,
            field: "format".into(),
            reason: format!("expected `{}`, got `{}`", SceneDocument::FORMAT, doc.format),
        });
    }
    scenes_from_values(doc.label, &doc.scenes, map)
}

pub fn scenes_from_values(
    label: DatasetRole,
    records: &[serde_json::Value],
    map: Option<&LaneMapGraph>,
) -> Result<(SceneSet, LoadReport)> {
    let mut report = LoadReport::default();
    let mut scenes = Vec::with_capacity(records.len());
    for (index, value) in records.iter().enumerate() {
        let scene = parse_scene(index, value, map, &mut report)?;
        if scene.is_degenerate() {
            report.degenerate_scenes.push(scene.scene_id.clone());
        }
        scenes.push(scene);
    }
    Ok((SceneSet { label, scenes }, report))
}

fn schema(index: usize, field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Schema {
        index,
        field: field.into(),
        reason: reason.into(),
    }
}

fn get_str(
    index: usize,
    obj: &serde_json::Map<String, serde_json::Value>,
    key: &str,
) -> Result<String> {
    match obj.get(key) {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err(schema(index, key, "expected a string")),
        None => Err(schema(index, key, "missing")),
    }
}

fn get_f64(index: usize, field: &str, value: Option<&serde_json::Value>) -> Result<f64> {
    value
        .ok_or_else(|| schema(index, field, "missing"))?
        .as_f64()
        .filter(|v| v.is_finite())
        .ok_or_else(|| schema(index, field, "expected a finite number"))
}

fn parse_scene(
    index: usize,
    value: &serde_json::Value,
    map: Option<&LaneMapGraph>,
    report: &mut LoadReport,
) -> Result<Scene> {
    let obj = value
        .as_object()
        .ok_or_else(|| schema(index, "<record>", "expected an object"))?;
    let scene_id = get_str(index, obj, "scene_id")?;
    let map_ref = get_str(index, obj, "map_ref")?;
    let timestep_s = get_f64(index, "timestep_s", obj.get("timestep_s"))?;
    let source_tag = obj
        .get("source_tag")
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .to_string();
    let raw_actors = obj
        .get("actors")
        .and_then(|v| v.as_array())
        .ok_or_else(|| schema(index, "actors", "expected a list"))?;

    let mut actors = Vec::with_capacity(raw_actors.len());
    let mut ids = BTreeSet::new();
    for (k, raw) in raw_actors.iter().enumerate() {
        let field = |name: &str| format!("actors[{k}].{name}");
        let a = raw
            .as_object()
            .ok_or_else(|| schema(index, format!("actors[{k}]"), "expected an object"))?;
        let actor_id = get_str(index, a, "actor_id")
            .map_err(|_| schema(index, field("actor_id"), "missing or not a string"))?;
        if !ids.insert(actor_id.clone()) {
            return Err(schema(
                index,
                field("actor_id"),
                format!("duplicate actor id `{actor_id}`"),
            ));
        }
        let type_str = a
            .get("actor_type")
            .and_then(|v| v.as_str())
            .ok_or_else(|| schema(index, field("actor_type"), "missing"))?;
        let actor_type =
            ActorType::from_str(type_str).map_err(|e| schema(index, field("actor_type"), e))?;
        let long_speed_mps = get_f64(index, &field("long_speed_mps"), a.get("long_speed_mps"))?;
        if long_speed_mps < 0.0 {
            return Err(schema(
                index,
                field("long_speed_mps"),
                "must be non-negative",
            ));
        }
        let changed_lane = match a.get("changed_lane") {
            None => false,
            Some(v) => v
                .as_bool()
                .ok_or_else(|| schema(index, field("changed_lane"), "expected a boolean"))?,
        };
        let extra: BTreeMap<String, f64> = match a.get("extra") {
            None | Some(serde_json::Value::Null) => BTreeMap::new(),
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| schema(index, field("extra"), e.to_string()))?,
        };

        let (primary_lane, lane_ids, s_m, position) = if a.contains_key("primary_lane") {
            let primary = a
                .get("primary_lane")
                .and_then(|v| v.as_u64())
                .map(LaneId)
                .ok_or_else(|| schema(index, field("primary_lane"), "expected a lane id"))?;
            let lane_ids: Vec<LaneId> = a
                .get("lane_ids")
                .and_then(|v| serde_json::from_value(v.clone()).ok())
                .ok_or_else(|| schema(index, field("lane_ids"), "expected a list of lane ids"))?;
            if lane_ids.is_empty() {
                return Err(schema(index, field("lane_ids"), "must not be empty"));
            }
            if !lane_ids.contains(&primary) {
                return Err(schema(
                    index,
                    field("lane_ids"),
                    "must contain primary_lane",
                ));
            }
            let s_m = get_f64(index, &field("s_m"), a.get("s_m"))?;
            if s_m < 0.0 {
                return Err(schema(index, field("s_m"), "must be non-negative"));
            }
            if let Some(map) = map {
                let lane = map.lane(primary).ok_or_else(|| {
                    schema(
                        index,
                        field("primary_lane"),
                        format!("lane {primary} not in map"),
                    )
                })?;
                if s_m > lane.length_m + 1e-9 {
                    return Err(schema(
                        index,
                        field("s_m"),
                        format!("exceeds lane length {}", lane.length_m),
                    ));
                }
            }
            let position: Point3 = a
                .get("position")
                .and_then(|v| serde_json::from_value(v.clone()).ok())
                .ok_or_else(|| schema(index, field("position"), "expected [x, y, z]"))?;
            (primary, lane_ids, s_m, position)
        } else if let Some(pose) = a.get("pose") {
            let pose: RawPose = serde_json::from_value(pose.clone())
                .map_err(|e| schema(index, field("pose"), e.to_string()))?;
            let map = map.ok_or_else(|| schema(index, field("pose"), "raw poses need a map"))?;
            match assign_lanes(map, &actor_id, &pose) {
                Ok(asg) => (asg.primary_lane, asg.lane_ids, asg.s_m, pose.position),
                Err(e) => {
                    log::warn!("scene {scene_id}: {e}");
                    report
                        .dropped_actors
                        .push((scene_id.clone(), e.to_string()));
                    continue;
                }
            }
        } else {
            return Err(schema(
                index,
                field("primary_lane"),
                "missing (and no pose given)",
            ));
        };

        actors.push(ActorState {
            actor_id,
            primary_lane,
            lane_ids,
            s_m,
            position,
            long_speed_mps,
            actor_type,
            changed_lane,
            extra,
        });
    }
    Ok(Scene {
        scene_id,
        map_ref,
        timestep_s,
        actors,
        source_tag,
    })
}
