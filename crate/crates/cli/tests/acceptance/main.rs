//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --test acceptance`; pass criterion numbers after `--`
//! to run a subset. Exits non-zero when any selected criterion fails.

mod oracle;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use scenecov::actor_graph::{
    build_actor_graph_traced, build_scene_graph, discover_relations, ActorGraph,
    ConstructionParams, Decision, RelationKind, RelationType,
};
use scenecov::archetype::{
    match_archetype, ArchetypeCatalog, CoverageTable, MatchPolicy, NodeCoverage,
};
use scenecov::coverage::{cooccurrence, cooccurrence_diff, detect_parametric_holes, HoleParams};
use scenecov::embedding::augment::augment;
use scenecov::embedding::loss::nt_xent;
use scenecov::embedding::model::{backward, forward};
use scenecov::embedding::{
    train, Encoder, EncoderConfig, FeatureStats, FeaturizedGraph, ModelParams,
};
use scenecov::embedding_analytics::{density_coverage, pca, DensityParams};
use scenecov::synth::{corridor_map, generate_synthetic, MapTemplate, SynthSpec};

use fixtures::{permuted, random_graph, random_world, scene, vehicle};
use oracle::{
    brute_embeddings, construct, discover, graph_edges, hole_flags, hop_path_exists, Kind,
    LaneTable,
};

const GRAPH_SCENES: usize = 200;
const GRAPH_MAX_LANES: usize = 10;
const GRAPH_MAX_ACTORS: usize = 8;
const GRAPH_TIME_LIMIT: Duration = Duration::from_secs(60);
const PATH_LENGTH_TOL: f64 = 1e-9;

const MATCH_GRAPHS: usize = 100;
const MATCH_MAX_NODES: usize = 8;
const SMALL_CAP: usize = 3;
const MATCH_TIME_LIMIT: Duration = Duration::from_secs(120);

const PAPER_MIN_REF_DENSITY: f64 = 0.005;
const PAPER_MAX_RATIO: f64 = 0.15;
const HOLE_PAIRS: usize = 10;
const COOCCURRENCE_TABLES: usize = 20;

const GRAD_MAX_REL_ERR: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-6;
const GRAD_TIME_LIMIT: Duration = Duration::from_secs(60);

const NTXENT_TOL: f64 = 1e-9;

const TRAIN_GRAPHS_PER_FAMILY: usize = 100;
const TRAIN_STAGES: usize = 10;
const TRAIN_EPOCHS_PER_STAGE: usize = 5;
const TRAIN_MAX_LOSS_RATIO: f64 = 0.6;
const TRAIN_MIN_RETRIEVAL: f64 = 0.9;
const TRAIN_MIN_COSINE_GAP: f64 = 0.1;
const TRAIN_TIME_LIMIT: Duration = Duration::from_secs(15 * 60);

const INVARIANCE_TOL: f64 = 1e-9;
const UNIT_NORM_TOL: f64 = 1e-6;

const DENSITY_SEEDS: u64 = 20;
const DENSITY_TARGET: f64 = 0.5;
const DENSITY_TOL: f64 = 0.05;

const PCA_MATRICES: usize = 10;
const PCA_MIN_ABS_COS: f64 = 0.999;
const PCA_LINE_TOL: f64 = 1e-9;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

// 1 ---------------------------------------------------------------------------

fn graph_construction_oracle() -> Outcome {
    let params = ConstructionParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    let (mut mismatches, mut relations, mut rejected) = (0, 0, 0);
    let mut first = None;
    for i in 0..GRAPH_SCENES {
        let world = random_world(&mut rng, i, GRAPH_MAX_LANES, GRAPH_MAX_ACTORS);
        let table = LaneTable::new(&world.lanes);
        let expected = discover(&table, &world.scene, &params);
        let got = discover_relations(&world.map, &world.scene, &params).unwrap();
        relations += expected.len();
        let same = expected.len() == got.len()
            && expected.iter().zip(&got).all(|(e, g)| {
                let kind = match g.kind {
                    RelationKind::Lead => Kind::Lead,
                    RelationKind::Neighbor => Kind::Neighbor,
                    RelationKind::Opposite => Kind::Opposite,
                };
                e.a == g.actor_a
                    && e.b == g.actor_b
                    && e.kind == kind
                    && (e.pl - g.path_length_m).abs() <= PATH_LENGTH_TOL
                    && e.lanes == g.lane_path.lanes.iter().map(|l| l.0).collect::<Vec<_>>()
            });
        if !same {
            mismatches += 1;
            first.get_or_insert_with(|| format!("discovery differs in scene {i}"));
            continue;
        }
        let (graph, decisions) = build_actor_graph_traced(&world.map, &world.scene, &got, &params);
        let mut want = construct(&world.scene, &expected, &params);
        let mut have = graph_edges(&graph);
        let key = |e: &oracle::Edge| (e.0, e.1, e.2);
        want.sort_by_key(key);
        have.sort_by_key(key);
        let edges_equal = want.len() == have.len()
            && want
                .iter()
                .zip(&have)
                .all(|(w, h)| key(w) == key(h) && (w.3 - h.3).abs() <= PATH_LENGTH_TOL);
        if !edges_equal {
            mismatches += 1;
            first.get_or_insert_with(|| format!("edge set differs in scene {i}"));
            continue;
        }
        // every direction that was not added must already be reachable
        let n = world.scene.actors.len();
        for (rel, decision) in expected.iter().zip(&decisions) {
            let k = rel.kind.hops(&params);
            let (fwd, back) = match rel.kind {
                Kind::Lead => (RelationType::LeadingVehicle, RelationType::FollowingLead),
                Kind::Neighbor => (RelationType::NeighborVehicle, RelationType::NeighborVehicle),
                Kind::Opposite => (RelationType::OppositeVehicle, RelationType::OppositeVehicle),
            };
            let has = |s: usize, d: usize, r: RelationType| {
                have.iter().any(|e| (e.0, e.1, e.2) == (s, d, r))
            };
            let ok = match rel.kind {
                Kind::Opposite if !has(rel.a, rel.b, fwd) => {
                    hop_path_exists(&have, n, rel.a, rel.b, k)
                        || hop_path_exists(&have, n, rel.b, rel.a, k)
                }
                _ => {
                    (has(rel.a, rel.b, fwd) || hop_path_exists(&have, n, rel.a, rel.b, k))
                        && (has(rel.b, rel.a, back) || hop_path_exists(&have, n, rel.b, rel.a, k))
                }
            };
            if *decision != Decision::Accepted {
                rejected += 1;
            }
            if !ok {
                mismatches += 1;
                first.get_or_insert_with(|| format!("unjustified rejection in scene {i}"));
            }
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "{mismatches} mismatches over {GRAPH_SCENES} scenes ({relations} relations, {rejected} pruned), {} (limit {}){}",
        secs(elapsed),
        secs(GRAPH_TIME_LIMIT),
        first.map(|f| format!("; first: {f}")).unwrap_or_default()
    );
    outcome(mismatches == 0 && elapsed < GRAPH_TIME_LIMIT, detail)
}

// 2 ---------------------------------------------------------------------------

fn corridor_actor(id: &str, lane: &str, x: f64) -> scenecov::scene::ActorState {
    // slot 0 of a straight corridor: eastbound lanes start at 50k, westbound end there
    let k = (x / 50.0).floor() as u64;
    match lane {
        "E1" => vehicle(
            id,
            scenecov::lane_map::LaneId(10 * k + 1),
            x - 50.0 * k as f64,
            [x, -1.75, 0.0],
            10.0,
        ),
        _ => {
            let k = ((x / 50.0).ceil() as u64).saturating_sub(1);
            vehicle(
                id,
                scenecov::lane_map::LaneId(10 * k + 3),
                50.0 * (k + 1) as f64 - x,
                [x, 1.75, 0.0],
                10.0,
            )
        }
    }
}

fn count_edges(g: &ActorGraph, r: RelationType) -> usize {
    g.edges().iter().filter(|e| e.relation == r).count()
}

fn chain_behavior() -> Outcome {
    let map = corridor_map(MapTemplate::StraightMultilane, 2).unwrap();
    let params = ConstructionParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut failures = Vec::new();
    let mut cases = 0;
    let build = |actors| {
        build_scene_graph(&map, &scene("chain", &map, actors), &params)
            .outcome
            .unwrap()
            .graph
    };
    // consecutive gaps fit the lead limit; three gaps do too, four do not
    for n in 3..=8 {
        for _ in 0..5 {
            cases += 1;
            let mut x = rng.gen_range(20.0..60.0);
            let mut actors = Vec::new();
            for i in 0..n {
                actors.push(corridor_actor(&format!("c{i}"), "E1", x));
                x += rng.gen_range(26.0..33.0);
            }
            actors.shuffle(&mut rng);
            let g = build(actors);
            let consecutive = g.edges().iter().all(|e| {
                let (a, b) = (
                    &g.nodes()[e.src].actor.actor_id,
                    &g.nodes()[e.dst].actor.actor_id,
                );
                let (ia, ib): (i32, i32) = (a[1..].parse().unwrap(), b[1..].parse().unwrap());
                (ia - ib).abs() == 1
            });
            let lead = count_edges(&g, RelationType::LeadingVehicle)
                + count_edges(&g, RelationType::FollowingLead);
            if lead != 2 * (n - 1) || g.edge_count() != lead || !consecutive {
                failures.push(format!(
                    "chain n={n}: {lead} lead edges, {} total",
                    g.edge_count()
                ));
            }
        }
    }
    // one opposite vehicle beside a chain member or just ahead of the front
    for n in 3..=6 {
        for beside in [true, false] {
            cases += 1;
            let gap = rng.gen_range(52.0..60.0);
            let x0 = rng.gen_range(20.0..40.0);
            let xs: Vec<f64> = (0..n).map(|i| x0 + i as f64 * gap).collect();
            let x_opp = if beside {
                xs[rng.gen_range(1..n)] + rng.gen_range(-3.0..3.0)
            } else {
                xs[n - 1] + rng.gen_range(1.0..5.0)
            };
            let mut actors: Vec<_> = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| corridor_actor(&format!("c{i}"), "E1", x))
                .collect();
            actors.push(corridor_actor("o", "W", x_opp));
            actors.shuffle(&mut rng);
            let g = build(actors);
            let ov: Vec<(usize, usize)> = g
                .edges()
                .iter()
                .filter(|e| e.relation == RelationType::OppositeVehicle)
                .map(|e| (e.src, e.dst))
                .collect();
            let symmetric_pair = ov.len() == 2 && ov[0] == (ov[1].1, ov[1].0);
            let lead = count_edges(&g, RelationType::LeadingVehicle)
                + count_edges(&g, RelationType::FollowingLead);
            if !symmetric_pair || lead != 2 * (n - 1) {
                failures.push(format!(
                    "chain n={n} with opposite: {} ov edges, {lead} lead edges",
                    ov.len()
                ));
            }
        }
    }
    let detail = format!(
        "{} of {cases} planted chains deviate{}",
        failures.len(),
        failures
            .first()
            .map(|f| format!("; first: {f}"))
            .unwrap_or_default()
    );
    outcome(failures.is_empty(), detail)
}

// 3 ---------------------------------------------------------------------------

fn matcher_oracle() -> Outcome {
    let catalog = ArchetypeCatalog::default();
    let policy = MatchPolicy::default();
    // a tiny cap exercises the saturation path on graphs this small
    let small = MatchPolicy {
        embedding_cap: SMALL_CAP,
        ..policy.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let start = Instant::now();
    let (mut mismatches, mut matched, mut saturated) = (0, 0, 0);
    let mut first = None;
    for i in 0..MATCH_GRAPHS {
        let g = random_graph(&mut rng, i, MATCH_MAX_NODES);
        for a in catalog.archetypes() {
            let brute = brute_embeddings(a, &g);
            for policy in [&policy, &small] {
                let cap = policy.embedding_cap;
                let got = match_archetype(a, &g, policy);
                let got_set: BTreeSet<Vec<usize>> = got.embeddings.iter().cloned().collect();
                let brute_set: BTreeSet<Vec<usize>> = brute.iter().cloned().collect();
                let ok = got.matched == !brute.is_empty()
                    && got.embeddings.len() == brute.len().min(cap)
                    && got_set.len() == got.embeddings.len()
                    && got_set.is_subset(&brute_set)
                    && got.saturated == (brute.len() >= cap);
                matched += usize::from(got.matched);
                saturated += usize::from(got.saturated);
                if !ok {
                    mismatches += 1;
                    first.get_or_insert_with(|| {
                        format!(
                            "{} on graph {i} (cap {cap}): {} vs brute {}",
                            a.name,
                            got.embeddings.len(),
                            brute.len()
                        )
                    });
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "{mismatches} mismatches over {MATCH_GRAPHS} graphs x {} archetypes ({matched} matched, {saturated} saturated at caps {} and {SMALL_CAP}), {} (limit {}){}",
        catalog.len(),
        policy.embedding_cap,
        secs(elapsed),
        secs(MATCH_TIME_LIMIT),
        first.map(|f| format!("; first: {f}")).unwrap_or_default()
    );
    outcome(mismatches == 0 && elapsed < MATCH_TIME_LIMIT, detail)
}

// 4 ---------------------------------------------------------------------------

const FL: &str = "following_lead";
const LV: &str = "leading_vehicle";
const NV: &str = "neighbor_vehicle";
const OV: &str = "opposite_vehicle";

/// (display name, actors, edges, edge types) as tabulated in the paper.
const TABLE_2: [(&str, usize, usize, &[&str]); 18] = [
    ("Simple Following", 2, 2, &[FL, LV]),
    ("Simple Opposite", 2, 2, &[OV]),
    ("Simple Neighbor", 2, 2, &[NV]),
    ("Lead + Neighbor (intersection)", 3, 4, &[FL, LV, NV]),
    ("Cut-in", 3, 4, &[FL, LV]),
    ("Cut-in (intersection)", 3, 4, &[FL, LV]),
    ("Platoon (intersection)", 3, 4, &[FL, LV]),
    ("Opposite Traffic (intersection)", 3, 4, &[FL, LV, OV]),
    ("Lead + Neighbor at Intersection", 3, 4, &[FL, LV, NV]),
    ("Triple Opposite (intersection)", 3, 4, &[OV]),
    ("Lead + Following in Back", 3, 4, &[FL, LV]),
    ("Lead + Neighbor", 3, 4, &[FL, LV, NV]),
    ("Cut-out", 4, 6, &[FL, LV, NV]),
    ("Cut-out (intersection)", 4, 6, &[FL, LV, NV]),
    ("4-Vehicle Platoon (intersection)", 4, 6, &[FL, LV]),
    ("4-Vehicle Opposite (intersection)", 4, 6, &[FL, LV, OV]),
    ("Lead + Neighbor + Opposite", 5, 8, &[FL, LV, NV, OV]),
    (
        "Lead + Neighbor + Opposite (intersection)",
        5,
        8,
        &[FL, LV, NV, OV],
    ),
];

fn relation_name(r: RelationType) -> &'static str {
    match r {
        RelationType::FollowingLead => FL,
        RelationType::LeadingVehicle => LV,
        RelationType::NeighborVehicle => NV,
        RelationType::OppositeVehicle => OV,
    }
}

fn catalog_conformance() -> Outcome {
    let catalog = ArchetypeCatalog::default();
    let mut bad = Vec::new();
    if catalog.len() != TABLE_2.len() {
        bad.push(format!("{} archetypes", catalog.len()));
    }
    for (row, a) in TABLE_2.iter().zip(catalog.archetypes()) {
        let types: BTreeSet<&str> = a.edges.iter().map(|e| relation_name(e.relation)).collect();
        let want: BTreeSet<&str> = row.3.iter().copied().collect();
        if a.display_name != row.0
            || a.actor_count() != row.1
            || a.edge_count() != row.2
            || types != want
        {
            bad.push(format!(
                "{} ({}/{})",
                a.display_name,
                a.actor_count(),
                a.edge_count()
            ));
        }
    }
    let isolated: Vec<&str> = catalog
        .archetypes()
        .iter()
        .filter(|a| a.isolation_required)
        .map(|a| a.name.as_str())
        .collect();
    if isolated != ["simple_following", "simple_opposite", "simple_neighbor"] {
        bad.push(format!("isolation on {isolated:?}"));
    }
    let detail = format!(
        "{} of {} rows differ{}",
        bad.len(),
        TABLE_2.len(),
        bad.first()
            .map(|b| format!("; first: {b}"))
            .unwrap_or_default()
    );
    outcome(bad.is_empty(), detail)
}

// 5 ---------------------------------------------------------------------------

fn hole_thresholds() -> Outcome {
    let defaults = HoleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut mismatched, mut bins, mut holes) = (0, 0, 0);
    for _ in 0..HOLE_PAIRS {
        let normal = |rng: &mut ChaCha8Rng, mean: f64, sd: f64| mean + sd * gauss(rng);
        let n_ref = rng.gen_range(100..600);
        let n_test = rng.gen_range(50..600);
        let w = [0.5, 1.0, 2.0, 5.0][rng.gen_range(0..4)];
        let reference: Vec<f64> = (0..n_ref)
            .map(|_| {
                if rng.gen_bool(0.7) {
                    normal(&mut rng, 10.0, 3.0)
                } else {
                    normal(&mut rng, 25.0, 2.0)
                }
            })
            .collect();
        let shift = rng.gen_range(9.0..12.0);
        let test: Vec<f64> = (0..n_test).map(|_| normal(&mut rng, shift, 3.5)).collect();
        let want = hole_flags(&reference, &test, w, PAPER_MIN_REF_DENSITY, PAPER_MAX_RATIO);
        let got = detect_parametric_holes(
            &reference,
            &test,
            w,
            defaults.min_ref_density,
            defaults.max_ratio,
        )
        .unwrap();
        bins += want.len();
        holes += want.iter().filter(|&&h| h).count();
        if got.hole != want {
            mismatched += 1;
        }
    }
    let defaults_ok =
        defaults.min_ref_density == PAPER_MIN_REF_DENSITY && defaults.max_ratio == PAPER_MAX_RATIO;
    let detail = format!("{mismatched} of {HOLE_PAIRS} pairs differ ({bins} bins, {holes} holes); default thresholds {}", if defaults_ok { "0.5%/15%" } else { "WRONG" });
    outcome(mismatched == 0 && defaults_ok, detail)
}

// 6 ---------------------------------------------------------------------------

fn random_table(rng: &mut ChaCha8Rng) -> CoverageTable {
    let n = rng.gen_range(1..80);
    let k = rng.gen_range(1..=18);
    let p = rng.gen_range(0.05..0.9);
    CoverageTable {
        scene_ids: (0..n).map(|i| format!("s{i}")).collect(),
        archetypes: (0..k).map(|j| format!("a{j}")).collect(),
        hits: (0..n)
            .map(|_| (0..k).map(|_| rng.gen_bool(p)).collect())
            .collect(),
        embedding_counts: vec![vec![0; k]; n],
        saturated: vec![vec![false; k]; n],
        node_coverage: vec![
            NodeCoverage {
                covered: 0,
                total: 0,
                fraction: 0.0,
                degenerate: true
            };
            n
        ],
        samples: Default::default(),
    }
}

fn cooccurrence_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut bad = 0;
    for _ in 0..COOCCURRENCE_TABLES {
        let t = random_table(&mut rng);
        let m = cooccurrence(&t);
        let k = t.archetypes.len();
        let n = t.scene_ids.len() as f64;
        let symmetric = (0..k).all(|i| (0..k).all(|j| m.cells[i][j] == m.cells[j][i]));
        let diagonal = (0..k).all(|j| {
            let hits = t.hits.iter().filter(|r| r[j]).count() as f64;
            m.cells[j][j] == 100.0 * hits / n
        });
        let counts = (0..k).all(|i| {
            (0..k).all(|j| {
                m.cells[i][j] == 100.0 * t.hits.iter().filter(|r| r[i] && r[j]).count() as f64 / n
            })
        });
        let diff = cooccurrence_diff(&m, &m).unwrap();
        let zero = diff.cells.iter().flatten().all(|&c| c == 0.0);
        if !(symmetric && diagonal && counts && zero) {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{bad} of {COOCCURRENCE_TABLES} tables violate symmetry, diagonal, counts or diff(ref,ref)=0"))
}

// 7 ---------------------------------------------------------------------------

fn toy_views(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Vec<FeaturizedGraph> {
    let graphs: Vec<ActorGraph> = (0..cfg.batch)
        .map(|i| loop {
            let g = random_graph(rng, i, 5);
            if g.node_count() >= 2 && g.edge_count() >= 1 {
                break g;
            }
        })
        .collect();
    let stats = FeatureStats::fit(&graphs);
    let feats: Vec<FeaturizedGraph> = graphs
        .iter()
        .map(|g| scenecov::embedding::featurize(g, &stats).unwrap())
        .collect();
    let mut views: Vec<FeaturizedGraph> = feats
        .iter()
        .map(|f| augment(f, cfg.noise_sigma, 0.0, rng))
        .collect();
    views.extend(feats.iter().map(|f| augment(f, cfg.noise_sigma, 0.0, rng)));
    views
}

fn batch_loss(params: &ModelParams, views: &[FeaturizedGraph], tau: f64) -> (f64, Array2<f64>) {
    let rows: Vec<Array1<f64>> = views
        .iter()
        .map(|v| forward(params, v).unwrap().projection)
        .collect();
    let z = ndarray::stack(Axis(0), &rows.iter().map(|r| r.view()).collect::<Vec<_>>()).unwrap();
    nt_xent(&z, tau).unwrap()
}

fn gradient_check() -> Outcome {
    let cfg = EncoderConfig {
        layers: 2,
        hidden: 8,
        embed_dim: 8,
        projection_dim: 8,
        batch: 4,
        temperature: 0.5,
        ..EncoderConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let start = Instant::now();
    let params = ModelParams::init(&cfg, &mut rng);
    let views = toy_views(&cfg, &mut rng);
    let (_, dz) = batch_loss(&params, &views, cfg.temperature);
    let zero = Array1::zeros(cfg.embed_dim);
    let mut analytic = ModelParams::zeros(&cfg);
    for (i, v) in views.iter().enumerate() {
        let cache = forward(&params, v).unwrap();
        analytic.add_assign(&backward(&params, &cache, dz.row(i), zero.view()));
    }
    let mut worst = (0.0f64, String::new());
    let tensors = params.tensors().len();
    for t in 0..tensors {
        for k in 0..params.tensors()[t].2.len() {
            let mut plus = params.clone();
            plus.tensors_mut()[t][k] += GRAD_STEP;
            let mut minus = params.clone();
            minus.tensors_mut()[t][k] -= GRAD_STEP;
            let numeric = (batch_loss(&plus, &views, cfg.temperature).0
                - batch_loss(&minus, &views, cfg.temperature).0)
                / (2.0 * GRAD_STEP);
            let a = analytic.tensors()[t].2[k];
            let err = (a - numeric).abs() / (1e-6 + a.abs().max(numeric.abs()));
            if err > worst.0 {
                worst = (err, format!("{}[{k}]", params.tensors()[t].0));
            }
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "max relative error {:.2e} at {} over {} parameters, {} (limit {})",
        worst.0,
        if worst.1.is_empty() { "-" } else { &worst.1 },
        params.parameter_count(),
        secs(elapsed),
        secs(GRAD_TIME_LIMIT)
    );
    outcome(
        worst.0 < GRAD_MAX_REL_ERR && elapsed < GRAD_TIME_LIMIT,
        detail,
    )
}

// 8 ---------------------------------------------------------------------------

fn nt_xent_sanity() -> Outcome {
    let z = Array2::from_shape_fn((4, 3), |(_, j)| [0.6, 0.0, 0.8][j]);
    let (loss, _) = nt_xent(&z, 0.07).unwrap();
    let ln3_err = (loss - 3f64.ln()).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let n = 6;
    let z = Array2::from_shape_fn((2 * n, 5), |_| gauss(&mut rng));
    let (base, _) = nt_xent(&z, 0.2).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let order: Vec<usize> = perm
            .iter()
            .copied()
            .chain(perm.iter().map(|p| p + n))
            .collect();
        let (l, _) = nt_xent(&z.select(Axis(0), &order), 0.2).unwrap();
        worst = worst.max((l - base).abs());
    }
    // swapping the two views of every pair is also a relabeling
    let swapped: Vec<usize> = (n..2 * n).chain(0..n).collect();
    let (l, _) = nt_xent(&z.select(Axis(0), &swapped), 0.2).unwrap();
    worst = worst.max((l - base).abs());
    let detail = format!("|loss - ln 3| = {ln3_err:.1e}; max change under pair permutation {worst:.1e} (tol {NTXENT_TOL:.0e})");
    outcome(ln3_err <= NTXENT_TOL && worst <= NTXENT_TOL, detail)
}

// 9 ---------------------------------------------------------------------------

const FAMILIES: [&str; 4] = [
    "simple_following",
    "cut_in",
    "platoon4_intersection",
    "lead_neighbor_opposite",
];

fn family_graphs() -> (Vec<ActorGraph>, Vec<usize>) {
    let params = ConstructionParams::default();
    let mut graphs = Vec::new();
    let mut family = Vec::new();
    for (f, name) in FAMILIES.iter().enumerate() {
        let spec = SynthSpec {
            template: MapTemplate::Crossroads,
            scenes: TRAIN_GRAPHS_PER_FAMILY,
            actors_min: 1,
            actors_max: 8,
            instances_min: 1,
            instances_max: 3,
            mix: [(name.to_string(), 1.0)].into(),
            seed: 900 + f as u64,
            ..SynthSpec::default()
        };
        let out = generate_synthetic(&spec).unwrap();
        for s in &out.scenes.scenes {
            graphs.push(
                build_scene_graph(&out.map, s, &params)
                    .outcome
                    .unwrap()
                    .graph,
            );
            family.push(f);
        }
    }
    (graphs, family)
}

fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.dot(b) / (a.dot(a).sqrt() * b.dot(b).sqrt())
}

fn training_signal() -> Outcome {
    let start = Instant::now();
    let (graphs, family) = family_graphs();
    let cfg = EncoderConfig {
        stages: TRAIN_STAGES,
        epochs_per_stage: TRAIN_EPOCHS_PER_STAGE,
        seed: 909,
        ..EncoderConfig::desk()
    };
    let run = train(&cfg, &graphs).unwrap();
    let initial = run.history.first().unwrap().train_loss;
    let last = run.history.last().unwrap().train_loss;
    let ratio = last / initial;

    let enc = &run.encoder;
    let clean: Vec<Array1<f64>> = graphs
        .iter()
        .map(|g| enc.embed_featurized(&enc.featurize(g).unwrap()).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(919);
    let held = &run.val_indices;
    let mut hits = 0;
    for &i in held {
        let view = augment(
            &enc.featurize(&graphs[i]).unwrap(),
            cfg.noise_sigma,
            cfg.edge_drop_p,
            &mut rng,
        );
        let q = enc.embed_featurized(&view).unwrap();
        let best = held
            .iter()
            .copied()
            .max_by(|&a, &b| cosine(&q, &clean[a]).total_cmp(&cosine(&q, &clean[b])))
            .unwrap();
        hits += usize::from(best == i);
    }
    let retrieval = hits as f64 / held.len() as f64;

    let (mut intra, mut inter, mut n_intra, mut n_inter) = (0.0, 0.0, 0, 0);
    for i in 0..graphs.len() {
        for j in i + 1..graphs.len() {
            let c = cosine(&clean[i], &clean[j]);
            if family[i] == family[j] {
                intra += c;
                n_intra += 1;
            } else {
                inter += c;
                n_inter += 1;
            }
        }
    }
    let gap = intra / n_intra as f64 - inter / n_inter as f64;
    let elapsed = start.elapsed();
    let pass = ratio < TRAIN_MAX_LOSS_RATIO
        && retrieval >= TRAIN_MIN_RETRIEVAL
        && gap >= TRAIN_MIN_COSINE_GAP
        && elapsed < TRAIN_TIME_LIMIT;
    let detail = format!(
        "loss {initial:.3} -> {last:.3} (ratio {ratio:.2}, need < {TRAIN_MAX_LOSS_RATIO}); top-1 retrieval {:.1}% on {} held out (need >= {:.0}%); cosine gap {gap:.3} (need >= {TRAIN_MIN_COSINE_GAP}); {} (limit {})",
        100.0 * retrieval,
        held.len(),
        100.0 * TRAIN_MIN_RETRIEVAL,
        secs(elapsed),
        secs(TRAIN_TIME_LIMIT)
    );
    outcome(pass, detail)
}

// 10 --------------------------------------------------------------------------

fn embedding_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let graphs: Vec<ActorGraph> = (0..12).map(|i| random_graph(&mut rng, i, 8)).collect();
    let enc = Encoder::new(
        EncoderConfig {
            seed: 11,
            ..EncoderConfig::desk()
        },
        FeatureStats::fit(&graphs),
    )
    .unwrap();
    let (mut worst_diff, mut worst_norm): (f64, f64) = (0.0, 0.0);
    for g in &graphs {
        let base = enc.embed(std::slice::from_ref(g)).unwrap().data;
        worst_norm = worst_norm.max((base.row(0).dot(&base.row(0)).sqrt() - 1.0).abs());
        for _ in 0..3 {
            let mut perm: Vec<usize> = (0..g.node_count()).collect();
            perm.shuffle(&mut rng);
            let other = enc.embed(&[permuted(g, &perm, &mut rng)]).unwrap().data;
            let d = (&base - &other).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            worst_diff = worst_diff.max(d);
        }
    }
    let detail = format!("max |difference| {worst_diff:.1e} (tol {INVARIANCE_TOL:.0e}); max |norm - 1| {worst_norm:.1e} (tol {UNIT_NORM_TOL:.0e})");
    outcome(
        worst_diff < INVARIANCE_TOL && worst_norm <= UNIT_NORM_TOL,
        detail,
    )
}

// 11 --------------------------------------------------------------------------

fn gaussian_cloud(rng: &mut ChaCha8Rng, n: usize, center: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((n, center.len()), |(_, j)| center[j] + gauss(rng))
}

fn density_checks() -> Outcome {
    let params = DensityParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let x = gaussian_cloud(&mut rng, 200, &[0.0; 8]);
    let self_cov = density_coverage(&x, &x, &params).unwrap().covered_fraction;
    let mut total = 0.0;
    for seed in 0..DENSITY_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let a = [0.0; 8];
        let mut b = [0.0; 8];
        b[0] = 12.0;
        let reference = ndarray::concatenate(
            Axis(0),
            &[
                gaussian_cloud(&mut rng, 100, &a).view(),
                gaussian_cloud(&mut rng, 100, &b).view(),
            ],
        )
        .unwrap();
        let test = gaussian_cloud(&mut rng, 200, &a);
        total += density_coverage(&reference, &test, &params)
            .unwrap()
            .covered_fraction;
    }
    let mean = total / DENSITY_SEEDS as f64;
    let detail = format!("self coverage {self_cov}; two-cluster REF vs one-cluster TEST {mean:.3} over {DENSITY_SEEDS} seeds (target {DENSITY_TARGET} +- {DENSITY_TOL})");
    outcome(
        self_cov == 1.0 && (mean - DENSITY_TARGET).abs() <= DENSITY_TOL,
        detail,
    )
}

// 12 --------------------------------------------------------------------------

fn pca_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1212);
    let mut worst_cos: f64 = 1.0;
    for _ in 0..PCA_MATRICES {
        let (n, d, dims) = (80, 6, 3);
        let q = DMatrix::<f64>::from_fn(d, d, |_, _| gauss(&mut rng))
            .qr()
            .q();
        let scales = [6.0, 4.0, 2.5, 1.5, 0.8, 0.3];
        let z = DMatrix::<f64>::from_fn(n, d, |_, j| scales[j] * gauss(&mut rng));
        let x = &z * q.transpose();
        let data = Array2::from_shape_fn((n, d), |(i, j)| x[(i, j)] + 3.0);
        let result = pca(&data, dims).unwrap();

        let mean = x.row_mean();
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for (c, &e) in order.iter().take(dims).enumerate() {
            let axis = eig.eigenvectors.column(e);
            let dot: f64 = (0..d).map(|j| axis[j] * result.components[[c, j]]).sum();
            worst_cos = worst_cos.min(dot.abs());
        }
    }
    let dir = [1.0, -2.0, 0.5];
    let line = Array2::from_shape_fn((50, 3), |(i, j)| 4.0 + (i as f64 * 0.37 - 3.0) * dir[j]);
    let ratio = pca(&line, 1).unwrap().explained_variance_ratio[0];
    let detail = format!("min |cos| vs dense eigensolver {worst_cos:.6} over {PCA_MATRICES} matrices (need > {PCA_MIN_ABS_COS}); line ratio {ratio:.12} (tol {PCA_LINE_TOL:.0e})");
    outcome(
        worst_cos > PCA_MIN_ABS_COS && (ratio - 1.0).abs() <= PCA_LINE_TOL,
        detail,
    )
}

// 13 --------------------------------------------------------------------------

const PIPELINE_CONFIG: &str = "seed = 13
[synth.ref]
scenes = 40
[synth.test]
scenes = 40
mix = { simple_following = 1.0, cut_in = 2.0, platoon_intersection = 1.0 }
[encoder]
layers = 3
hidden = 32
embed_dim = 16
projection_dim = 16
batch = 16
stages = 1
";

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn pipeline_determinism() -> Outcome {
    let runs: Vec<tempfile::TempDir> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            std::fs::write(dir.path().join("run.toml"), PIPELINE_CONFIG).unwrap();
            for cmd in [
                "synth",
                "build-graphs",
                "match",
                "compare",
                "train",
                "embed",
            ] {
                let status = Command::new(env!("CARGO_BIN_EXE_scenecov"))
                    .current_dir(dir.path())
                    .args(["--config", "run.toml", cmd])
                    .output()
                    .unwrap();
                assert!(
                    status.status.success(),
                    "{cmd}: {}",
                    String::from_utf8_lossy(&status.stderr)
                );
            }
            dir
        })
        .collect();
    let (a, b) = (runs[0].path().join("out"), runs[1].path().join("out"));
    let (fa, fb) = (files_under(&a), files_under(&b));
    let differing: Vec<String> = fa
        .iter()
        .filter(|f| {
            std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).ok().unwrap_or_default()
        })
        .map(|f| f.display().to_string())
        .collect();
    let detail = format!(
        "{} artifacts compared, {} differ{}",
        fa.len(),
        differing.len() + usize::from(fa != fb),
        differing
            .first()
            .map(|d| format!("; first: {d}"))
            .unwrap_or_default()
    );
    outcome(fa == fb && differing.is_empty() && !fa.is_empty(), detail)
}

// -----------------------------------------------------------------------------

fn main() {
    let checks: [(u32, &str, fn() -> Outcome); 13] = [
        (1, "graph-construction oracle", graph_construction_oracle),
        (2, "chain and opposite pruning", chain_behavior),
        (3, "matcher oracle", matcher_oracle),
        (4, "catalog conformance", catalog_conformance),
        (5, "hole thresholds", hole_thresholds),
        (6, "co-occurrence algebra", cooccurrence_algebra),
        (7, "gradient check", gradient_check),
        (8, "NT-Xent sanity", nt_xent_sanity),
        (9, "contrastive training signal", training_signal),
        (10, "embedding invariance", embedding_invariance),
        (11, "embedding-space coverage", density_checks),
        (12, "PCA", pca_checks),
        (13, "pipeline determinism", pipeline_determinism),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, check) in checks {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failed += usize::from(!result.pass);
        println!(
            "{} {id:>2} {name:<28} {}",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
