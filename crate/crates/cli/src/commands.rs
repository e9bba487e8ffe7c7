//! One function per subcommand. Each reads earlier artifacts from the
//! output directory, writes its own, and returns a JSON summary.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Axis};
use serde_json::{json, Value};

use scenecov::actor_graph::{build_scene_graphs, ActorGraph};
use scenecov::archetype::{build_coverage_table, ArchetypeCatalog, CoverageTable};
use scenecov::coverage::{
    cooccurrence, cooccurrence_diff, hole_report, structural_coverage, CooccurrenceMatrix,
};
use scenecov::embedding::{train, EmbeddingMatrix, Encoder};
use scenecov::embedding_analytics::{density_coverage, nearest, pca, Metric, Query};
use scenecov::io::{read_json, write_json};
use scenecov::lane_map::LaneMapGraph;
use scenecov::scene::{load_scenes, save_scenes, DatasetRole};
use scenecov::synth::generate_synthetic;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::layout::{require, role_dir, Layout};

pub const ROLES: [DatasetRole; 2] = [DatasetRole::Ref, DatasetRole::Test];

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(scenecov::Error::io(path, e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| io_err(path, e))?,
    ))
}

fn write_csv(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

fn strings<const N: usize>(items: [&str; N]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn shown(path: &Path) -> String {
    path.display().to_string()
}

fn load_map(layout: &Layout) -> CliResult<LaneMapGraph> {
    let path = layout.map();
    require(&path, "synth")?;
    let (map, warnings) = LaneMapGraph::load(&path)?;
    for w in warnings {
        log::warn!("{w:?}");
    }
    Ok(map)
}

pub fn write_graphs(path: &Path, graphs: &[ActorGraph]) -> CliResult<()> {
    let mut w = create(path)?;
    for g in graphs {
        let line = serde_json::to_string(g).map_err(|e| CliError::Internal(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_graphs(path: &Path) -> CliResult<Vec<ActorGraph>> {
    require(path, "build-graphs")?;
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut graphs = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let g = serde_json::from_str(&line).map_err(|source| {
            CliError::Core(scenecov::Error::Json {
                path: shown(path),
                source,
            })
        })?;
        graphs.push(g);
    }
    Ok(graphs)
}

fn read_embeddings(layout: &Layout, role: DatasetRole) -> CliResult<EmbeddingMatrix> {
    let path = layout.embeddings(role);
    require(&path, "embed")?;
    Ok(EmbeddingMatrix::read_csv(&path)?)
}

fn read_coverage(layout: &Layout, role: DatasetRole) -> CliResult<CoverageTable> {
    let path = layout.coverage(role);
    require(&path, "match")?;
    Ok(read_json(&path)?)
}

fn catalog(cfg: &RunConfig) -> CliResult<ArchetypeCatalog> {
    match &cfg.inputs.catalog {
        Some(dir) => Ok(ArchetypeCatalog::load_dir(dir)?),
        None => Ok(ArchetypeCatalog::default()),
    }
}

/// Roles whose input exists; an empty result names the first missing path.
fn present_roles(
    roles: &[DatasetRole],
    path: impl Fn(DatasetRole) -> PathBuf,
    producer: &'static str,
) -> CliResult<Vec<DatasetRole>> {
    if roles.len() == 1 {
        require(&path(roles[0]), producer)?;
        return Ok(roles.to_vec());
    }
    let found: Vec<DatasetRole> = roles
        .iter()
        .copied()
        .filter(|r| path(*r).exists())
        .collect();
    if found.is_empty() {
        return Err(CliError::missing(&path(roles[0]), producer));
    }
    Ok(found)
}

pub fn synth(cfg: &RunConfig, roles: &[DatasetRole]) -> CliResult<Value> {
    let layout = Layout::new(cfg);
    let mut outputs = Vec::new();
    let mut scenes = serde_json::Map::new();
    for (i, &role) in roles.iter().enumerate() {
        let out = generate_synthetic(cfg.synth.spec(role))?;
        if i == 0 {
            out.map.save(&layout.map())?;
            outputs.push(shown(&layout.map()));
        }
        let (scene_path, label_path) = (layout.scenes(role), layout.labels(role));
        save_scenes(&out.scenes, &scene_path)?;
        write_json(&label_path, &out.labels)?;
        scenes.insert(role_dir(role).into(), json!(out.scenes.scenes.len()));
        outputs.extend([shown(&scene_path), shown(&label_path)]);
    }
    Ok(json!({ "outputs": outputs, "scenes": scenes }))
}

pub fn build_graphs(cfg: &RunConfig, roles: &[DatasetRole]) -> CliResult<Value> {
    let layout = Layout::new(cfg);
    let roles = present_roles(roles, |r| layout.scenes(r), "synth")?;
    let map = load_map(&layout)?;
    let mut outputs = Vec::new();
    let mut stats = serde_json::Map::new();
    for role in roles {
        let (set, report) = load_scenes(&layout.scenes(role), Some(&map))?;
        for (scene, msg) in &report.dropped_actors {
            log::warn!("{scene}: {msg}");
        }
        let results = build_scene_graphs(&map, &set, &cfg.construction)?;
        let mut graphs = Vec::with_capacity(results.len());
        let mut rows = Vec::with_capacity(results.len());
        let (mut discovered, mut kept, mut failed) = (0, 0, 0);
        for r in results {
            let warnings = r.warnings.join("; ");
            match r.outcome {
                Ok(built) => {
                    discovered += built.edges_discovered;
                    kept += built.edges_final;
                    rows.push(vec![
                        r.scene_id,
                        built.graph.node_count().to_string(),
                        built.edges_discovered.to_string(),
                        built.edges_final.to_string(),
                        "ok".into(),
                        warnings,
                    ]);
                    graphs.push(built.graph);
                }
                Err(msg) => {
                    failed += 1;
                    rows.push(vec![
                        r.scene_id,
                        "0".into(),
                        "0".into(),
                        "0".into(),
                        format!("error: {msg}"),
                        warnings,
                    ]);
                }
            }
        }
        write_graphs(&layout.graphs(role), &graphs)?;
        let header = strings([
            "scene_id",
            "nodes",
            "edges_discovered",
            "edges_final",
            "status",
            "warnings",
        ]);
        write_csv(&layout.graph_stats(role), &header, rows)?;
        outputs.extend([
            shown(&layout.graphs(role)),
            shown(&layout.graph_stats(role)),
        ]);
        stats.insert(
            role_dir(role).into(),
            json!({
                "graphs": graphs.len(),
                "failed": failed,
                "degenerate_scenes": report.degenerate_scenes.len(),
                "edges_discovered": discovered,
                "edges_final": kept,
            }),
        );
    }
    Ok(json!({ "outputs": outputs, "stats": stats }))
}

pub fn match_archetypes(cfg: &RunConfig, roles: &[DatasetRole]) -> CliResult<Value> {
    let layout = Layout::new(cfg);
    let roles = present_roles(roles, |r| layout.graphs(r), "build-graphs")?;
    let catalog = catalog(cfg)?;
    let mut outputs = Vec::new();
    let mut summary = serde_json::Map::new();
    for role in roles {
        let graphs = read_graphs(&layout.graphs(role))?;
        let table = build_coverage_table(&catalog, &graphs, &cfg.matching);
        write_json(&layout.coverage(role), &table)?;
        let mut header = strings(["scene_id", "node_coverage"]);
        header.extend(table.archetypes.iter().cloned());
        let rows = table.scene_ids.iter().enumerate().map(|(i, id)| {
            let mut row = vec![id.clone(), table.node_coverage[i].fraction.to_string()];
            row.extend(table.hits[i].iter().map(|&h| u8::from(h).to_string()));
            row
        });
        write_csv(&layout.coverage_csv(role), &header, rows)?;
        outputs.extend([
            shown(&layout.coverage(role)),
            shown(&layout.coverage_csv(role)),
        ]);
        let node = table.dataset_node_coverage();
        summary.insert(
            role_dir(role).into(),
            json!({ "scenes": table.scene_count(), "node_coverage": node.fraction }),
        );
    }
    Ok(json!({ "outputs": outputs, "coverage": summary }))
}

fn matrix_rows(m: &CooccurrenceMatrix) -> impl Iterator<Item = Vec<String>> + '_ {
    m.archetypes.iter().zip(&m.cells).map(|(name, cells)| {
        let mut row = vec![name.clone()];
        row.extend(cells.iter().map(|c| c.to_string()));
        row
    })
}

pub fn compare(cfg: &RunConfig) -> CliResult<Value> {
    let layout = Layout::new(cfg);
    let reference = read_coverage(&layout, DatasetRole::Ref)?;
    let test = read_coverage(&layout, DatasetRole::Test)?;
    let dir = layout.dir("compare");
    let structural = structural_coverage(&reference, &test)?;
    let rows = structural.sorted_by_mean();
    write_csv(
        &dir.join("structural.csv"),
        &strings(["archetype", "coverage_ref", "coverage_test", "delta_pp"]),
        rows.iter().map(|r| {
            vec![
                r.archetype.clone(),
                r.coverage_ref.to_string(),
                r.coverage_test.to_string(),
                r.delta_pp.to_string(),
            ]
        }),
    )?;

    let holes = hole_report(&reference, &test, &cfg.holes)?;
    let mut hole_rows = Vec::new();
    let mut hole_bins = 0;
    for e in &holes.entries {
        let h = &e.histogram;
        hole_bins += h.hole_count();
        for i in 0..h.ref_density.len() {
            let (lo, hi) = h.bin_range(i);
            hole_rows.push(vec![
                e.archetype.clone(),
                e.feature.as_str().to_string(),
                e.key.clone(),
                lo.to_string(),
                hi.to_string(),
                h.ref_density[i].to_string(),
                h.test_density[i].to_string(),
                u8::from(h.hole[i]).to_string(),
            ]);
        }
    }
    write_csv(
        &dir.join("holes.csv"),
        &strings([
            "archetype",
            "feature",
            "key",
            "bin_start",
            "bin_end",
            "ref_density",
            "test_density",
            "hole",
        ]),
        hole_rows,
    )?;

    let co_ref = cooccurrence(&reference);
    let co_test = cooccurrence(&test);
    let co_diff = cooccurrence_diff(&co_ref, &co_test)?;
    let mut header = vec!["archetype".to_string()];
    header.extend(co_ref.archetypes.iter().cloned());
    for (name, m) in [
        ("cooccurrence_ref.csv", &co_ref),
        ("cooccurrence_test.csv", &co_test),
        ("cooccurrence_diff.csv", &co_diff),
    ] {
        write_csv(&dir.join(name), &header, matrix_rows(m))?;
    }
    let max_diff = co_diff
        .cells
        .iter()
        .flatten()
        .fold(0.0f64, |a, &b| a.max(b.abs()));

    let summary = json!({
        "scenes_ref": reference.scene_count(),
        "scenes_test": test.scene_count(),
        "node_coverage_ref": reference.dataset_node_coverage().fraction,
        "node_coverage_test": test.dataset_node_coverage().fraction,
        "structural": rows,
        "histograms": holes.entries.len(),
        "hole_bins": hole_bins,
        "max_abs_cooccurrence_diff_pp": max_diff,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    let outputs: Vec<String> = [
        "structural.csv",
        "holes.csv",
        "cooccurrence_ref.csv",
        "cooccurrence_test.csv",
        "cooccurrence_diff.csv",
        "summary.json",
    ]
    .iter()
    .map(|f| shown(&dir.join(f)))
    .collect();
    Ok(
        json!({ "outputs": outputs, "hole_bins": hole_bins, "max_abs_cooccurrence_diff_pp": max_diff }),
    )
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn train_encoder(cfg: &RunConfig, role: DatasetRole) -> CliResult<Value> {
    let layout = Layout::new(cfg);
    let graphs = read_graphs(&layout.graphs(role))?;
    let outcome = train(&cfg.encoder, &graphs)?;
    let checkpoint = layout.checkpoint();
    outcome.encoder.save(&checkpoint)?;
    let history = layout.dir("model").join("loss_history.csv");
    write_csv(
        &history,
        &strings(["epoch", "stage", "lr", "train_loss", "val_loss"]),
        outcome.history.iter().map(|r| {
            vec![
                r.epoch.to_string(),
                r.stage.to_string(),
                r.lr.to_string(),
                r.train_loss.to_string(),
                opt_num(r.val_loss),
            ]
        }),
    )?;
    let first = outcome.history.first().map(|r| r.train_loss);
    let last = outcome.history.last().map(|r| r.train_loss);
    Ok(json!({
        "outputs": [shown(&checkpoint), shown(&history)],
        "train_graphs": outcome.train_indices.len(),
        "val_graphs": outcome.val_indices.len(),
        "initial_train_loss": first,
        "final_train_loss": last,
    }))
}

pub fn embed(cfg: &RunConfig, roles: &[DatasetRole]) -> CliResult<Value> {
    let layout = Layout::new(cfg);
    let checkpoint = layout.checkpoint();
    require(&checkpoint, "train")?;
    let roles = present_roles(roles, |r| layout.graphs(r), "build-graphs")?;
    let encoder = Encoder::load(&checkpoint)?;
    let mut outputs = Vec::new();
    for role in roles {
        let graphs = read_graphs(&layout.graphs(role))?;
        let m = encoder.embed(&graphs)?;
        m.write_csv(&layout.embeddings(role))?;
        outputs.push(shown(&layout.embeddings(role)));
    }
    Ok(json!({ "outputs": outputs }))
}

#[derive(Debug, Clone)]
pub struct NnArgs {
    pub role: DatasetRole,
    pub against: Option<DatasetRole>,
    pub scene: Option<String>,
    pub row: Option<usize>,
    pub k: Option<usize>,
    pub metric: Option<Metric>,
}

pub fn nn(cfg: &RunConfig, args: &NnArgs) -> CliResult<Value> {
    let layout = Layout::new(cfg);
    let queries = read_embeddings(&layout, args.role)?;
    let row = match (&args.scene, args.row) {
        (Some(id), None) => queries
            .scene_ids
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| {
                CliError::field(
                    "--scene",
                    format!("no scene `{id}` in {} embeddings", role_dir(args.role)),
                )
            })?,
        (None, Some(r)) if r < queries.len() => r,
        (None, Some(r)) => {
            return Err(CliError::field(
                "--row",
                format!("{r} out of range 0..{}", queries.len()),
            ))
        }
        _ => return Err(CliError::usage("give exactly one of --scene or --row")),
    };
    let target_role = args.against.unwrap_or(args.role);
    let k = args.k.unwrap_or(cfg.nn.k);
    let metric = args.metric.unwrap_or(cfg.nn.metric);
    let (target, hits) = if target_role == args.role {
        let hits = nearest(&queries.data, Query::Row(row), metric, k)?;
        (queries.clone(), hits)
    } else {
        let target = read_embeddings(&layout, target_role)?;
        let hits = nearest(
            &target.data,
            Query::Vector(queries.data.row(row)),
            metric,
            k,
        )?;
        (target, hits)
    };
    let path = layout.dir("nn").join("neighbors.csv");
    write_csv(
        &path,
        &strings(["rank", "scene_id", "source_tag", "distance"]),
        hits.indices
            .iter()
            .zip(&hits.distances)
            .enumerate()
            .map(|(rank, (&i, d))| {
                vec![
                    (rank + 1).to_string(),
                    target.scene_ids[i].clone(),
                    target.source_tags[i].clone(),
                    d.to_string(),
                ]
            }),
    )?;
    let neighbors: Vec<Value> = hits
        .indices
        .iter()
        .zip(&hits.distances)
        .map(|(&i, d)| json!({ "scene_id": target.scene_ids[i], "distance": d }))
        .collect();
    Ok(json!({
        "outputs": [shown(&path)],
        "query": queries.scene_ids[row],
        "neighbors": neighbors,
        "truncated": hits.truncated,
    }))
}

pub fn pca_report(cfg: &RunConfig, dims: Option<usize>) -> CliResult<Value> {
    let layout = Layout::new(cfg);
    let mut sets = vec![(
        DatasetRole::Ref,
        read_embeddings(&layout, DatasetRole::Ref)?,
    )];
    if layout.embeddings(DatasetRole::Test).exists() {
        sets.push((
            DatasetRole::Test,
            read_embeddings(&layout, DatasetRole::Test)?,
        ));
    }
    let views: Vec<_> = sets.iter().map(|(_, m)| m.data.view()).collect();
    let data = concatenate(Axis(0), &views)
        .map_err(|e| CliError::Core(scenecov::Error::Shape(e.to_string())))?;
    let dims = dims.unwrap_or(cfg.pca.dims);
    let result = pca(&data, dims)?;
    let dir = layout.dir("pca");

    let mut header = strings(["role", "scene_id", "source_tag"]);
    header.extend((1..=dims).map(|i| format!("pc{i}")));
    let mut rows = Vec::with_capacity(data.nrows());
    let mut offset = 0;
    for (role, m) in &sets {
        for i in 0..m.len() {
            let mut row = vec![
                role_dir(*role).to_string(),
                m.scene_ids[i].clone(),
                m.source_tags[i].clone(),
            ];
            row.extend(
                result
                    .projected
                    .row(offset + i)
                    .iter()
                    .map(|v| v.to_string()),
            );
            rows.push(row);
        }
        offset += m.len();
    }
    write_csv(&dir.join("projected.csv"), &header, rows)?;

    let mut header = vec!["component".to_string()];
    header.extend((0..data.ncols()).map(|j| format!("e{j}")));
    write_csv(
        &dir.join("components.csv"),
        &header,
        result.components.outer_iter().enumerate().map(|(i, axis)| {
            let mut row = vec![format!("pc{}", i + 1)];
            row.extend(axis.iter().map(|v| v.to_string()));
            row
        }),
    )?;
    let summary = json!({
        "points": data.nrows(),
        "dims": dims,
        "explained_variance": result.explained_variance,
        "explained_variance_ratio": result.explained_variance_ratio,
        "rank_deficient": result.rank_deficient,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(json!({
        "outputs": [shown(&dir.join("projected.csv")), shown(&dir.join("components.csv")), shown(&dir.join("summary.json"))],
        "explained_variance_ratio": result.explained_variance_ratio,
    }))
}

pub fn density(cfg: &RunConfig) -> CliResult<Value> {
    let layout = Layout::new(cfg);
    let reference = read_embeddings(&layout, DatasetRole::Ref)?;
    let test = read_embeddings(&layout, DatasetRole::Test)?;
    let report = density_coverage(&reference.data, &test.data, &cfg.density)?;
    let dir = layout.dir("density");
    write_csv(
        &dir.join("points.csv"),
        &strings(["scene_id", "source_tag", "density", "relevant", "covered"]),
        (0..reference.len()).map(|i| {
            vec![
                reference.scene_ids[i].clone(),
                reference.source_tags[i].clone(),
                report.density[i].to_string(),
                u8::from(report.relevant[i]).to_string(),
                u8::from(report.covered[i]).to_string(),
            ]
        }),
    )?;
    let summary = json!({
        "params": cfg.density,
        "ref_points": reference.len(),
        "test_points": test.len(),
        "density_threshold": report.density_threshold,
        "radius": report.radius,
        "relevant_count": report.relevant_count,
        "covered_count": report.covered_count,
        "covered_fraction": report.covered_fraction,
    });
    write_json(&dir.join("report.json"), &summary)?;
    Ok(json!({
        "outputs": [shown(&dir.join("points.csv")), shown(&dir.join("report.json"))],
        "covered_fraction": report.covered_fraction,
    }))
}
