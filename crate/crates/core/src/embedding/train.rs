//! Contrastive training loop, checkpoints and batch embedding.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::augment;
use super::features::{featurize, FeatureStats, FeaturizedGraph};
use super::loss::nt_xent;
use super::model::{backward, forward, EncoderConfig, ModelParams, NamedTensor};
use super::optim::AdamW;
use crate::actor_graph::ActorGraph;
use crate::error::{Error, Result};

const STREAM_INIT: u64 = 0;
const STREAM_SPLIT: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_EVAL: u64 = 3;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Learning rate for a global optimizer step: linear warmup over the first
/// `warmup_epochs` epochs, times `lr_decay^stage`.
pub fn learning_rate(cfg: &EncoderConfig, step: usize, steps_per_epoch: usize) -> f64 {
    let epoch = step / steps_per_epoch.max(1);
    let stage = epoch / cfg.epochs_per_stage.max(1);
    let warmup_steps = cfg.warmup_epochs * steps_per_epoch;
    let warm = if warmup_steps == 0 {
        1.0
    } else {
        ((step + 1) as f64 / warmup_steps as f64).min(1.0)
    };
    cfg.lr0 * cfg.lr_decay.powi(stage as i32) * warm
}

/// Batches of indices; a trailing batch with fewer than two graphs is dropped.
fn batches(indices: &[usize], size: usize) -> Vec<&[usize]> {
    indices.chunks(size).filter(|c| c.len() >= 2).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the evaluation before any update.
    pub epoch: usize,
    pub stage: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// A trained encoder with the statistics used to featurize its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub stats: FeatureStats,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: EncoderConfig,
    stats: FeatureStats,
    tensors: Vec<NamedTensor>,
}

const CHECKPOINT_FORMAT: &str = "scenecov-encoder";

impl Encoder {
    pub fn new(config: EncoderConfig, stats: FeatureStats) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, &mut rng_for(config.seed, STREAM_INIT));
        Ok(Self {
            config,
            stats,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            config: self.config.clone(),
            stats: self.stats,
            tensors: self.params.to_named(),
        };
        crate::io::write_json(path, &ckpt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = crate::io::read_json(path)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != 1 {
            return Err(Error::Schema {
                index: 0,
                field: "format".into(),
                reason: format!("expected {CHECKPOINT_FORMAT} version 1"),
            });
        }
        let params = ModelParams::from_named(&ckpt.config, &ckpt.tensors)?;
        Ok(Self {
            config: ckpt.config,
            stats: ckpt.stats,
            params,
        })
    }

    pub fn featurize(&self, graph: &ActorGraph) -> Result<FeaturizedGraph> {
        featurize(graph, &self.stats)
    }

    pub fn embed_featurized(&self, graph: &FeaturizedGraph) -> Result<Array1<f64>> {
        Ok(forward(&self.params, graph)?.embedding)
    }

    /// Embeds graphs in order; rows are unit vectors.
    pub fn embed(&self, graphs: &[ActorGraph]) -> Result<EmbeddingMatrix> {
        let rows = graphs
            .par_iter()
            .map(|g| self.embed_featurized(&self.featurize(g)?))
            .collect::<Result<Vec<_>>>()?;
        let mut data = Array2::zeros((rows.len(), self.config.embed_dim));
        for (mut dst, src) in data.rows_mut().into_iter().zip(&rows) {
            dst.assign(src);
        }
        Ok(EmbeddingMatrix {
            scene_ids: graphs.iter().map(|g| g.scene_id.clone()).collect(),
            source_tags: graphs.iter().map(|g| g.source_tag.clone()).collect(),
            data,
        })
    }

    /// Mean NT-Xent over batches of `indices`, with one fixed augmentation draw.
    pub fn evaluate_loss(
        &self,
        feats: &[FeaturizedGraph],
        indices: &[usize],
    ) -> Result<Option<f64>> {
        let mut rng = rng_for(self.config.seed, STREAM_EVAL);
        let mut total = 0.0;
        let mut count = 0;
        for batch in batches(indices, self.config.batch) {
            let views = make_views(&self.config, feats, batch, &mut rng);
            let projections = views
                .par_iter()
                .map(|v| forward(&self.params, v).map(|c| c.projection))
                .collect::<Result<Vec<_>>>()?;
            let (loss, _) = nt_xent(&stack(&projections), self.config.temperature)?;
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        Ok((count > 0).then(|| total / count as f64))
    }
}

fn stack(rows: &[Array1<f64>]) -> Array2<f64> {
    let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).expect("rows share a width")
}

/// Two augmented views per graph: first views of the whole batch, then second views.
fn make_views(
    cfg: &EncoderConfig,
    feats: &[FeaturizedGraph],
    batch: &[usize],
    rng: &mut ChaCha8Rng,
) -> Vec<FeaturizedGraph> {
    let mut first = Vec::with_capacity(batch.len());
    let mut second = Vec::with_capacity(batch.len());
    for &i in batch {
        first.push(augment(&feats[i], cfg.noise_sigma, cfg.edge_drop_p, rng));
        second.push(augment(&feats[i], cfg.noise_sigma, cfg.edge_drop_p, rng));
    }
    first.extend(second);
    first
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: Encoder,
    pub history: Vec<EpochRecord>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Scene-level split: a seeded shuffle, the last `val_fraction` goes to validation.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, STREAM_SPLIT));
    let n_val = ((n as f64 * val_fraction).floor() as usize).min(n.saturating_sub(2));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

pub fn train(config: &EncoderConfig, graphs: &[ActorGraph]) -> Result<TrainOutcome> {
    config.validate()?;
    if graphs.len() < 2 {
        return Err(Error::TooFew {
            what: "graphs for training",
            got: graphs.len(),
        });
    }
    if graphs.iter().any(|g| g.node_count() == 0) {
        return Err(Error::EmptyGraph);
    }
    let (train_idx, val_idx) = split_indices(graphs.len(), config.val_fraction, config.seed);
    let stats = FeatureStats::fit(train_idx.iter().map(|&i| &graphs[i]));
    let mut encoder = Encoder::new(config.clone(), stats)?;
    let feats = graphs
        .iter()
        .map(|g| featurize(g, &stats))
        .collect::<Result<Vec<_>>>()?;

    let steps_per_epoch = batches(&train_idx, config.batch).len();
    let epochs = config.stages * config.epochs_per_stage;
    let mut history = vec![EpochRecord {
        epoch: 0,
        stage: 0,
        lr: 0.0,
        train_loss: encoder
            .evaluate_loss(&feats, &train_idx)?
            .expect("at least two training graphs"),
        val_loss: encoder.evaluate_loss(&feats, &val_idx)?,
    }];
    log::info!("initial loss {:.4}", history[0].train_loss);

    let mut opt = AdamW::new(&encoder.params, config.weight_decay);
    let mut rng = rng_for(config.seed, STREAM_TRAIN);
    let mut order = train_idx.clone();
    let mut step = 0;
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0;
        let mut lr = 0.0;
        for batch in batches(&order, config.batch) {
            let views = make_views(config, &feats, batch, &mut rng);
            let params = &encoder.params;
            let caches = views
                .par_iter()
                .map(|v| forward(params, v))
                .collect::<Result<Vec<_>>>()?;
            let projections: Vec<_> = caches.iter().map(|c| c.projection.clone()).collect();
            let (loss, dz) = nt_xent(&stack(&projections), config.temperature)?;
            let zero_emb = Array1::zeros(config.embed_dim);
            let grads: Vec<ModelParams> = caches
                .par_iter()
                .enumerate()
                .map(|(i, c)| backward(params, c, dz.row(i), zero_emb.view()))
                .collect();
            let mut grad = grads[0].clone();
            for g in &grads[1..] {
                grad.add_assign(g);
            }
            lr = learning_rate(config, step, steps_per_epoch);
            opt.update(&mut encoder.params, &grad, lr);
            step += 1;
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        if !encoder.params.is_finite() {
            return Err(Error::Shape(format!(
                "parameters diverged in epoch {}",
                epoch + 1
            )));
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            stage: epoch / config.epochs_per_stage,
            lr,
            train_loss: total / count.max(1) as f64,
            val_loss: encoder.evaluate_loss(&feats, &val_idx)?,
        };
        log::info!("epoch {} loss {:.4}", record.epoch, record.train_loss);
        history.push(record);
    }
    Ok(TrainOutcome {
        encoder,
        history,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

/// Rows of unit-norm scene embeddings with their ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub scene_ids: Vec<String>,
    pub source_tags: Vec<String>,
    pub data: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn len(&self) -> usize {
        self.scene_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scene_ids.is_empty()
    }

    /// CSV with columns `scene_id, source_tag, e0, e1, ...`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header = vec!["scene_id".to_string(), "source_tag".to_string()];
        header.extend((0..self.data.ncols()).map(|j| format!("e{j}")));
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
        for (i, row) in self.data.rows().into_iter().enumerate() {
            let mut rec = vec![self.scene_ids[i].clone(), self.source_tags[i].clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut ids = Vec::new();
        let mut tags = Vec::new();
        let mut values = Vec::new();
        let mut width = None;
        for (index, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            if rec.len() < 3 {
                return Err(Error::Schema {
                    index,
                    field: "row".into(),
                    reason: "needs an id, a tag and values".into(),
                });
            }
            let w = rec.len() - 2;
            if *width.get_or_insert(w) != w {
                return Err(Error::Schema {
                    index,
                    field: "row".into(),
                    reason: "ragged row".into(),
                });
            }
            ids.push(rec[0].to_string());
            tags.push(rec[1].to_string());
            for (j, cell) in rec.iter().skip(2).enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Schema {
                    index,
                    field: format!("e{j}"),
                    reason: format!("not a number: {cell:?}"),
                })?;
                values.push(v);
            }
        }
        let data = Array2::from_shape_vec((ids.len(), width.unwrap_or(0)), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Self {
            scene_ids: ids,
            source_tags: tags,
            data,
        })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    }
}
