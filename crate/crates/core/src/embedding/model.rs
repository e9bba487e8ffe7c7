//! GINE encoder, embedding MLP and projection head with hand-written backprop.
//!
//! Activations are row-major: a layer computes `H · W + b` with `H` holding
//! one node per row.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeaturizedGraph, EDGE_FEATURES, NODE_FEATURES};
use crate::error::{Error, Result};

/// Encoder architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub projection_dim: usize,
    pub temperature: f64,
    pub noise_sigma: f64,
    pub edge_drop_p: f64,
    pub batch: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub stages: usize,
    pub epochs_per_stage: usize,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 5,
            hidden: 384,
            embed_dim: 192,
            projection_dim: 96,
            temperature: 0.07,
            noise_sigma: 0.08,
            edge_drop_p: 0.1,
            batch: 384,
            lr0: 0.0015,
            lr_decay: 0.85,
            stages: 15,
            epochs_per_stage: 1,
            warmup_epochs: 3,
            weight_decay: 5e-6,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// Small profile that trains in minutes on a laptop CPU.
    pub fn desk() -> Self {
        Self {
            hidden: 64,
            embed_dim: 32,
            batch: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("embed_dim", self.embed_dim),
            ("projection_dim", self.projection_dim),
            ("batch", self.batch),
            ("stages", self.stages),
            ("epochs_per_stage", self.epochs_per_stage),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::param(name, "must be positive"));
            }
        }
        if self.batch < 2 {
            return Err(Error::param("batch", "must be at least 2"));
        }
        let positive = [
            ("temperature", self.temperature),
            ("lr0", self.lr0),
            ("lr_decay", self.lr_decay),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(name, "must be positive"));
            }
        }
        if !(self.noise_sigma >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::param(
                "noise_sigma",
                "noise_sigma and weight_decay must be non-negative",
            ));
        }
        for (name, p) in [
            ("edge_drop_p", self.edge_drop_p),
            ("val_fraction", self.val_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::param(name, "must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// One GINE layer: edge projection and a two-layer node MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct GineLayer {
    pub eps: f64,
    pub we: Array2<f64>,
    pub be: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<GineLayer>,
    pub emb_w1: Array2<f64>,
    pub emb_b1: Array1<f64>,
    pub emb_w2: Array2<f64>,
    pub emb_b2: Array1<f64>,
    pub proj_w1: Array2<f64>,
    pub proj_b1: Array1<f64>,
    pub proj_w2: Array2<f64>,
    pub proj_b2: Array1<f64>,
}

/// Named flat tensor, used for checkpoints and parameter iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        let h = cfg.hidden;
        let layers = (0..cfg.layers)
            .map(|l| {
                let d_in = if l == 0 { NODE_FEATURES } else { h };
                GineLayer {
                    eps: 0.0,
                    we: Array2::zeros((EDGE_FEATURES, d_in)),
                    be: Array1::zeros(d_in),
                    w1: Array2::zeros((d_in, h)),
                    b1: Array1::zeros(h),
                    w2: Array2::zeros((h, h)),
                    b2: Array1::zeros(h),
                }
            })
            .collect();
        Self {
            layers,
            emb_w1: Array2::zeros((3 * h, h)),
            emb_b1: Array1::zeros(h),
            emb_w2: Array2::zeros((h, cfg.embed_dim)),
            emb_b2: Array1::zeros(cfg.embed_dim),
            proj_w1: Array2::zeros((cfg.embed_dim, cfg.embed_dim)),
            proj_b1: Array1::zeros(cfg.embed_dim),
            proj_w2: Array2::zeros((cfg.embed_dim, cfg.projection_dim)),
            proj_b2: Array1::zeros(cfg.projection_dim),
        }
    }

    /// Glorot-uniform weights, zero biases and zero epsilons.
    pub fn init(cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(cfg);
        let mut glorot = |w: &mut Array2<f64>| {
            let (fan_in, fan_out) = w.dim();
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            w.mapv_inplace(|_| rng.gen_range(-a..a));
        };
        for layer in &mut p.layers {
            glorot(&mut layer.we);
            glorot(&mut layer.w1);
            glorot(&mut layer.w2);
        }
        glorot(&mut p.emb_w1);
        glorot(&mut p.emb_w2);
        glorot(&mut p.proj_w1);
        glorot(&mut p.proj_w2);
        p
    }

    /// All parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((
                format!("layer{l}.eps"),
                vec![],
                std::slice::from_ref(&layer.eps),
            ));
            out.push((
                format!("layer{l}.we"),
                layer.we.shape().to_vec(),
                layer.we.as_slice().unwrap(),
            ));
            out.push((
                format!("layer{l}.be"),
                layer.be.shape().to_vec(),
                layer.be.as_slice().unwrap(),
            ));
            out.push((
                format!("layer{l}.w1"),
                layer.w1.shape().to_vec(),
                layer.w1.as_slice().unwrap(),
            ));
            out.push((
                format!("layer{l}.b1"),
                layer.b1.shape().to_vec(),
                layer.b1.as_slice().unwrap(),
            ));
            out.push((
                format!("layer{l}.w2"),
                layer.w2.shape().to_vec(),
                layer.w2.as_slice().unwrap(),
            ));
            out.push((
                format!("layer{l}.b2"),
                layer.b2.shape().to_vec(),
                layer.b2.as_slice().unwrap(),
            ));
        }
        let heads: [(&str, &[usize], &[f64]); 8] = [
            (
                "emb_w1",
                self.emb_w1.shape(),
                self.emb_w1.as_slice().unwrap(),
            ),
            (
                "emb_b1",
                self.emb_b1.shape(),
                self.emb_b1.as_slice().unwrap(),
            ),
            (
                "emb_w2",
                self.emb_w2.shape(),
                self.emb_w2.as_slice().unwrap(),
            ),
            (
                "emb_b2",
                self.emb_b2.shape(),
                self.emb_b2.as_slice().unwrap(),
            ),
            (
                "proj_w1",
                self.proj_w1.shape(),
                self.proj_w1.as_slice().unwrap(),
            ),
            (
                "proj_b1",
                self.proj_b1.shape(),
                self.proj_b1.as_slice().unwrap(),
            ),
            (
                "proj_w2",
                self.proj_w2.shape(),
                self.proj_w2.as_slice().unwrap(),
            ),
            (
                "proj_b2",
                self.proj_b2.shape(),
                self.proj_b2.as_slice().unwrap(),
            ),
        ];
        out.extend(
            heads
                .into_iter()
                .map(|(n, s, d)| (n.to_string(), s.to_vec(), d)),
        );
        out
    }

    /// Mutable views of all tensors, in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            out.push(std::slice::from_mut(&mut layer.eps));
            out.push(layer.we.as_slice_mut().unwrap());
            out.push(layer.be.as_slice_mut().unwrap());
            out.push(layer.w1.as_slice_mut().unwrap());
            out.push(layer.b1.as_slice_mut().unwrap());
            out.push(layer.w2.as_slice_mut().unwrap());
            out.push(layer.b2.as_slice_mut().unwrap());
        }
        out.push(self.emb_w1.as_slice_mut().unwrap());
        out.push(self.emb_b1.as_slice_mut().unwrap());
        out.push(self.emb_w2.as_slice_mut().unwrap());
        out.push(self.emb_b2.as_slice_mut().unwrap());
        out.push(self.proj_w1.as_slice_mut().unwrap());
        out.push(self.proj_b1.as_slice_mut().unwrap());
        out.push(self.proj_w2.as_slice_mut().unwrap());
        out.push(self.proj_b2.as_slice_mut().unwrap());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src.2) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.2.iter().all(|x| x.is_finite()))
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.tensors()
            .into_iter()
            .map(|(name, shape, data)| NamedTensor {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect()
    }

    pub fn from_named(cfg: &EncoderConfig, tensors: &[NamedTensor]) -> Result<Self> {
        let mut p = Self::zeros(cfg);
        let expected: Vec<(String, Vec<usize>)> =
            p.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
        if expected.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, model needs {}",
                tensors.len(),
                expected.len()
            )));
        }
        for ((dst, (name, shape)), t) in p.tensors_mut().into_iter().zip(&expected).zip(tensors) {
            if &t.name != name || &t.shape != shape || t.data.len() != dst.len() {
                return Err(Error::Shape(format!(
                    "tensor {} {:?} does not fit {} {:?}",
                    t.name, t.shape, name, shape
                )));
            }
            dst.copy_from_slice(&t.data);
        }
        Ok(p)
    }
}

fn relu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|x| x.max(0.0))
}

fn relu_mask(pre: &Array2<f64>, grad: &mut Array2<f64>) {
    grad.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Row-major copy when needed, so tensors can be viewed as flat slices.
fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn row(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(Axis(0))
}

struct LayerCache {
    h_in: Array2<f64>,
    msg_pre: Array2<f64>,
    z: Array2<f64>,
    u1: Array2<f64>,
    r1: Array2<f64>,
}

/// Everything backward needs from a forward pass.
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    h_out: Array2<f64>,
    argmax: Vec<usize>,
    g: Array2<f64>,
    q1: Array2<f64>,
    r: Array2<f64>,
    y_norm: f64,
    p1: Array2<f64>,
    rp: Array2<f64>,
    src: Vec<usize>,
    dst: Vec<usize>,
    e: Array2<f64>,
    pub embedding: Array1<f64>,
    pub projection: Array1<f64>,
}

/// Column-wise max and the first row attaining it.
fn column_max(h: &Array2<f64>) -> (Array1<f64>, Vec<usize>) {
    let mut best = h.row(0).to_owned();
    let mut arg = vec![0; h.ncols()];
    for (i, r) in h.rows().into_iter().enumerate().skip(1) {
        for j in 0..h.ncols() {
            if r[j] > best[j] {
                best[j] = r[j];
                arg[j] = i;
            }
        }
    }
    (best, arg)
}

/// Runs the encoder and projection head on one graph.
pub fn forward(params: &ModelParams, graph: &FeaturizedGraph) -> Result<ForwardCache> {
    let n = graph.node_count();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let first_in = params
        .layers
        .first()
        .map_or(NODE_FEATURES, |l| l.we.ncols());
    if graph.x.ncols() != first_in || graph.e.ncols() != EDGE_FEATURES {
        return Err(Error::Shape("feature widths do not match the model".into()));
    }
    let mut h = graph.x.clone();
    let mut caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let gathered = h.select(Axis(0), &graph.src);
        let msg_pre = gathered + graph.e.dot(&layer.we) + &layer.be;
        let msg = relu(&msg_pre);
        let mut z = h.mapv(|x| (1.0 + layer.eps) * x);
        for (k, &d) in graph.dst.iter().enumerate() {
            let mut target = z.row_mut(d);
            target += &msg.row(k);
        }
        let u1 = z.dot(&layer.w1) + &layer.b1;
        let r1 = relu(&u1);
        let h_out = r1.dot(&layer.w2) + &layer.b2;
        caches.push(LayerCache {
            h_in: h,
            msg_pre,
            z,
            u1,
            r1,
        });
        h = h_out;
    }
    let sum = h.sum_axis(Axis(0));
    let mean = &sum / n as f64;
    let (max, argmax) = column_max(&h);
    let g = row(&concatenate![Axis(0), mean, max, sum]);
    let q1 = g.dot(&params.emb_w1) + &params.emb_b1;
    let r = relu(&q1);
    let y = r.dot(&params.emb_w2) + &params.emb_b2;
    let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let d = y.ncols();
    let embedding = if y_norm > 0.0 {
        y.row(0).mapv(|v| v / y_norm)
    } else {
        // a zero vector has no direction; fall back to a fixed unit vector
        Array1::from_elem(d, 1.0 / (d as f64).sqrt())
    };
    let p1 = row(&embedding).dot(&params.proj_w1) + &params.proj_b1;
    let rp = relu(&p1);
    let projection = (rp.dot(&params.proj_w2) + &params.proj_b2)
        .row(0)
        .to_owned();
    Ok(ForwardCache {
        layers: caches,
        h_out: h,
        argmax,
        g,
        q1,
        r,
        y_norm,
        p1,
        rp,
        src: graph.src.clone(),
        dst: graph.dst.clone(),
        e: graph.e.clone(),
        embedding,
        projection,
    })
}

/// Gradient of `v / |v|` at `v`, given the upstream gradient and the unit vector.
pub fn normalize_backward(
    unit: ArrayView1<f64>,
    norm: f64,
    upstream: ArrayView1<f64>,
) -> Array1<f64> {
    if norm <= 0.0 {
        return Array1::zeros(unit.len());
    }
    let along = unit.dot(&upstream);
    (&upstream - &(&unit * along)) / norm
}

/// Parameter gradients given dL/d(projection) and dL/d(embedding).
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    d_projection: ArrayView1<f64>,
    d_embedding: ArrayView1<f64>,
) -> ModelParams {
    let mut grad = ModelParams {
        layers: params
            .layers
            .iter()
            .map(|l| GineLayer {
                eps: 0.0,
                we: Array2::zeros(l.we.raw_dim()),
                be: Array1::zeros(l.be.raw_dim()),
                w1: Array2::zeros(l.w1.raw_dim()),
                b1: Array1::zeros(l.b1.raw_dim()),
                w2: Array2::zeros(l.w2.raw_dim()),
                b2: Array1::zeros(l.b2.raw_dim()),
            })
            .collect(),
        emb_w1: Array2::zeros(params.emb_w1.raw_dim()),
        emb_b1: Array1::zeros(params.emb_b1.raw_dim()),
        emb_w2: Array2::zeros(params.emb_w2.raw_dim()),
        emb_b2: Array1::zeros(params.emb_b2.raw_dim()),
        proj_w1: Array2::zeros(params.proj_w1.raw_dim()),
        proj_b1: Array1::zeros(params.proj_b1.raw_dim()),
        proj_w2: Array2::zeros(params.proj_w2.raw_dim()),
        proj_b2: Array1::zeros(params.proj_b2.raw_dim()),
    };

    // projection head
    let dz = row(&d_projection.to_owned());
    grad.proj_b2 = d_projection.to_owned();
    grad.proj_w2 = standard(cache.rp.t().dot(&dz));
    let mut dp1 = dz.dot(&params.proj_w2.t());
    relu_mask(&cache.p1, &mut dp1);
    grad.proj_b1 = dp1.row(0).to_owned();
    grad.proj_w1 = standard(row(&cache.embedding).t().dot(&dp1));
    let d_emb = dp1.dot(&params.proj_w1.t()).row(0).to_owned() + d_embedding;

    // l2 normalization and embedding MLP
    let dy = row(&normalize_backward(
        cache.embedding.view(),
        cache.y_norm,
        d_emb.view(),
    ));
    grad.emb_b2 = dy.row(0).to_owned();
    grad.emb_w2 = standard(cache.r.t().dot(&dy));
    let mut dq1 = dy.dot(&params.emb_w2.t());
    relu_mask(&cache.q1, &mut dq1);
    grad.emb_b1 = dq1.row(0).to_owned();
    grad.emb_w1 = standard(cache.g.t().dot(&dq1));
    let dg = dq1.dot(&params.emb_w1.t());

    // readout
    let (n, hdim) = cache.h_out.dim();
    let d_mean = dg.slice(s![0, 0..hdim]);
    let d_max = dg.slice(s![0, hdim..2 * hdim]);
    let d_sum = dg.slice(s![0, 2 * hdim..3 * hdim]);
    let mut dh = Array2::zeros((n, hdim));
    for mut r in dh.rows_mut() {
        r += &(&d_mean / n as f64);
        r += &d_sum;
    }
    for (j, &i) in cache.argmax.iter().enumerate() {
        dh[[i, j]] += d_max[j];
    }

    // message-passing layers in reverse
    for (l, (layer, lc)) in params.layers.iter().zip(&cache.layers).enumerate().rev() {
        let gl = &mut grad.layers[l];
        gl.b2 = dh.sum_axis(Axis(0));
        gl.w2 = standard(lc.r1.t().dot(&dh));
        let mut du1 = dh.dot(&layer.w2.t());
        relu_mask(&lc.u1, &mut du1);
        gl.b1 = du1.sum_axis(Axis(0));
        gl.w1 = standard(lc.z.t().dot(&du1));
        let dzl = du1.dot(&layer.w1.t());
        gl.eps = (&dzl * &lc.h_in).sum();
        let mut dh_in = dzl.mapv(|x| (1.0 + layer.eps) * x);
        let mut dmsg = dzl.select(Axis(0), &cache.dst);
        relu_mask(&lc.msg_pre, &mut dmsg);
        for (k, &src) in cache.src.iter().enumerate() {
            let mut target = dh_in.row_mut(src);
            target += &dmsg.row(k);
        }
        gl.be = dmsg.sum_axis(Axis(0));
        gl.we = standard(cache.e.t().dot(&dmsg));
        dh = dh_in;
    }
    grad
}
