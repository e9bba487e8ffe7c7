//! Nearest neighbors, PCA and density coverage over embedding matrices.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            _ => Err(Error::param(
                "metric",
                format!("unknown metric `{s}` (euclidean|cosine)"),
            )),
        }
    }
}

pub fn distance(a: ArrayView1<f64>, b: ArrayView1<f64>, metric: Metric) -> f64 {
    match metric {
        Metric::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt(),
        Metric::Cosine => {
            let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
            if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                1.0 - a.dot(&b) / (na * nb)
            }
        }
    }
}

/// A corpus row or an external vector.
#[derive(Debug, Clone, Copy)]
pub enum Query<'a> {
    Row(usize),
    Vector(ArrayView1<'a, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbors {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
    /// Fewer than `k` candidates were available.
    pub truncated: bool,
}

/// Brute-force k nearest rows; a row query never returns itself. Ties go
/// to the lower row index.
pub fn nearest<'a>(
    data: &'a Array2<f64>,
    query: Query<'a>,
    metric: Metric,
    k: usize,
) -> Result<Neighbors> {
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    let (q, skip) = match query {
        Query::Row(i) if i < data.nrows() => (data.row(i), Some(i)),
        Query::Row(i) => return Err(Error::param("query", format!("row {i} out of range"))),
        Query::Vector(v) if v.len() == data.ncols() => (v, None),
        Query::Vector(_) => return Err(Error::Shape("query width differs from the corpus".into())),
    };
    let mut scored: Vec<(f64, usize)> = (0..data.nrows())
        .filter(|&i| Some(i) != skip)
        .map(|i| (distance(q, data.row(i), metric), i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let truncated = scored.len() < k;
    scored.truncate(k);
    Ok(Neighbors {
        indices: scored.iter().map(|s| s.1).collect(),
        distances: scored.iter().map(|s| s.0).collect(),
        truncated,
    })
}

/// Linear-interpolation quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub mean: Array1<f64>,
    /// One principal axis per row, unit length.
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub projected: Array2<f64>,
    /// Fewer components than requested carried non-zero variance.
    pub rank_deficient: bool,
}

const POWER_MAX_ITERS: usize = 200_000;
const POWER_TOL: f64 = 1e-14;

/// Principal axes by power iteration on the covariance, with deflation and
/// re-orthogonalization against earlier axes.
pub fn pca(data: &Array2<f64>, dims: usize) -> Result<PcaResult> {
    let (n, d) = data.dim();
    if dims == 0 || dims > d {
        return Err(Error::param("dims", format!("must lie in 1..={d}")));
    }
    if n < dims + 1 {
        return Err(Error::TooFew {
            what: "points for the requested dimensions",
            got: n,
        });
    }
    let mean = data.mean_axis(Axis(0)).expect("non-empty");
    let centered = data - &mean;
    let mut cov = centered.t().dot(&centered) / (n - 1) as f64;
    let total: f64 = cov.diag().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut axes: Vec<Array1<f64>> = Vec::new();
    let mut variances = Vec::new();
    let mut rank_deficient = false;
    for _ in 0..dims {
        let mut v: Array1<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        orthonormalize(&mut v, &axes);
        let mut lambda = 0.0;
        for _ in 0..POWER_MAX_ITERS {
            let mut next = cov.dot(&v);
            orthonormalize(&mut next, &axes);
            let delta = (&next - &v).iter().map(|x| x.abs()).fold(0.0, f64::max);
            v = next;
            lambda = v.dot(&cov.dot(&v));
            if delta < POWER_TOL {
                break;
            }
        }
        if !(lambda > 1e-12 * total.max(f64::MIN_POSITIVE)) {
            rank_deficient = true;
            break;
        }
        // deterministic sign: largest-magnitude entry positive
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            v.mapv_inplace(|x| -x);
        }
        let outer = v
            .view()
            .insert_axis(Axis(1))
            .dot(&v.view().insert_axis(Axis(0)));
        cov = cov - outer * lambda;
        axes.push(v);
        variances.push(lambda);
    }
    let mut components = Array2::zeros((axes.len(), d));
    for (mut r, a) in components.rows_mut().into_iter().zip(&axes) {
        r.assign(a);
    }
    let projected = centered.dot(&components.t());
    Ok(PcaResult {
        mean,
        explained_variance_ratio: variances.iter().map(|v| v / total).collect(),
        explained_variance: variances,
        components,
        projected,
        rank_deficient,
    })
}

fn orthonormalize(v: &mut Array1<f64>, axes: &[Array1<f64>]) {
    for a in axes {
        let c = a.dot(v);
        v.scaled_add(-c, a);
    }
    let norm = v.dot(v).sqrt();
    if norm > 0.0 {
        *v /= norm;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityParams {
    pub k_density: usize,
    pub density_quantile: f64,
    pub radius_quantile: f64,
}

impl Default for DensityParams {
    fn default() -> Self {
        Self {
            k_density: 10,
            density_quantile: 0.5,
            radius_quantile: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCoverageReport {
    /// 1 / distance to the k-th REF neighbor, per REF point.
    pub density: Vec<f64>,
    pub relevant: Vec<bool>,
    pub covered: Vec<bool>,
    pub density_threshold: f64,
    pub radius: f64,
    pub relevant_count: usize,
    pub covered_count: usize,
    /// Covered share of relevant REF points.
    pub covered_fraction: f64,
}

/// Euclidean k-th neighbor distance for every row, excluding the row itself.
fn kth_neighbor_distances(data: &Array2<f64>, k: usize) -> Vec<f64> {
    (0..data.nrows())
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..data.nrows())
                .filter(|&j| j != i)
                .map(|j| distance(data.row(i), data.row(j), Metric::Euclidean))
                .collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect()
}

pub fn density_coverage(
    reference: &Array2<f64>,
    test: &Array2<f64>,
    params: &DensityParams,
) -> Result<DensityCoverageReport> {
    if reference.nrows() == 0 || test.nrows() == 0 {
        return Err(Error::EmptySamples(
            "density coverage needs non-empty REF and TEST sets",
        ));
    }
    if reference.ncols() != test.ncols() {
        return Err(Error::Shape("REF and TEST widths differ".into()));
    }
    let k = params.k_density;
    if k == 0 || k >= reference.nrows() {
        return Err(Error::param(
            "k_density",
            format!("must lie in 1..{}", reference.nrows()),
        ));
    }
    let kth = kth_neighbor_distances(reference, k);
    let density: Vec<f64> = kth
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { f64::MAX })
        .collect();
    let density_threshold = quantile(&density, params.density_quantile);
    let radius = quantile(&kth, params.radius_quantile);
    let relevant: Vec<bool> = density.iter().map(|&x| x >= density_threshold).collect();
    let covered: Vec<bool> = (0..reference.nrows())
        .into_par_iter()
        .map(|i| {
            relevant[i]
                && test
                    .rows()
                    .into_iter()
                    .any(|t| distance(reference.row(i), t, Metric::Euclidean) <= radius)
        })
        .collect();
    let relevant_count = relevant.iter().filter(|&&r| r).count();
    let covered_count = covered.iter().filter(|&&c| c).count();
    Ok(DensityCoverageReport {
        covered_fraction: if relevant_count == 0 {
            0.0
        } else {
            covered_count as f64 / relevant_count as f64
        },
        density,
        relevant,
        covered,
        density_threshold,
        radius,
        relevant_count,
        covered_count,
    })
}
