//! REF vs TEST comparison: structural deltas, parametric holes and
//! archetype co-occurrence.

use serde::{Deserialize, Serialize};

use crate::archetype::CoverageTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralRow {
    pub archetype: String,
    pub coverage_ref: f64,
    pub coverage_test: f64,
    pub delta_pp: f64,
}

impl StructuralRow {
    pub fn mean_coverage(&self) -> f64 {
        0.5 * (self.coverage_ref + self.coverage_test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralReport {
    pub rows: Vec<StructuralRow>,
}

impl StructuralReport {
    /// Rows by decreasing mean coverage, catalog order on ties.
    pub fn sorted_by_mean(&self) -> Vec<StructuralRow> {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| b.mean_coverage().total_cmp(&a.mean_coverage()));
        rows
    }
}

fn check_columns(a: &[String], b: &[String]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::ColumnMismatch)
    }
}

pub fn structural_coverage(
    reference: &CoverageTable,
    test: &CoverageTable,
) -> Result<StructuralReport> {
    check_columns(&reference.archetypes, &test.archetypes)?;
    let (r, t) = (reference.coverage_percent(), test.coverage_percent());
    let rows = reference
        .archetypes
        .iter()
        .enumerate()
        .map(|(j, name)| StructuralRow {
            archetype: name.clone(),
            coverage_ref: r[j],
            coverage_test: t[j],
            delta_pp: r[j] - t[j],
        })
        .collect();
    Ok(StructuralReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoleParams {
    pub speed_bin_mps: f64,
    pub path_length_bin_m: f64,
    pub min_ref_density: f64,
    pub max_ratio: f64,
}

impl Default for HoleParams {
    fn default() -> Self {
        Self {
            speed_bin_mps: 1.0,
            path_length_bin_m: 5.0,
            min_ref_density: 0.005,
            max_ratio: 0.15,
        }
    }
}

/// Shared-bin histogram of two sample sets with hole flags.
///
/// Bin `i` covers `[start + i*w, start + (i+1)*w)`; densities are the
/// fraction of each set's samples falling in the bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleHistogram {
    pub start: f64,
    pub bin_width: f64,
    pub ref_density: Vec<f64>,
    pub test_density: Vec<f64>,
    pub hole: Vec<bool>,
}

impl HoleHistogram {
    pub fn bin_range(&self, i: usize) -> (f64, f64) {
        let lo = self.start + i as f64 * self.bin_width;
        (lo, lo + self.bin_width)
    }

    pub fn hole_count(&self) -> usize {
        self.hole.iter().filter(|&&h| h).count()
    }
}

fn densities(samples: &[f64], start: f64, width: f64, n_bins: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_bins];
    for &x in samples {
        let i = (((x - start) / width).floor() as usize).min(n_bins - 1);
        counts[i] += 1;
    }
    if samples.is_empty() {
        return vec![0.0; n_bins];
    }
    counts
        .iter()
        .map(|&c| c as f64 / samples.len() as f64)
        .collect()
}

pub fn detect_parametric_holes(
    reference: &[f64],
    test: &[f64],
    bin_width: f64,
    min_ref_density: f64,
    max_ratio: f64,
) -> Result<HoleHistogram> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(Error::param("bin_width", "must be positive"));
    }
    if reference.is_empty() {
        return Err(Error::EmptySamples("reference sample set is empty"));
    }
    if reference.iter().chain(test).any(|x| !x.is_finite()) {
        return Err(Error::param("samples", "must be finite"));
    }
    let min = reference
        .iter()
        .chain(test)
        .copied()
        .fold(f64::INFINITY, f64::min);
    let max = reference
        .iter()
        .chain(test)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let start = (min / bin_width).floor() * bin_width;
    let n_bins = ((max - start) / bin_width).floor() as usize + 1;
    let ref_density = densities(reference, start, bin_width, n_bins);
    let test_density = densities(test, start, bin_width, n_bins);
    let hole = ref_density
        .iter()
        .zip(&test_density)
        .map(|(&r, &t)| r >= min_ref_density && t < max_ratio * r)
        .collect();
    Ok(HoleHistogram {
        start,
        bin_width,
        ref_density,
        test_density,
        hole,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Speed,
    PathLength,
}

impl Feature {
    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Speed => "speed",
            Feature::PathLength => "path_length",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleEntry {
    pub archetype: String,
    pub feature: Feature,
    /// Role name for speeds, `src->dst` role pair for path lengths.
    pub key: String,
    pub histogram: HoleHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleReport {
    pub entries: Vec<HoleEntry>,
}

/// Histograms for every role speed and edge path length that has REF samples.
pub fn hole_report(
    reference: &CoverageTable,
    test: &CoverageTable,
    params: &HoleParams,
) -> Result<HoleReport> {
    check_columns(&reference.archetypes, &test.archetypes)?;
    let mut entries = Vec::new();
    for name in &reference.archetypes {
        let (Some(r), t) = (reference.samples.get(name), test.samples.get(name)) else {
            continue;
        };
        let groups = [
            (
                Feature::Speed,
                &r.role_speed_mps,
                t.map(|t| &t.role_speed_mps),
                params.speed_bin_mps,
            ),
            (
                Feature::PathLength,
                &r.edge_path_length_m,
                t.map(|t| &t.edge_path_length_m),
                params.path_length_bin_m,
            ),
        ];
        for (feature, ref_map, test_map, width) in groups {
            for (key, ref_samples) in ref_map {
                if ref_samples.is_empty() {
                    continue;
                }
                let test_samples = test_map
                    .and_then(|m| m.get(key))
                    .map_or(&[][..], |v| v.as_slice());
                let histogram = detect_parametric_holes(
                    ref_samples,
                    test_samples,
                    width,
                    params.min_ref_density,
                    params.max_ratio,
                )?;
                entries.push(HoleEntry {
                    archetype: name.clone(),
                    feature,
                    key: key.clone(),
                    histogram,
                });
            }
        }
    }
    Ok(HoleReport { entries })
}

/// Square matrix over archetypes; cell = percentage of scenes matching both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    pub archetypes: Vec<String>,
    pub cells: Vec<Vec<f64>>,
}

pub fn cooccurrence(table: &CoverageTable) -> CooccurrenceMatrix {
    let k = table.archetypes.len();
    let n = table.scene_count();
    let mut counts = vec![vec![0usize; k]; k];
    for row in &table.hits {
        for i in (0..k).filter(|&i| row[i]) {
            for j in (0..k).filter(|&j| row[j]) {
                counts[i][j] += 1;
            }
        }
    }
    let cells = counts
        .iter()
        .map(|r| {
            r.iter()
                .map(|&c| {
                    if n == 0 {
                        0.0
                    } else {
                        100.0 * c as f64 / n as f64
                    }
                })
                .collect()
        })
        .collect();
    CooccurrenceMatrix {
        archetypes: table.archetypes.clone(),
        cells,
    }
}

/// Elementwise `reference - test`.
pub fn cooccurrence_diff(
    reference: &CooccurrenceMatrix,
    test: &CooccurrenceMatrix,
) -> Result<CooccurrenceMatrix> {
    check_columns(&reference.archetypes, &test.archetypes)?;
    let cells = reference
        .cells
        .iter()
        .zip(&test.cells)
        .map(|(r, t)| r.iter().zip(t).map(|(a, b)| a - b).collect())
        .collect();
    Ok(CooccurrenceMatrix {
        archetypes: reference.archetypes.clone(),
        cells,
    })
}
