//! NT-Xent contrastive loss over 2N projected views.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Loss and its gradient with respect to the raw projections.
///
/// Rows `i` and `i + N` of `z` form the positive pairs. Each row is
/// l2-normalized, similarities are scaled by `1/tau`, and every anchor is
/// scored against the other `2N - 1` rows.
pub fn nt_xent(z: &Array2<f64>, tau: f64) -> Result<(f64, Array2<f64>)> {
    let rows = z.nrows();
    if rows % 2 != 0 || rows < 4 {
        return Err(Error::TooFew {
            what: "positive pairs",
            got: rows / 2,
        });
    }
    if !(tau > 0.0) {
        return Err(Error::param("temperature", "must be positive"));
    }
    let n = rows / 2;
    let norms: Vec<f64> = z.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut u = z.clone();
    for (mut r, &norm) in u.rows_mut().into_iter().zip(&norms) {
        if norm > 0.0 {
            r /= norm;
        }
    }
    let sim = u.dot(&u.t()) / tau;

    let mut loss = 0.0;
    // dL/dsim, not yet symmetrized
    let mut dsim = Array2::zeros((rows, rows));
    for i in 0..rows {
        let pos = (i + n) % rows;
        let max = (0..rows)
            .filter(|&k| k != i)
            .map(|k| sim[[i, k]])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..rows)
            .filter(|&k| k != i)
            .map(|k| (sim[[i, k]] - max).exp())
            .sum();
        loss += -(sim[[i, pos]] - max) + denom.ln();
        for k in (0..rows).filter(|&k| k != i) {
            let softmax = (sim[[i, k]] - max).exp() / denom;
            dsim[[i, k]] = softmax - if k == pos { 1.0 } else { 0.0 };
        }
    }
    let scale = 1.0 / rows as f64;
    loss *= scale;
    dsim *= scale;

    // sim = u u^T / tau, so du = (dsim + dsim^T) u / tau
    let sym = &dsim + &dsim.t();
    let du = sym.dot(&u) / tau;
    let mut dz = Array2::zeros(z.raw_dim());
    for (i, mut out) in dz.axis_iter_mut(Axis(0)).enumerate() {
        if norms[i] > 0.0 {
            let ui = u.row(i);
            let dui = du.row(i);
            let along = ui.dot(&dui);
            out.assign(&((&dui - &(&ui * along)) / norms[i]));
        }
    }
    Ok((loss, dz))
}
