//! Raw Varimax rotation.
//!
//! The rotation is returned in a canonical form: every rotated column has
//! its largest-magnitude entry positive, and columns are ordered by
//! decreasing sum of fourth powers (ties keep their original order). The
//! mediation quantities are invariant to these choices; they only make
//! successive draws comparable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarimaxOptions {
    /// Relative convergence tolerance on the criterion.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for VarimaxOptions {
    fn default() -> Self {
        VarimaxOptions {
            tol: 1e-10,
            max_sweeps: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Varimax {
    /// Orthogonal `k x k` matrix with `rotated = loadings * rotation`.
    pub rotation: Mat,
    pub rotated: Mat,
    pub sweeps: usize,
    pub converged: bool,
}

/// Sum over columns of the variance of the squared loadings.
pub fn varimax_criterion(loadings: &Mat) -> f64 {
    let p = loadings.nrows() as f64;
    loadings
        .column_iter()
        .map(|c| {
            let m2 = c.iter().map(|v| v * v).sum::<f64>() / p;
            let m4 = c.iter().map(|v| v.powi(4)).sum::<f64>() / p;
            m4 - m2 * m2
        })
        .sum()
}

/// Rotates `loadings` (rows x k) to maximise the raw Varimax criterion.
pub fn varimax(loadings: &Mat, opts: VarimaxOptions) -> Result<Varimax> {
    let (p, k) = loadings.shape();
    if k == 0 || p == 0 {
        return Err(Error::Dimension("varimax needs a non-empty loading matrix".into()));
    }
    if loadings.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite loadings in varimax".into()));
    }

    let mut rotation = Mat::identity(k, k);
    let mut sweeps = 0;
    let mut converged = true;
    if k > 1 {
        converged = false;
        let mut d = 0.0_f64;
        for _ in 0..opts.max_sweeps {
            sweeps += 1;
            let z = loadings * &rotation;
            let mut target = z.map(|v| v * v * v);
            for (j, zc) in z.column_iter().enumerate() {
                let ss = zc.norm_squared() / p as f64;
                target.column_mut(j).axpy(-ss, &zc, 1.0);
            }
            let g = loadings.tr_mul(&target);
            let svd = g.svd(true, true);
            let (u, vt) = match (svd.u, svd.v_t) {
                (Some(u), Some(vt)) => (u, vt),
                _ => return Err(Error::Numerical("SVD failed in varimax".into())),
            };
            rotation = u * vt;
            let d_past = d;
            d = svd.singular_values.sum();
            if d < d_past * (1.0 + opts.tol) {
                converged = true;
                break;
            }
        }
    }

    let mut rotated = loadings * &rotation;
    canonicalize(&mut rotation, &mut rotated);
    Ok(Varimax {
        rotation,
        rotated,
        sweeps,
        converged,
    })
}

fn canonicalize(rotation: &mut Mat, rotated: &mut Mat) {
    let k = rotated.ncols();
    for j in 0..k {
        let col = rotated.column(j);
        let mut best = 0.0_f64;
        for &v in col.iter() {
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < 0.0 {
            rotated.column_mut(j).neg_mut();
            rotation.column_mut(j).neg_mut();
        }
    }
    let fourth: Vec<f64> = rotated
        .column_iter()
        .map(|c| c.iter().map(|v| v.powi(4)).sum())
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| fourth[b].total_cmp(&fourth[a]));
    if order.iter().enumerate().any(|(i, &o)| i != o) {
        *rotated = rotated.select_columns(&order);
        *rotation = rotation.select_columns(&order);
    }
}
