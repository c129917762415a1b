//! Element-wise mediation quantities, posterior-probability maps and AUC
//! scoring against a known active set.
//!
//! For element `m` of `vec(X)` the mediation quantity is
//! `Σ_j |β_ET,j β_TY,j W_mj|` with `W = B ⊗ A`. It is computed without
//! forming `W` as `|A| · unvec(|β_ET ∘ β_TY|) · |B|ᵀ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::PosteriorDraws;
use crate::linalg::{Mat, Vector};

/// Tolerance below which a true mediation quantity counts as zero.
pub const ACTIVE_TOL: f64 = 1e-12;

/// Mediation quantities, length `p q`, column-major.
pub fn mediation_quantities(a: &Mat, b: &Mat, beta_et: &Vector, beta_ty: &Vector) -> Vec<f64> {
    let (p0, q0) = (a.ncols(), b.ncols());
    let w = Mat::from_fn(p0, q0, |r, c| {
        let j = r + c * p0;
        (beta_et[j] * beta_ty[j]).abs()
    });
    let m = a.abs() * w * b.abs().transpose();
    m.as_slice().to_vec()
}

/// Elements whose true mediation quantity is nonzero.
pub fn true_active_set(a: &Mat, b: &Mat, beta_et: &Vector, beta_ty: &Vector) -> Vec<bool> {
    mediation_quantities(a, b, beta_et, beta_ty)
        .into_iter()
        .map(|v| v > ACTIVE_TOL)
        .collect()
}

/// Proportion of retained draws whose mediation quantity exceeds `kappa`,
/// reshaped to `p x q`.
pub fn posterior_probability_map(draws: &PosteriorDraws, kappa: f64) -> Result<Mat> {
    if draws.mediation.is_empty() {
        return Err(Error::Data("no retained draws for a probability map".into()));
    }
    if !(kappa >= 0.0) {
        return Err(Error::Config(format!("threshold must be non-negative, got {kappa}")));
    }
    let (p, q) = (draws.dims.p, draws.dims.q);
    Ok(exceedance_proportions(&draws.mediation, kappa, p, q))
}

/// `R⁻¹ Σ_r 1[q_m^(r) > κ]` for every element, reshaped to `p x q`.
pub fn exceedance_proportions(per_draw: &[Vec<f64>], kappa: f64, p: usize, q: usize) -> Mat {
    let r = per_draw.len() as f64;
    let mut counts = vec![0.0; p * q];
    for draw in per_draw {
        for (c, &v) in counts.iter_mut().zip(draw) {
            if v > kappa {
                *c += 1.0;
            }
        }
    }
    Mat::from_iterator(p, q, counts.into_iter().map(|c| c / r))
}

/// Mann–Whitney AUC of `scores` separating `active` from inactive elements,
/// with tied scores given their midrank.
pub fn auc_active_indicators(scores: &[f64], active: &[bool]) -> Result<f64> {
    if scores.len() != active.len() {
        return Err(Error::Dimension(format!(
            "{} scores but {} indicators",
            scores.len(),
            active.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite score".into()));
    }
    let n_pos = active.iter().filter(|&&a| a).count();
    let n_neg = active.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data("AUC needs at least one active and one inactive element".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks are 1-based; the tie block [start, end) shares its midrank
        let mid = 0.5 * ((start + 1) + end) as f64;
        for &i in &order[start..end] {
            ranks[i] = mid;
        }
        start = end;
    }
    let rank_sum: f64 = ranks.iter().zip(active).filter(|(_, &a)| a).map(|(r, _)| r).sum();
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// How default thresholds are derived from the posterior-mean quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdRule {
    /// Fractions of the range `[min, max]` of the posterior means.
    Range,
    /// Empirical quantiles of the posterior means.
    Empirical,
}

/// Thresholds at the given fractions (e.g. 0.25, 0.5, 0.75) of the
/// posterior-mean quantities, under `rule`.
pub fn default_thresholds(means: &[f64], fractions: &[f64], rule: ThresholdRule) -> Result<Vec<f64>> {
    if means.is_empty() {
        return Err(Error::Data("no mediation quantities".into()));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::Config("threshold fractions must lie in [0, 1]".into()));
    }
    let mut sorted = means.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[0];
    let hi = sorted[sorted.len() - 1];
    Ok(fractions
        .iter()
        .map(|&f| match rule {
            ThresholdRule::Range => lo + f * (hi - lo),
            ThresholdRule::Empirical => quantile_sorted(&sorted, f),
        })
        .collect())
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Posterior-mean quantities and probability maps for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediationMap {
    pub p: usize,
    pub q: usize,
    /// Posterior mean quantities, length `p q`, column-major.
    pub quantities: Vec<f64>,
    pub kappas: Vec<f64>,
    /// One `p x q` probability matrix per threshold.
    pub prob_maps: Vec<Mat>,
}

impl MediationMap {
    pub fn from_draws(draws: &PosteriorDraws, kappas: &[f64]) -> Result<Self> {
        let prob_maps = kappas
            .iter()
            .map(|&k| posterior_probability_map(draws, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(MediationMap {
            p: draws.dims.p,
            q: draws.dims.q,
            quantities: draws.mean_mediation(),
            kappas: kappas.to_vec(),
            prob_maps,
        })
    }

    /// Posterior-mean quantities as a `p x q` matrix.
    pub fn matrix(&self) -> Mat {
        Mat::from_column_slice(self.p, self.q, &self.quantities)
    }
}
