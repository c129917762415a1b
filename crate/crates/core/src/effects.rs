//! Natural indirect, direct and total effects of a binary exposure.
//!
//! With `m_g` the mediator mean under intervention set `g` (the first `g`
//! coordinates of `β_ET` switched on) and `Ê_g(e)` the expected outcome
//! probability at exposure `e`:
//!
//! ```text
//! TE    = Ê_G(1) − Ê_0(0)
//! NDE   = Ê_0(1) − Ê_0(0)
//! NIE   = Ê_G(1) − Ê_0(1)
//! NIE_j = Ê_j(1) − Ê_{j−1}(1)
//! ```
//!
//! where `G = p0 q0`. Since mediators are `N(m_g, I)` and the link is
//! probit, `Ê_g(e) = Φ((α + β_EY e + β_TYᵀ m_g) / √(1 + ‖β_TY‖²))`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dist::norm_cdf;
use crate::error::{Error, Result};
use crate::gibbs::{CoefficientDraw, PosteriorDraws};
use crate::linalg::Vector;
use crate::mediation::quantile_sorted;
use crate::model::ModelParams;
use crate::twostep::TwoStepFit;

/// The coefficients the effects depend on, with covariates fixed at a
/// reference value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectParams {
    /// Outcome intercept including `β_ZYᵀ z_ref`.
    pub alpha: f64,
    pub beta_ey: f64,
    pub beta_et: Vector,
    pub beta_ty: Vector,
    /// Mediator mean at `E = 0`: `Ω_ZT z_ref` plus any feature intercept.
    pub offset: Vector,
}

fn check_reference(k: usize, z_ref: &Vector) -> Result<()> {
    if z_ref.len() != k {
        return Err(Error::Dimension(format!(
            "reference covariate vector has length {}, expected {k}",
            z_ref.len()
        )));
    }
    Ok(())
}

impl EffectParams {
    pub fn from_params(theta: &ModelParams, z_ref: &Vector) -> Result<Self> {
        Self::from_coefficients(&CoefficientDraw::from_params(theta), z_ref)
    }

    pub fn from_coefficients(c: &CoefficientDraw, z_ref: &Vector) -> Result<Self> {
        check_reference(c.beta_zy.len(), z_ref)?;
        Ok(EffectParams {
            alpha: c.alpha_y + c.beta_zy.dot(z_ref),
            beta_ey: c.beta_ey,
            beta_et: c.beta_et.clone(),
            beta_ty: c.beta_ty.clone(),
            offset: &c.omega_zt * z_ref,
        })
    }

    pub fn from_two_step(fit: &TwoStepFit, z_ref: &Vector) -> Result<Self> {
        check_reference(fit.beta_zy.len(), z_ref)?;
        Ok(EffectParams {
            alpha: fit.alpha_y + fit.beta_zy.dot(z_ref),
            beta_ey: fit.beta_ey,
            beta_et: fit.beta_et.clone(),
            beta_ty: fit.beta_ty.clone(),
            offset: &fit.intercept_t + &fit.omega_zt * z_ref,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.beta_et.len()
    }
}

/// Mediator mean under intervention set `g`: `offset + β_ET ∘ e_g`, where
/// `e_g` has its first `g` entries 1 and the rest 0.
pub fn intervention_mean_vector(params: &EffectParams, g: usize) -> Result<Vector> {
    let d = params.latent_dim();
    if g > d {
        return Err(Error::Config(format!("intervention index {g} exceeds {d}")));
    }
    let mut m = params.offset.clone();
    for j in 0..g {
        m[j] += params.beta_et[j];
    }
    Ok(m)
}

/// Effects of one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectPoint {
    pub nie: f64,
    pub nde: f64,
    pub te: f64,
    pub nie_j: Vec<f64>,
}

impl EffectPoint {
    /// Builds the contrasts from `Ê_0(0)` and the sequence `Ê_g(1)`.
    fn from_expectations(e00: f64, e1: &[f64]) -> Self {
        let d = e1.len() - 1;
        EffectPoint {
            nie: e1[d] - e1[0],
            nde: e1[0] - e00,
            te: e1[d] - e00,
            nie_j: e1.windows(2).map(|w| w[1] - w[0]).collect(),
        }
    }
}

/// Exact effects from the Gaussian–probit identity.
pub fn closed_form_effects(params: &EffectParams) -> EffectPoint {
    let d = params.latent_dim();
    let b = &params.beta_ty;
    let scale = (1.0 + b.norm_squared()).sqrt();
    let bm0 = b.dot(&params.offset);
    let expect = |e: f64, bm: f64| norm_cdf((params.alpha + params.beta_ey * e + bm) / scale);
    let mut e1 = Vec::with_capacity(d + 1);
    let mut bm = bm0;
    e1.push(expect(1.0, bm));
    for j in 0..d {
        bm += b[j] * params.beta_et[j];
        e1.push(expect(1.0, bm));
    }
    EffectPoint::from_expectations(expect(0.0, bm0), &e1)
}

/// Monte Carlo effects with their standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEffects {
    pub point: EffectPoint,
    pub se_nie: f64,
    pub se_nde: f64,
    pub se_te: f64,
    pub samples: usize,
}

/// Monte Carlo estimate with `samples` mediator draws per intervention set.
/// The same standard-normal draws are reused across sets, so each contrast
/// is an average of per-draw differences and its standard error is the
/// standard error of that average.
pub fn mc_effects<R: Rng + ?Sized>(params: &EffectParams, samples: usize, rng: &mut R) -> Result<McEffects> {
    if samples == 0 {
        return Err(Error::Config("Monte Carlo effects need at least one sample".into()));
    }
    let d = params.latent_dim();
    let b = &params.beta_ty;
    // β_TYᵀ m_g for every g
    let mut bm = Vec::with_capacity(d + 1);
    let mut acc = b.dot(&params.offset);
    bm.push(acc);
    for j in 0..d {
        acc += b[j] * params.beta_et[j];
        bm.push(acc);
    }

    let mut e00 = 0.0;
    let mut e1 = vec![0.0; d + 1];
    // running means and centred sums of squares (Welford)
    let (mut means, mut m2) = ([0.0; 3], [0.0; 3]);
    let mut count = 0.0;
    for _ in 0..samples {
        let noise: f64 = (0..d).map(|j| b[j] * rng.sample::<f64, _>(StandardNormal)).sum();
        let f00 = norm_cdf(params.alpha + bm[0] + noise);
        e00 += f00;
        let mut first = 0.0;
        let mut last = 0.0;
        for (g, slot) in e1.iter_mut().enumerate() {
            let f = norm_cdf(params.alpha + params.beta_ey + bm[g] + noise);
            *slot += f;
            if g == 0 {
                first = f;
            }
            last = f;
        }
        let contrasts = [last - first, first - f00, last - f00];
        count += 1.0;
        for k in 0..3 {
            let delta = contrasts[k] - means[k];
            means[k] += delta / count;
            m2[k] += delta * (contrasts[k] - means[k]);
        }
    }
    let s = samples as f64;
    e00 /= s;
    e1.iter_mut().for_each(|v| *v /= s);
    let se = |k: usize| {
        if samples < 2 {
            return f64::NAN;
        }
        (m2[k] / (s - 1.0) / s).sqrt()
    };
    Ok(McEffects {
        point: EffectPoint::from_expectations(e00, &e1),
        se_nie: se(0),
        se_nde: se(1),
        se_te: se(2),
        samples,
    })
}

/// Posterior mean and equal-tailed credible interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn from_draws(values: &[f64], level: f64) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let tail = 0.5 * (1.0 - level);
        Interval {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            lo: quantile_sorted(&sorted, tail),
            hi: quantile_sorted(&sorted, 1.0 - tail),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum EffectMethod {
    ClosedForm,
    MonteCarlo { samples: usize },
}

/// Posterior effect summaries with the per-draw values behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimates {
    pub nie: Interval,
    pub nde: Interval,
    pub te: Interval,
    pub nie_j: Vec<Interval>,
    pub level: f64,
    pub draws: Vec<EffectPoint>,
}

impl EffectEstimates {
    pub fn from_points(draws: Vec<EffectPoint>, level: f64) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::Data("no draws to summarize".into()));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Config(format!("credible level must lie in (0, 1), got {level}")));
        }
        let col = |f: &dyn Fn(&EffectPoint) -> f64| -> Interval {
            Interval::from_draws(&draws.iter().map(f).collect::<Vec<_>>(), level)
        };
        let d = draws[0].nie_j.len();
        let nie_j = (0..d).map(|j| col(&|p: &EffectPoint| p.nie_j[j])).collect();
        Ok(EffectEstimates {
            nie: col(&|p| p.nie),
            nde: col(&|p| p.nde),
            te: col(&|p| p.te),
            nie_j,
            level,
            draws,
        })
    }
}

/// Effects for every retained draw at covariate value `z_ref`, summarized
/// by posterior means and equal-tailed intervals at `level`.
pub fn posterior_effects<R: Rng + ?Sized>(
    draws: &PosteriorDraws,
    z_ref: &Vector,
    method: EffectMethod,
    level: f64,
    rng: &mut R,
) -> Result<EffectEstimates> {
    if draws.is_empty() {
        return Err(Error::Data("no retained draws".into()));
    }
    let mut points = Vec::with_capacity(draws.len());
    for c in &draws.coefficients {
        let params = EffectParams::from_coefficients(c, z_ref)?;
        points.push(match method {
            EffectMethod::ClosedForm => closed_form_effects(&params),
            EffectMethod::MonteCarlo { samples } => mc_effects(&params, samples, rng)?.point,
        });
    }
    EffectEstimates::from_points(points, level)
}
