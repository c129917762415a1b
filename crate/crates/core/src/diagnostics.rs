//! Model-selection and chain-quality measures: variance explained, DIC,
//! effective sample size and the `(p0, q0)` grid search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effects::{posterior_effects, EffectMethod, Interval};
use crate::error::{Error, Result};
use crate::gibbs::{run_chain, PosteriorDraws, SamplerConfig};
use crate::linalg::{Mat, MatrixDataset, Vector};
use crate::model::{complete_loglik, LatentState};
use crate::seed::rng_from_seed;
use crate::twostep::MpcaFit;

/// Label attached to every reported DIC value.
pub const DIC_VARIANT: &str = "DIC (complete-data, plug-in T)";

/// `1 − Σ‖X_i − μ − S_i‖² / Σ‖X_i − μ‖²`, clamped to `[0, 1]`, where `S_i`
/// is the fitted low-rank signal of subject `i`.
pub fn variance_explained(data: &MatrixDataset, mu: &Mat, signal: &[Mat]) -> Result<f64> {
    if signal.len() != data.n() {
        return Err(Error::Dimension("one fitted signal per subject is required".into()));
    }
    let mut resid = 0.0;
    let mut total = 0.0;
    for (x, s) in data.x().iter().zip(signal) {
        let centered = x - mu;
        resid += (&centered - s).norm_squared();
        total += centered.norm_squared();
    }
    if total <= 0.0 {
        return Err(Error::Data("data have zero total variance".into()));
    }
    Ok((1.0 - resid / total).clamp(0.0, 1.0))
}

/// Variance explained by a chain's posterior-mean signal `E[A T_i Bᵀ]`.
pub fn variance_explained_draws(draws: &PosteriorDraws, data: &MatrixDataset) -> Result<f64> {
    variance_explained(data, &draws.mean_params.mu, &draws.mean_signal)
}

/// Variance explained by the projected MPCA features.
pub fn variance_explained_mpca(fit: &MpcaFit, data: &MatrixDataset) -> Result<f64> {
    let (a, b) = (fit.a.as_mat(), fit.b.as_mat());
    let signal: Vec<Mat> = fit.t.iter().map(|t| a * t * b.transpose()).collect();
    variance_explained(data, &fit.mu, &signal)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dic {
    pub dic: f64,
    /// Posterior mean deviance.
    pub mean_deviance: f64,
    /// Deviance at the posterior means.
    pub plugin_deviance: f64,
    pub p_d: f64,
}

/// `DIC = D̄ + p_D` with `p_D = D̄ − D̂`.
pub fn dic_from_deviances(deviances: &[f64], plugin_deviance: f64) -> Result<Dic> {
    if deviances.is_empty() {
        return Err(Error::Data("no deviances".into()));
    }
    let mean = deviances.iter().sum::<f64>() / deviances.len() as f64;
    let p_d = mean - plugin_deviance;
    Ok(Dic {
        dic: mean + p_d,
        mean_deviance: mean,
        plugin_deviance,
        p_d,
    })
}

/// DIC from the complete-data deviance, plugging in the posterior-mean
/// parameters and latent features.
pub fn dic(draws: &PosteriorDraws, data: &MatrixDataset) -> Result<Dic> {
    let state = LatentState {
        t: draws.mean_features.clone(),
        ystar: vec![0.0; data.n()],
    };
    let plugin = -2.0 * complete_loglik(&draws.mean_params, &state, data)?;
    dic_from_deviances(&draws.deviances, plugin)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ess {
    pub value: f64,
    /// The trace was constant; `value` is its length by convention.
    pub constant: bool,
}

/// Effective sample size by Geyer's initial monotone sequence estimator.
pub fn effective_sample_size(trace: &[f64]) -> Result<Ess> {
    let n = trace.len();
    if n < 10 {
        return Err(Error::Data(format!("ESS needs at least 10 values, got {n}")));
    }
    if trace.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value in trace".into()));
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = trace.iter().map(|v| v - mean).collect();
    let acov = |lag: usize| -> f64 {
        centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64
    };
    let gamma0 = acov(0);
    if gamma0 <= 0.0 {
        return Ok(Ess { value: n as f64, constant: true });
    }
    // sums of adjacent autocovariance pairs, kept while positive and
    // forced to be non-increasing
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = acov(2 * k) + acov(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 1;
    }
    let tau = (2.0 * sum / gamma0 - 1.0).max(1.0 / n as f64);
    Ok(Ess {
        value: (n as f64 / tau).min(n as f64),
        constant: false,
    })
}

/// Summary of one `(p0, q0)` fit in a grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFit {
    pub dic: Dic,
    pub ve: f64,
    pub nie: Interval,
    pub nde: Interval,
    pub te: Interval,
    /// Posterior mean mediation quantities, column-major `p x q`.
    pub mediation: Vec<f64>,
    /// The chain itself, when requested.
    pub draws: Option<PosteriorDraws>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub p0: usize,
    pub q0: usize,
    /// Fit summary, or the error message if the cell failed.
    pub outcome: std::result::Result<GridFit, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub level: f64,
    pub keep_draws: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            level: 0.9,
            keep_draws: false,
        }
    }
}

/// Fits a chain and its summaries for one `(p0, q0)`.
pub fn fit_grid_cell(
    data: &MatrixDataset,
    p0: usize,
    q0: usize,
    config: &SamplerConfig,
    opts: &GridOptions,
) -> Result<GridFit> {
    let draws = run_chain(data, p0, q0, config)?;
    let z_ref: Vector = data.mean_covariates();
    // closed-form effects consume no randomness
    let mut rng = rng_from_seed(config.seed);
    let effects = posterior_effects(&draws, &z_ref, EffectMethod::ClosedForm, opts.level, &mut rng)?;
    Ok(GridFit {
        dic: dic(&draws, data)?,
        ve: variance_explained_draws(&draws, data)?,
        nie: effects.nie,
        nde: effects.nde,
        te: effects.te,
        mediation: draws.mean_mediation(),
        draws: opts.keep_draws.then_some(draws),
    })
}

/// Runs one chain per `(p0, q0)` pair in parallel, every chain with
/// `config.seed`. Failed cells keep their error and the grid continues.
/// Cells come back in row-major order of `(p0s, q0s)`.
pub fn model_grid_search(
    data: &MatrixDataset,
    p0s: &[usize],
    q0s: &[usize],
    config: &SamplerConfig,
    opts: &GridOptions,
) -> Result<Vec<GridCell>> {
    config.validate()?;
    if p0s.is_empty() || q0s.is_empty() {
        return Err(Error::Config("empty (p0, q0) grid".into()));
    }
    let pairs: Vec<(usize, usize)> = p0s.iter().flat_map(|&a| q0s.iter().map(move |&b| (a, b))).collect();
    Ok(pairs
        .into_par_iter()
        .map(|(p0, q0)| {
            let outcome = fit_grid_cell(data, p0, q0, config, opts).map_err(|e| {
                log::warn!("grid cell ({p0}, {q0}) failed: {e}");
                e.to_string()
            });
            GridCell { p0, q0, outcome }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::standard_normal_matrix;
    use crate::seed::rng_from_seed;
    use crate::twostep::{fit_mpca, MpcaOptions};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn noise_data(n: usize, seed: u64) -> MatrixDataset {
        let mut rng = rng_from_seed(seed);
        let x = (0..n).map(|_| standard_normal_matrix(5, 4, &mut rng)).collect();
        MatrixDataset::new(x, vec![0.0; n], Mat::zeros(n, 0), vec![true; n]).unwrap()
    }

    #[test]
    fn ve_extremes() {
        let data = noise_data(20, 91);
        let full = fit_mpca(&data, 5, 4, MpcaOptions::default()).unwrap();
        assert!((variance_explained_mpca(&full, &data).unwrap() - 1.0).abs() < 1e-10);
        let zeros = vec![Mat::zeros(5, 4); 20];
        assert_eq!(variance_explained(&data, &data.mean_matrix(), &zeros).unwrap(), 0.0);
    }

    #[test]
    fn ve_grows_with_rank() {
        let data = noise_data(30, 92);
        let small = fit_mpca(&data, 2, 2, MpcaOptions::default()).unwrap();
        let large = fit_mpca(&data, 3, 3, MpcaOptions::default()).unwrap();
        assert!(variance_explained_mpca(&large, &data).unwrap() >= variance_explained_mpca(&small, &data).unwrap());
    }

    #[test]
    fn dic_identities() {
        let d = dic_from_deviances(&[12.5], 12.5).unwrap();
        assert_eq!((d.p_d, d.dic), (0.0, 12.5));
        let base = dic_from_deviances(&[1.0, 2.0, 4.0], 1.5).unwrap();
        let shifted = dic_from_deviances(&[11.0, 12.0, 14.0], 11.5).unwrap();
        assert!((shifted.dic - base.dic - 10.0).abs() < 1e-12);
    }

    fn ar1(rho: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        let mut x = 0.0;
        let sd = (1.0 - rho * rho).sqrt();
        (0..n)
            .map(|_| {
                x = rho * x + sd * rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect()
    }

    #[test]
    fn ess_white_noise_and_ar1() {
        let white = effective_sample_size(&ar1(0.0, 10_000, 93)).unwrap();
        assert!((8000.0..=10_000.0).contains(&white.value), "{}", white.value);
        let target = 10_000.0 * 0.1 / 1.9;
        let ar = effective_sample_size(&ar1(0.9, 10_000, 94)).unwrap();
        assert!((ar.value - target).abs() < 0.4 * target, "{}", ar.value);
        for seed in 0..10 {
            let e = effective_sample_size(&ar1(0.0, 2000, 200 + seed)).unwrap();
            assert!((e.value - 2000.0).abs() <= 0.2 * 2000.0);
        }
    }

    #[test]
    fn ess_constant_trace() {
        let e = effective_sample_size(&[3.0; 50]).unwrap();
        assert!(e.constant && e.value == 50.0);
        assert!(effective_sample_size(&[1.0; 5]).is_err());
    }

    fn simulated(seed: u64) -> MatrixDataset {
        let mut rng = rng_from_seed(seed);
        let th = crate::model::random_params(5, 4, 2, 2, 0, &mut rng);
        crate::model::simulate_dataset(&th, 50, &mut rng).unwrap().0
    }

    #[test]
    fn single_cell_grid_matches_direct_chain() {
        let data = simulated(95);
        let config = SamplerConfig {
            iterations: 200,
            burn_in: 50,
            thin: 5,
            seed: 7,
            ..SamplerConfig::default()
        };
        let opts = GridOptions { keep_draws: true, ..GridOptions::default() };
        let cells = model_grid_search(&data, &[2], &[2], &config, &opts).unwrap();
        let direct = run_chain(&data, 2, 2, &config).unwrap();
        let fit = cells[0].outcome.as_ref().unwrap();
        assert_eq!(fit.draws.as_ref().unwrap(), &direct);
        assert_eq!(fit.dic, dic(&direct, &data).unwrap());
    }

    #[test]
    fn failing_cells_are_recorded() {
        let data = simulated(96);
        let config = SamplerConfig {
            iterations: 60,
            burn_in: 10,
            thin: 5,
            ..SamplerConfig::default()
        };
        let cells = model_grid_search(&data, &[1, 5], &[1], &config, &GridOptions::default()).unwrap();
        assert_eq!(cells.len(), 2);
        assert!(cells[0].outcome.is_ok());
        assert!(cells[1].outcome.is_err());
    }

    #[test]
    fn dic_is_invariant_to_subject_order() {
        let data = simulated(97);
        let config = SamplerConfig {
            iterations: 150,
            burn_in: 50,
            thin: 5,
            ..SamplerConfig::default()
        };
        let draws = run_chain(&data, 2, 2, &config).unwrap();
        let idx: Vec<usize> = (0..data.n()).rev().collect();
        let rev_data = data.select(&idx).unwrap();
        let mut rev = draws.clone();
        rev.mean_features = idx.iter().map(|&i| draws.mean_features[i].clone()).collect();
        let a = dic(&draws, &data).unwrap();
        let b = dic(&rev, &rev_data).unwrap();
        assert!((a.dic - b.dic).abs() < 1e-8 * a.dic.abs());
    }
}
