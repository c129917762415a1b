//! Synthetic-study driver: replicate generation, joint and two-step fits,
//! effect and mediation-map scoring, and table/figure summaries.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effects::{closed_form_effects, posterior_effects, EffectMethod, EffectParams, EffectPoint, Interval};
use crate::error::{Error, Result};
use crate::gibbs::{run_chain, SamplerConfig};
use crate::linalg::{Mat, Vector};
use crate::mediation::{auc_active_indicators, exceedance_proportions, mediation_quantities, true_active_set};
use crate::model::{paper_truth_params, simulate_dataset, ModelParams, Scenario};
use crate::seed::{derive_seed, rng_from_seed, substream};
use crate::twostep::two_step_fit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Joint,
    TwoStep,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Joint => "joint",
            Method::TwoStep => "two-step",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Method::Joint),
            "two-step" => Ok(Method::TwoStep),
            other => Err(Error::Config(format!("unknown method '{other}' (expected joint or two-step)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub replicates: usize,
    pub methods: Vec<Method>,
    /// Chain settings; the seed is replaced per replicate.
    pub sampler: SamplerConfig,
    pub master_seed: u64,
    pub level: f64,
    pub kappas: Vec<f64>,
}

impl SimConfig {
    /// Desk-scale defaults: 50 replicates of 4000 iterations, 1000 burn-in,
    /// thin 5.
    pub fn desk_scale(scenario: Scenario, n: usize, master_seed: u64) -> Self {
        SimConfig {
            scenario,
            n,
            replicates: 50,
            methods: vec![Method::Joint, Method::TwoStep],
            sampler: SamplerConfig::default(),
            master_seed,
            level: 0.9,
            kappas: scenario.kappa_grid(),
        }
    }

    /// Full-scale settings: 500 replicates of 10000 iterations, 3000
    /// burn-in, thin 5.
    pub fn full_scale(scenario: Scenario, n: usize, master_seed: u64) -> Self {
        let mut c = Self::desk_scale(scenario, n, master_seed);
        c.replicates = 500;
        c.sampler.iterations = 10_000;
        c.sampler.burn_in = 3000;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.n < 2 {
            return Err(Error::Config("need at least one replicate and two subjects".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config("credible level must lie in (0, 1)".into()));
        }
        self.sampler.validate()
    }
}

/// One method fitted to one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub method: Method,
    pub scenario: Scenario,
    pub n: usize,
    pub nie: f64,
    pub nde: f64,
    pub te: f64,
    /// Credible intervals for (NIE, NDE, TE); joint model only.
    pub intervals: Option<[Interval; 3]>,
    /// Mediation quantities (posterior means for the joint model).
    pub mediation: Vec<f64>,
    /// Posterior probability maps per threshold; joint model only.
    pub prob_maps: Vec<Mat>,
    pub auc: Option<f64>,
    pub seconds: f64,
    /// Chain seed (joint) or data seed (two-step) for replay.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub method: Method,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRun {
    pub config: SimConfig,
    pub truth: ModelParams,
    pub truth_effects: EffectPoint,
    pub truth_mediation: Vec<f64>,
    pub active: Vec<bool>,
    pub results: Vec<ReplicateResult>,
    pub failures: Vec<ReplicateFailure>,
}

impl SimulationRun {
    pub fn results_for(&self, method: Method) -> impl Iterator<Item = &ReplicateResult> {
        self.results.iter().filter(move |r| r.method == method)
    }
}

/// The generated truth for a master seed.
pub fn simulation_truth(scenario: Scenario, master_seed: u64) -> Result<ModelParams> {
    paper_truth_params(scenario, &mut substream(master_seed, "truth", 0))
}

fn fit_replicate(
    config: &SimConfig,
    truth: &ModelParams,
    active: &[bool],
    replicate: usize,
) -> Vec<std::result::Result<ReplicateResult, ReplicateFailure>> {
    let data_seed = derive_seed(config.master_seed, "replicate", replicate as u64);
    let chain_seed = derive_seed(config.master_seed, "chain", replicate as u64);
    let (p0, q0) = (truth.p0(), truth.q0());
    let data = match simulate_dataset(truth, config.n, &mut rng_from_seed(data_seed)) {
        Ok((d, _)) => d,
        Err(e) => {
            return config
                .methods
                .iter()
                .map(|&method| Err(ReplicateFailure { replicate, method, message: e.to_string() }))
                .collect()
        }
    };
    let (p, q) = (data.p(), data.q());
    let z_ref = Vector::zeros(data.k());
    let score = |m: &[f64]| auc_active_indicators(m, active).ok();

    config
        .methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let fitted: Result<ReplicateResult> = match method {
                Method::Joint => (|| {
                    let sampler = SamplerConfig { seed: chain_seed, ..config.sampler };
                    let draws = run_chain(&data, p0, q0, &sampler)?;
                    let mut rng = rng_from_seed(chain_seed);
                    let eff = posterior_effects(&draws, &z_ref, EffectMethod::ClosedForm, config.level, &mut rng)?;
                    let mediation = draws.mean_mediation();
                    let prob_maps = config
                        .kappas
                        .iter()
                        .map(|&k| exceedance_proportions(&draws.mediation, k, p, q))
                        .collect();
                    Ok(ReplicateResult {
                        replicate,
                        method,
                        scenario: config.scenario,
                        n: config.n,
                        nie: eff.nie.mean,
                        nde: eff.nde.mean,
                        te: eff.te.mean,
                        intervals: Some([eff.nie, eff.nde, eff.te]),
                        auc: score(&mediation),
                        mediation,
                        prob_maps,
                        seconds: 0.0,
                        seed: chain_seed,
                    })
                })(),
                Method::TwoStep => (|| {
                    let fit = two_step_fit(&data, p0, q0)?;
                    let eff = closed_form_effects(&EffectParams::from_two_step(&fit, &z_ref)?);
                    let mediation = fit.mediation_quantities();
                    Ok(ReplicateResult {
                        replicate,
                        method,
                        scenario: config.scenario,
                        n: config.n,
                        nie: eff.nie,
                        nde: eff.nde,
                        te: eff.te,
                        intervals: None,
                        auc: score(&mediation),
                        mediation,
                        prob_maps: Vec::new(),
                        seconds: 0.0,
                        seed: data_seed,
                    })
                })(),
            };
            let seconds = start.elapsed().as_secs_f64();
            fitted
                .map(|mut r| {
                    r.seconds = seconds;
                    r
                })
                .map_err(|e| ReplicateFailure { replicate, method, message: e.to_string() })
        })
        .collect()
}

/// Runs every replicate (in parallel) and every method on it. Results are
/// deterministic per `(master_seed, replicate)`; wall-clock times are the
/// only varying fields.
pub fn run_simulation(config: &SimConfig) -> Result<SimulationRun> {
    config.validate()?;
    let truth = simulation_truth(config.scenario, config.master_seed)?;
    let truth_effects = closed_form_effects(&EffectParams::from_params(&truth, &Vector::zeros(0))?);
    let truth_mediation = mediation_quantities(&truth.a, &truth.b, &truth.beta_et, &truth.beta_ty);
    let active = true_active_set(&truth.a, &truth.b, &truth.beta_et, &truth.beta_ty);

    let outcomes: Vec<_> = (0..config.replicates)
        .into_par_iter()
        .flat_map_iter(|r| fit_replicate(config, &truth, &active, r))
        .collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(f) => {
                log::warn!("replicate {} ({}) failed: {}", f.replicate, f.method.name(), f.message);
                failures.push(f);
            }
        }
    }
    Ok(SimulationRun {
        config: config.clone(),
        truth,
        truth_effects,
        truth_mediation,
        active,
        results,
        failures,
    })
}

/// Accuracy of a set of estimates of one true value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub count: usize,
    pub mean: f64,
    pub mse: f64,
    /// Sample variance with the `n − 1` denominator.
    pub var: f64,
    pub bias: f64,
}

pub fn cell_stats(estimates: &[f64], truth: f64) -> Result<CellStats> {
    let n = estimates.len();
    if n == 0 {
        return Err(Error::Data("no estimates in cell".into()));
    }
    let mean = estimates.iter().sum::<f64>() / n as f64;
    let mse = estimates.iter().map(|e| (e - truth) * (e - truth)).sum::<f64>() / n as f64;
    let var = if n > 1 {
        estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Ok(CellStats { count: n, mean, mse, var, bias: mean - truth })
}

/// One row of the comparison table; `mse`, `var` and `bias` are scaled by
/// 1000.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub scenario: Scenario,
    pub n: usize,
    pub method: Method,
    pub effect: String,
    pub truth: f64,
    pub mean: f64,
    pub mse_x1000: f64,
    pub var_x1000: f64,
    pub bias_x1000: f64,
    pub replicates: usize,
}

/// MSE, variance and bias of NIE, NDE and TE per method.
pub fn summarize_table1(run: &SimulationRun) -> Result<Vec<Table1Row>> {
    let mut rows = Vec::new();
    for &method in &run.config.methods {
        let res: Vec<&ReplicateResult> = run.results_for(method).collect();
        if res.is_empty() {
            continue;
        }
        let t = &run.truth_effects;
        let effects: [(&str, f64, fn(&ReplicateResult) -> f64); 3] =
            [("NIE", t.nie, |r| r.nie), ("NDE", t.nde, |r| r.nde), ("TE", t.te, |r| r.te)];
        for (name, truth, get) in effects {
            let est: Vec<f64> = res.iter().map(|r| get(r)).collect();
            let s = cell_stats(&est, truth)?;
            rows.push(Table1Row {
                scenario: run.config.scenario,
                n: run.config.n,
                method,
                effect: name.to_string(),
                truth,
                mean: s.mean,
                mse_x1000: 1000.0 * s.mse,
                var_x1000: 1000.0 * s.var,
                bias_x1000: 1000.0 * s.bias,
                replicates: s.count,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::Data("no successful replicates to summarize".into()));
    }
    Ok(rows)
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the scatter and heatmap tables for a simulation run into `dir`:
///
/// * `scatter_<scenario>_n<n>_<method>.csv`: `row,col,truth,mean,sd,active`
///   per matrix element, over replicates;
/// * `heatmap_<scenario>_n<n>_k<kappa>.csv`: `row,col,probability,active`,
///   the replicate-averaged posterior probability per element;
/// * `auc_<scenario>_n<n>.csv`: `replicate,method,auc`.
///
/// Returns the written paths.
pub fn export_figure_data(run: &SimulationRun, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let (p, q) = (run.truth.p(), run.truth.q());
    let tag = format!("{}_n{}", run.config.scenario.name(), run.config.n);
    let mut written = Vec::new();

    for &method in &run.config.methods {
        let res: Vec<&ReplicateResult> = run.results_for(method).collect();
        if res.is_empty() {
            continue;
        }
        let path = dir.join(format!("scatter_{tag}_{}.csv", method.name()));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["row", "col", "truth", "mean", "sd", "active"])?;
        for m in 0..p * q {
            let vals: Vec<f64> = res.iter().map(|r| r.mediation[m]).collect();
            let s = cell_stats(&vals, run.truth_mediation[m])?;
            w.write_record([
                (m % p).to_string(),
                (m / p).to_string(),
                fmt(run.truth_mediation[m]),
                fmt(s.mean),
                fmt(s.var.sqrt()),
                (run.active[m] as u8).to_string(),
            ])?;
        }
        w.flush()?;
        written.push(path);
    }

    let joint: Vec<&ReplicateResult> = run.results_for(Method::Joint).collect();
    if !joint.is_empty() {
        for (ki, &kappa) in run.config.kappas.iter().enumerate() {
            let path = dir.join(format!("heatmap_{tag}_k{kappa}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["row", "col", "probability", "active"])?;
            let mut mean = Mat::zeros(p, q);
            for r in &joint {
                mean += &r.prob_maps[ki];
            }
            mean /= joint.len() as f64;
            for m in 0..p * q {
                let (i, j) = (m % p, m / p);
                w.write_record([i.to_string(), j.to_string(), fmt(mean[(i, j)]), (run.active[m] as u8).to_string()])?;
            }
            w.flush()?;
            written.push(path);
        }
    }

    let path = dir.join(format!("auc_{tag}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["replicate", "method", "auc"])?;
    for r in &run.results {
        let auc = r.auc.map_or_else(String::new, fmt);
        w.write_record([r.replicate.to_string(), r.method.name().to_string(), auc])?;
    }
    w.flush()?;
    written.push(path);
    Ok(written)
}
