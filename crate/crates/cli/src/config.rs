//! Fully resolved run configurations. A `RunConfig` holds everything a
//! command needs except the output directory, so it can be stored in a
//! manifest and executed again.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use matmed::effects::EffectMethod;
use matmed::gibbs::SamplerConfig;
use matmed::simharness::Method;
use matmed::{Priors, Scenario};

use crate::error::{CliError, CliResult};
use crate::preprocess::PreprocessMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub matrix: PathBuf,
    pub subjects: PathBuf,
    #[serde(default)]
    pub preprocess: PreprocessMode,
}

/// Chain schedule and priors; the chain seed is derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    #[serde(default = "yes")]
    pub varimax: bool,
    #[serde(default)]
    pub priors: Priors,
}

fn yes() -> bool {
    true
}

impl Default for ChainSettings {
    fn default() -> Self {
        let d = SamplerConfig::default();
        ChainSettings {
            iterations: d.iterations,
            burn_in: d.burn_in,
            thin: d.thin,
            varimax: d.varimax_enabled,
            priors: d.priors,
        }
    }
}

impl ChainSettings {
    pub fn sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            varimax_enabled: self.varimax,
            priors: self.priors,
            seed,
            retain_params: false,
        }
    }
}

fn default_level() -> f64 {
    0.9
}

fn closed_form() -> EffectMethod {
    EffectMethod::ClosedForm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub input: InputConfig,
    pub p0: usize,
    pub q0: usize,
    #[serde(default)]
    pub chain: ChainSettings,
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Probability-map thresholds; derived from the posterior means when
    /// absent.
    #[serde(default)]
    pub kappas: Option<Vec<f64>>,
    #[serde(default = "closed_form")]
    pub effect_method: EffectMethod,
    /// Covariate value at which effects are evaluated; the sample mean when
    /// absent.
    #[serde(default)]
    pub z_ref: Option<Vec<f64>>,
    #[serde(default = "yes")]
    pub save_draws: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoStepConfig {
    pub input: InputConfig,
    pub p0: usize,
    pub q0: usize,
    #[serde(default)]
    pub z_ref: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectsConfig {
    /// `draws.json` written by `fit`.
    pub draws: PathBuf,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "closed_form")]
    pub effect_method: EffectMethod,
    #[serde(default)]
    pub z_ref: Option<Vec<f64>>,
    /// Seed for Monte Carlo effects.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub draws: PathBuf,
    #[serde(default)]
    pub kappas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub input: InputConfig,
    pub p0s: Vec<usize>,
    pub q0s: Vec<usize>,
    #[serde(default)]
    pub chain: ChainSettings,
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicateConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub chain: ChainSettings,
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub kappas: Option<Vec<f64>>,
    #[serde(default = "yes")]
    pub table1: bool,
    #[serde(default = "yes")]
    pub figure_data: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Simulate(SimulateConfig),
    Fit(FitConfig),
    TwoStep(TwoStepConfig),
    Effects(EffectsConfig),
    Map(MapConfig),
    Grid(GridConfig),
    ReplicatePaper(ReplicateConfig),
}

fn check_level(level: f64) -> CliResult<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("credible level must lie in (0, 1), got {level}")))
    }
}

fn check_kappas(kappas: &Option<Vec<f64>>) -> CliResult<()> {
    match kappas {
        Some(k) if k.is_empty() || k.iter().any(|v| !v.is_finite() || *v < 0.0) => Err(CliError::Config(
            "kappas must be a non-empty list of non-negative numbers".into(),
        )),
        _ => Ok(()),
    }
}

fn check_dims(p0: usize, q0: usize) -> CliResult<()> {
    if p0 == 0 || q0 == 0 {
        return Err(CliError::Config("p0 and q0 must be positive".into()));
    }
    Ok(())
}

fn check_effect_method(m: &EffectMethod) -> CliResult<()> {
    match m {
        EffectMethod::MonteCarlo { samples: 0 } => Err(CliError::Config("Monte Carlo effects need samples > 0".into())),
        _ => Ok(()),
    }
}

impl RunConfig {
    pub fn name(&self) -> &'static str {
        match self {
            RunConfig::Simulate(_) => "simulate",
            RunConfig::Fit(_) => "fit",
            RunConfig::TwoStep(_) => "two-step",
            RunConfig::Effects(_) => "effects",
            RunConfig::Map(_) => "map",
            RunConfig::Grid(_) => "grid",
            RunConfig::ReplicatePaper(_) => "replicate-paper",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            RunConfig::Simulate(c) => Some(c.seed),
            RunConfig::Fit(c) => Some(c.seed),
            RunConfig::Grid(c) => Some(c.seed),
            RunConfig::ReplicatePaper(c) => Some(c.seed),
            RunConfig::Effects(c) => c.seed,
            RunConfig::TwoStep(_) | RunConfig::Map(_) => None,
        }
    }

    /// Checks everything that can be checked without touching the inputs.
    pub fn validate(&self) -> CliResult<()> {
        match self {
            RunConfig::Simulate(c) => {
                if c.n < 2 {
                    return Err(CliError::Config("need at least two subjects".into()));
                }
            }
            RunConfig::Fit(c) => {
                check_dims(c.p0, c.q0)?;
                check_level(c.level)?;
                check_kappas(&c.kappas)?;
                check_effect_method(&c.effect_method)?;
                c.chain.sampler(c.seed).validate()?;
            }
            RunConfig::TwoStep(c) => check_dims(c.p0, c.q0)?,
            RunConfig::Effects(c) => {
                check_level(c.level)?;
                check_effect_method(&c.effect_method)?;
                if matches!(c.effect_method, EffectMethod::MonteCarlo { .. }) && c.seed.is_none() {
                    return Err(CliError::Config("Monte Carlo effects need a seed".into()));
                }
            }
            RunConfig::Map(c) => check_kappas(&c.kappas)?,
            RunConfig::Grid(c) => {
                if c.p0s.is_empty() || c.q0s.is_empty() {
                    return Err(CliError::Config("grid needs at least one p0 and one q0".into()));
                }
                if c.p0s.contains(&0) || c.q0s.contains(&0) {
                    return Err(CliError::Config("p0 and q0 must be positive".into()));
                }
                check_level(c.level)?;
                c.chain.sampler(c.seed).validate()?;
            }
            RunConfig::ReplicatePaper(c) => {
                check_level(c.level)?;
                check_kappas(&c.kappas)?;
                if c.methods.is_empty() || c.replicates == 0 || c.n < 2 {
                    return Err(CliError::Config(
                        "need at least one method, one replicate and two subjects".into(),
                    ));
                }
                if !c.table1 && !c.figure_data {
                    return Err(CliError::Config("nothing to write: enable table1 or figure data".into()));
                }
                c.chain.sampler(c.seed).validate()?;
            }
        }
        Ok(())
    }

    /// Makes input paths absolute so the config can be replayed from any
    /// working directory.
    pub fn absolutize(&mut self) -> CliResult<()> {
        fn abs(p: &mut PathBuf) -> CliResult<()> {
            if p.is_relative() {
                *p = std::env::current_dir()?.join(&*p);
            }
            Ok(())
        }
        match self {
            RunConfig::Fit(FitConfig { input, .. })
            | RunConfig::TwoStep(TwoStepConfig { input, .. })
            | RunConfig::Grid(GridConfig { input, .. }) => {
                abs(&mut input.matrix)?;
                abs(&mut input.subjects)
            }
            RunConfig::Effects(EffectsConfig { draws, .. }) | RunConfig::Map(MapConfig { draws, .. }) => abs(draws),
            RunConfig::Simulate(_) | RunConfig::ReplicatePaper(_) => Ok(()),
        }
    }

    /// Files the run reads.
    pub fn inputs(&self) -> Vec<&Path> {
        match self {
            RunConfig::Fit(FitConfig { input, .. })
            | RunConfig::TwoStep(TwoStepConfig { input, .. })
            | RunConfig::Grid(GridConfig { input, .. }) => vec![input.matrix.as_path(), input.subjects.as_path()],
            RunConfig::Effects(EffectsConfig { draws, .. }) | RunConfig::Map(MapConfig { draws, .. }) => {
                vec![draws.as_path()]
            }
            RunConfig::Simulate(_) | RunConfig::ReplicatePaper(_) => Vec::new(),
        }
    }

    pub fn from_json_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}
