//! Command-line syntax and its translation into [`RunConfig`]s.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use matmed::effects::EffectMethod;
use matmed::simharness::{Method, SimConfig};
use matmed::{MuMode, Priors, Scenario};

use crate::config::{
    ChainSettings, EffectsConfig, FitConfig, GridConfig, InputConfig, MapConfig, ReplicateConfig, RunConfig,
    SimulateConfig, TwoStepConfig,
};
use crate::error::{CliError, CliResult};
use crate::preprocess::PreprocessMode;

#[derive(Debug, Parser)]
#[command(name = "matmed", version, about = "Bayesian joint mediation analysis with matrix-valued mediators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// A fixed seed or `auto` (drawn from the clock and recorded in the
/// manifest).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedArg {
    Fixed(u64),
    Auto,
}

impl FromStr for SeedArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(SeedArg::Auto);
        }
        s.parse()
            .map(SeedArg::Fixed)
            .map_err(|_| format!("seed must be a non-negative integer or 'auto', got '{s}'"))
    }
}

impl SeedArg {
    pub fn resolve(self) -> u64 {
        match self {
            SeedArg::Fixed(s) => s,
            SeedArg::Auto => {
                let nanos = std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map_or(0, |d| d.as_nanos() as u64);
                matmed::seed::derive_seed(nanos, "auto", std::process::id() as u64)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MuModeArg {
    Sampled,
    SampleMean,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Long-format matrix CSV: subject_id,row_index,col_index,value.
    #[arg(long)]
    pub matrix: PathBuf,
    /// Subjects CSV: subject_id,E,Y,Z1,...,ZK.
    #[arg(long)]
    pub subjects: PathBuf,
    #[arg(long, value_enum, default_value = "center")]
    pub preprocess: PreprocessMode,
}

impl InputArgs {
    fn config(&self) -> InputConfig {
        InputConfig {
            matrix: self.matrix.clone(),
            subjects: self.subjects.clone(),
            preprocess: self.preprocess,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ChainArgs {
    #[arg(long = "iters")]
    pub iterations: Option<usize>,
    #[arg(long = "burnin")]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Skip the Varimax step (loadings stay rotationally unidentified).
    #[arg(long)]
    pub no_varimax: bool,
    #[arg(long, value_enum)]
    pub mu_mode: Option<MuModeArg>,
    /// Prior precision of the sampled mean matrix.
    #[arg(long)]
    pub mu_precision: Option<f64>,
    #[arg(long)]
    pub phi_shape: Option<f64>,
    #[arg(long)]
    pub phi_rate: Option<f64>,
    /// Prior precision of the regression coefficients.
    #[arg(long)]
    pub reg_prec: Option<f64>,
}

impl ChainArgs {
    fn settings(&self, base: ChainSettings) -> CliResult<ChainSettings> {
        let d = Priors::default();
        let default_precision = match d.mu_mode {
            MuMode::Sampled { precision } => precision,
            MuMode::SampleMean => 0.01,
        };
        let mu_mode = match (self.mu_mode, self.mu_precision) {
            (Some(MuModeArg::SampleMean), Some(_)) => {
                return Err(CliError::Usage("--mu-precision only applies to --mu-mode sampled".into()))
            }
            (Some(MuModeArg::SampleMean), None) => MuMode::SampleMean,
            (Some(MuModeArg::Sampled), p) => MuMode::Sampled {
                precision: p.unwrap_or(default_precision),
            },
            (None, Some(p)) => MuMode::Sampled { precision: p },
            (None, None) => base.priors.mu_mode,
        };
        Ok(ChainSettings {
            iterations: self.iterations.unwrap_or(base.iterations),
            burn_in: self.burn_in.unwrap_or(base.burn_in),
            thin: self.thin.unwrap_or(base.thin),
            varimax: !self.no_varimax && base.varimax,
            priors: Priors {
                phi_shape: self.phi_shape.unwrap_or(base.priors.phi_shape),
                phi_rate: self.phi_rate.unwrap_or(base.priors.phi_rate),
                reg_prec: self.reg_prec.unwrap_or(base.priors.reg_prec),
                mu_mode,
            },
        })
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a synthetic dataset with its ground truth.
    Simulate {
        #[arg(long, default_value = "low")]
        scenario: Scenario,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: SeedArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the joint model by Gibbs sampling.
    Fit {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        p0: usize,
        #[arg(long)]
        q0: usize,
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long)]
        seed: SeedArg,
        #[arg(long, default_value_t = 0.9)]
        level: f64,
        /// Probability-map thresholds (comma separated).
        #[arg(long, value_delimiter = ',')]
        kappas: Option<Vec<f64>>,
        /// Monte Carlo effects with this many samples instead of the closed
        /// form.
        #[arg(long)]
        mc_samples: Option<usize>,
        /// Covariate value for the effects (comma separated).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        z_ref: Option<Vec<f64>>,
        #[arg(long)]
        no_save_draws: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the two-step baseline (MPCA, then separate regressions).
    TwoStep {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        p0: usize,
        #[arg(long)]
        q0: usize,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        z_ref: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute effects from a saved chain.
    Effects {
        #[arg(long)]
        draws: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        level: f64,
        #[arg(long)]
        mc_samples: Option<usize>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        z_ref: Option<Vec<f64>>,
        #[arg(long)]
        seed: Option<SeedArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute mediation maps from a saved chain.
    Map {
        #[arg(long)]
        draws: PathBuf,
        #[arg(long, value_delimiter = ',')]
        kappas: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a grid of latent dimensions and compare DIC and VE.
    Grid {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        p0s: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        q0s: Vec<usize>,
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long)]
        seed: SeedArg,
        #[arg(long, default_value_t = 0.9)]
        level: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the synthetic comparison study.
    ReplicatePaper {
        /// Write the method comparison table.
        #[arg(long)]
        table1: bool,
        /// Write scatter, heatmap and AUC tables for plotting.
        #[arg(long)]
        figure_data: bool,
        /// 50 replicates, 4000 iterations, 1000 burn-in (the default).
        #[arg(long, conflicts_with = "full_scale")]
        desk_scale: bool,
        /// 500 replicates, 10000 iterations, 3000 burn-in.
        #[arg(long)]
        full_scale: bool,
        #[arg(long, default_value = "low")]
        scenario: Scenario,
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long)]
        seed: SeedArg,
        #[arg(long, default_value_t = 0.9)]
        level: f64,
        #[arg(long, value_delimiter = ',')]
        kappas: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute a run configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-execute the run recorded in a manifest and verify its outputs.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// What `main` should do.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Execute { config: RunConfig, out: PathBuf },
    Replay { manifest: PathBuf, out: PathBuf },
}

fn effect_method(mc_samples: Option<usize>) -> EffectMethod {
    mc_samples.map_or(EffectMethod::ClosedForm, |samples| EffectMethod::MonteCarlo { samples })
}

impl Command {
    pub fn into_action(self) -> CliResult<Action> {
        let (mut config, out) = match self {
            Command::Simulate { scenario, n, seed, out } => (
                RunConfig::Simulate(SimulateConfig {
                    scenario,
                    n,
                    seed: seed.resolve(),
                }),
                out,
            ),
            Command::Fit {
                input,
                p0,
                q0,
                chain,
                seed,
                level,
                kappas,
                mc_samples,
                z_ref,
                no_save_draws,
                out,
            } => (
                RunConfig::Fit(FitConfig {
                    input: input.config(),
                    p0,
                    q0,
                    chain: chain.settings(ChainSettings::default())?,
                    seed: seed.resolve(),
                    level,
                    kappas,
                    effect_method: effect_method(mc_samples),
                    z_ref,
                    save_draws: !no_save_draws,
                }),
                out,
            ),
            Command::TwoStep {
                input,
                p0,
                q0,
                z_ref,
                out,
            } => (
                RunConfig::TwoStep(TwoStepConfig {
                    input: input.config(),
                    p0,
                    q0,
                    z_ref,
                }),
                out,
            ),
            Command::Effects {
                draws,
                level,
                mc_samples,
                z_ref,
                seed,
                out,
            } => (
                RunConfig::Effects(EffectsConfig {
                    draws,
                    level,
                    effect_method: effect_method(mc_samples),
                    z_ref,
                    seed: seed.map(SeedArg::resolve),
                }),
                out,
            ),
            Command::Map { draws, kappas, out } => (RunConfig::Map(MapConfig { draws, kappas }), out),
            Command::Grid {
                input,
                p0s,
                q0s,
                chain,
                seed,
                level,
                out,
            } => (
                RunConfig::Grid(GridConfig {
                    input: input.config(),
                    p0s,
                    q0s,
                    chain: chain.settings(ChainSettings::default())?,
                    seed: seed.resolve(),
                    level,
                }),
                out,
            ),
            Command::ReplicatePaper {
                table1,
                figure_data,
                desk_scale: _,
                full_scale,
                scenario,
                n,
                replicates,
                methods,
                chain,
                seed,
                level,
                kappas,
                out,
            } => {
                let seed = seed.resolve();
                let base = if full_scale {
                    SimConfig::full_scale(scenario, n, seed)
                } else {
                    SimConfig::desk_scale(scenario, n, seed)
                };
                let s = base.sampler;
                let base_chain = ChainSettings {
                    iterations: s.iterations,
                    burn_in: s.burn_in,
                    thin: s.thin,
                    varimax: s.varimax_enabled,
                    priors: s.priors,
                };
                let neither = !table1 && !figure_data;
                (
                    RunConfig::ReplicatePaper(ReplicateConfig {
                        scenario,
                        n,
                        replicates: replicates.unwrap_or(base.replicates),
                        methods: methods.unwrap_or(base.methods),
                        chain: chain.settings(base_chain)?,
                        seed,
                        level,
                        kappas,
                        table1: table1 || neither,
                        figure_data: figure_data || neither,
                    }),
                    out,
                )
            }
            Command::Run { config, out } => (RunConfig::from_json_file(&config)?, out),
            Command::Replay { manifest, out } => return Ok(Action::Replay { manifest, out }),
        };
        config.absolutize()?;
        config.validate()?;
        Ok(Action::Execute { config, out })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn action(args: &[&str]) -> CliResult<Action> {
        Cli::try_parse_from(args).unwrap().command.into_action()
    }

    #[test]
    fn seed_parsing() {
        assert_eq!("7".parse::<SeedArg>(), Ok(SeedArg::Fixed(7)));
        assert_eq!("auto".parse::<SeedArg>(), Ok(SeedArg::Auto));
        assert!("-1".parse::<SeedArg>().is_err());
    }

    #[test]
    fn seed_is_mandatory() {
        assert!(Cli::try_parse_from(["matmed", "simulate", "--n", "10", "--out", "x"]).is_err());
        assert!(Cli::try_parse_from(["matmed", "simulate", "--n", "10", "--out", "x", "--seed", "auto"]).is_ok());
    }

    #[test]
    fn fit_flags_resolve() {
        let a = action(&[
            "matmed", "fit", "--matrix", "m.csv", "--subjects", "s.csv", "--p0", "2", "--q0", "3", "--iters", "400",
            "--burnin", "100", "--thin", "2", "--seed", "5", "--kappas", "0.1,0.2", "--mu-mode", "sample-mean",
            "--out", "o",
        ])
        .unwrap();
        let Action::Execute {
            config: RunConfig::Fit(fit),
            ..
        } = a
        else {
            panic!()
        };
        assert_eq!((fit.p0, fit.q0, fit.seed), (2, 3, 5));
        assert_eq!((fit.chain.iterations, fit.chain.burn_in, fit.chain.thin), (400, 100, 2));
        assert_eq!(fit.chain.priors.mu_mode, MuMode::SampleMean);
        assert_eq!(fit.kappas, Some(vec![0.1, 0.2]));
        assert!(fit.input.matrix.is_absolute());
    }

    #[test]
    fn bad_schedule_is_config_error() {
        let err = action(&[
            "matmed", "fit", "--matrix", "m", "--subjects", "s", "--p0", "2", "--q0", "2", "--iters", "10",
            "--burnin", "10", "--seed", "1", "--out", "o",
        ])
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn replicate_defaults_to_desk_scale() {
        let a = action(&["matmed", "replicate-paper", "--table1", "--desk-scale", "--seed", "1", "--out", "o"]).unwrap();
        let Action::Execute {
            config: RunConfig::ReplicatePaper(c),
            ..
        } = a
        else {
            panic!()
        };
        assert_eq!((c.replicates, c.chain.iterations, c.chain.burn_in, c.n), (50, 4000, 1000, 300));
        assert!(c.table1 && !c.figure_data);
    }
}
