//! Execution of resolved run configurations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use matmed::diagnostics::{dic, effective_sample_size, model_grid_search, variance_explained_draws, variance_explained_mpca, GridOptions};
use matmed::effects::{closed_form_effects, posterior_effects, EffectParams, EffectEstimates};
use matmed::gibbs::{run_chain, PosteriorDraws};
use matmed::mediation::{default_thresholds, mediation_quantities, true_active_set, MediationMap, ThresholdRule};
use matmed::model::simulate_dataset;
use matmed::seed::{derive_seed, substream};
use matmed::simharness::{export_figure_data, run_simulation, simulation_truth, summarize_table1, SimConfig};
use matmed::twostep::two_step_fit;
use matmed::{MatrixDataset, ModelParams, Vector};

use crate::config::{EffectsConfig, FitConfig, GridConfig, InputConfig, MapConfig, ReplicateConfig, RunConfig, SimulateConfig, TwoStepConfig};
use crate::error::{CliError, CliResult};
use crate::ingest::{default_ids, export, ingest, Ingested};
use crate::manifest::{compare_outputs, FileDigest, Manifest};
use crate::output;
use crate::preprocess::{preprocess, PreprocessReport};

const DIC_VARIANT: &str =
    "complete-data deviance -2 log p(X, T, Y | theta); plug-in at posterior means of parameters and features";

/// Fractions of the posterior-mean range used when no thresholds are given;
/// the derived thresholds are rounded to three significant digits.
pub const DEFAULT_KAPPA_FRACTIONS: [f64; 3] = [0.25, 0.5, 0.75];

pub const DRAWS_FILE: &str = "draws.json";

/// A chain saved by `fit` for later `effects` and `map` runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedDraws {
    /// Covariate value the fit evaluated its effects at.
    pub z_ref: Vec<f64>,
    pub draws: PosteriorDraws,
}

/// Truth written next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub params: ModelParams,
    pub nie: f64,
    pub nde: f64,
    pub te: f64,
    pub mediation: Vec<f64>,
    pub active: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub k: usize,
    pub p0: usize,
    pub q0: usize,
    pub retained_draws: usize,
    /// How the deviance behind `dic` is defined.
    pub dic_variant: String,
    pub dic: f64,
    pub mean_deviance: f64,
    pub p_d: f64,
    pub variance_explained: f64,
    pub nie_ess: f64,
    pub max_frame_error: f64,
    pub kappas: Vec<f64>,
    /// `user`, or the rule that derived `kappas` from the posterior means.
    pub kappa_rule: String,
    pub zero_variance_cells: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStepSummary {
    pub variance_explained: f64,
    pub mpca_converged: bool,
    pub probit_loglik: f64,
    pub probit_gradient_norm: f64,
    pub probit_coefficients: Vec<f64>,
    pub zero_variance_cells: Vec<(usize, usize)>,
}

/// Output directory bookkeeping for one run.
pub struct RunContext {
    out: PathBuf,
    outputs: Vec<String>,
    timings: BTreeMap<String, f64>,
    /// Human-readable report for the console.
    pub report: Vec<String>,
}

impl RunContext {
    fn new(out: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(out)?;
        Ok(RunContext {
            out: out.to_path_buf(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
            report: Vec::new(),
        })
    }

    /// Registers an output file and returns its full path.
    fn file(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let value = f();
        *self.timings.entry(stage.to_string()).or_default() += start.elapsed().as_secs_f64();
        value
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let path = self.file(name);
        std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }

    fn say(&mut self, line: impl Into<String>) {
        self.report.push(line.into());
    }
}

/// Outcome of a command: its manifest and the console report.
pub struct RunOutcome {
    pub manifest: Manifest,
    pub report: Vec<String>,
}

/// Runs a configuration, writing outputs and `manifest.json` into `out`.
pub fn execute(config: &RunConfig, out: &Path) -> CliResult<RunOutcome> {
    config.validate()?;
    let inputs = config
        .inputs()
        .into_iter()
        .map(|p| FileDigest::of(p, p.display().to_string()))
        .collect::<CliResult<Vec<_>>>()?;
    let mut ctx = RunContext::new(out)?;
    let start = Instant::now();
    match config {
        RunConfig::Simulate(c) => run_simulate(c, &mut ctx)?,
        RunConfig::Fit(c) => run_fit(c, &mut ctx)?,
        RunConfig::TwoStep(c) => run_two_step(c, &mut ctx)?,
        RunConfig::Effects(c) => run_effects(c, &mut ctx)?,
        RunConfig::Map(c) => run_map(c, &mut ctx)?,
        RunConfig::Grid(c) => run_grid(c, &mut ctx)?,
        RunConfig::ReplicatePaper(c) => run_replicate(c, &mut ctx)?,
    }
    ctx.timings.insert("total".into(), start.elapsed().as_secs_f64());

    let mut names = ctx.outputs.clone();
    names.sort();
    let outputs = names
        .into_iter()
        .map(|name| FileDigest::of(&ctx.out.join(&name), name))
        .collect::<CliResult<Vec<_>>>()?;
    let manifest = Manifest {
        tool: "matmed".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: config.name().into(),
        seed: config.seed(),
        config: config.clone(),
        threads: rayon::current_num_threads(),
        timings: ctx.timings,
        inputs,
        outputs,
    };
    manifest.save(out)?;
    Ok(RunOutcome {
        manifest,
        report: ctx.report,
    })
}

/// Re-executes the run recorded in `manifest_path` into `out` and checks
/// that inputs and outputs are byte-identical to the recorded ones.
pub fn replay(manifest_path: &Path, out: &Path) -> CliResult<RunOutcome> {
    let recorded = Manifest::load(manifest_path)?;
    for input in &recorded.inputs {
        let now = crate::manifest::sha256_file(Path::new(&input.path))?;
        if now != input.sha256 {
            return Err(CliError::ReplayMismatch(format!("input {} changed since the recorded run", input.path)));
        }
    }
    let mut outcome = execute(&recorded.config, out)?;
    let diffs = compare_outputs(&recorded, &outcome.manifest);
    if !diffs.is_empty() {
        return Err(CliError::ReplayMismatch(diffs.join("; ")));
    }
    outcome
        .report
        .push(format!("replay: {} output file(s) bit-identical", recorded.outputs.len()));
    Ok(outcome)
}

fn load_input(input: &InputConfig, ctx: &mut RunContext) -> CliResult<(Ingested, PreprocessReport)> {
    ctx.timed("ingest", || {
        let raw = ingest(&input.matrix, &input.subjects)?;
        let (data, report) = preprocess(&raw.data, input.preprocess)?;
        Ok((Ingested { ids: raw.ids, data }, report))
    })
}

fn resolve_z_ref(z_ref: &Option<Vec<f64>>, k: usize, fallback: Vector) -> CliResult<Vector> {
    match z_ref {
        None => Ok(fallback),
        Some(z) if z.len() == k => Ok(Vector::from_column_slice(z)),
        Some(z) => Err(CliError::Config(format!("z_ref has {} entries but the data have {k} covariates", z.len()))),
    }
}

fn resolve_kappas(kappas: &Option<Vec<f64>>, means: &[f64]) -> CliResult<Vec<f64>> {
    match kappas {
        Some(k) => Ok(k.clone()),
        None => Ok(default_thresholds(means, &DEFAULT_KAPPA_FRACTIONS, ThresholdRule::Range)?
            .into_iter()
            .map(round_significant)
            .collect()),
    }
}

fn round_significant(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.2e}").parse().unwrap_or(v)
}

fn report_effects(ctx: &mut RunContext, est: &EffectEstimates) {
    let pct = 100.0 * est.level;
    ctx.say(format!("effect  mean     {pct:.0}% interval"));
    for (name, iv) in [("NIE", &est.nie), ("NDE", &est.nde), ("TE", &est.te)] {
        ctx.say(format!("{name:<6}  {:.4}   [{:.4}, {:.4}]", iv.mean, iv.lo, iv.hi));
    }
}

fn write_map(ctx: &mut RunContext, map: &MediationMap) -> CliResult<()> {
    let path = ctx.file("mediation_map.csv");
    output::write_cells(&path, "quantity", map.p, map.q, &map.quantities)?;
    for (kappa, m) in map.kappas.iter().zip(&map.prob_maps) {
        let path = ctx.file(&output::prob_map_name(*kappa));
        output::write_matrix_cells(&path, "probability", m)?;
    }
    Ok(())
}

fn run_simulate(c: &SimulateConfig, ctx: &mut RunContext) -> CliResult<()> {
    let (truth, data) = ctx.timed("simulate", || -> CliResult<_> {
        let truth = simulation_truth(c.scenario, c.seed)?;
        let (data, _) = simulate_dataset(&truth, c.n, &mut substream(c.seed, "data", 0))?;
        Ok((truth, data))
    })?;
    let ingested = Ingested {
        ids: default_ids(c.n),
        data,
    };
    let (m, s) = (ctx.file("matrix.csv"), ctx.file("subjects.csv"));
    export(&ingested, &m, &s)?;

    let effects = closed_form_effects(&EffectParams::from_params(&truth, &Vector::zeros(truth.k()))?);
    let mediation = mediation_quantities(&truth.a, &truth.b, &truth.beta_et, &truth.beta_ty);
    let active = true_active_set(&truth.a, &truth.b, &truth.beta_et, &truth.beta_ty);
    let path = ctx.file("truth_mediation.csv");
    output::write_cells(&path, "quantity", truth.p(), truth.q(), &mediation)?;
    ctx.say(format!(
        "simulated {} subjects ({} scenario, {}x{}); true NIE {:.4}, NDE {:.4}, TE {:.4}",
        c.n,
        c.scenario.name(),
        truth.p(),
        truth.q(),
        effects.nie,
        effects.nde,
        effects.te
    ));
    ctx.write_json(
        "truth.json",
        &SimulationTruth {
            params: truth,
            nie: effects.nie,
            nde: effects.nde,
            te: effects.te,
            mediation,
            active,
        },
    )
}

fn run_fit(c: &FitConfig, ctx: &mut RunContext) -> CliResult<()> {
    let (input, pre) = load_input(&c.input, ctx)?;
    let data: &MatrixDataset = &input.data;
    let z_ref = resolve_z_ref(&c.z_ref, data.k(), data.mean_covariates())?;
    let sampler = c.chain.sampler(derive_seed(c.seed, "chain", 0));
    let draws = ctx.timed("sampler", || run_chain(data, c.p0, c.q0, &sampler))?;

    let est = ctx.timed("effects", || {
        let mut rng = substream(c.seed, "effects", 0);
        posterior_effects(&draws, &z_ref, c.effect_method, c.level, &mut rng)
    })?;
    let means = draws.mean_mediation();
    let kappas = resolve_kappas(&c.kappas, &means)?;
    let map = ctx.timed("map", || MediationMap::from_draws(&draws, &kappas))?;
    let (d, ve) = ctx.timed("diagnostics", || -> CliResult<_> {
        Ok((dic(&draws, data)?, variance_explained_draws(&draws, data)?))
    })?;

    let path = ctx.file("effects.csv");
    output::write_effects(&path, &est)?;
    write_map(ctx, &map)?;

    let mut traces: Vec<(String, Vec<f64>)> = vec![
        ("NIE".into(), est.draws.iter().map(|p| p.nie).collect()),
        ("NDE".into(), est.draws.iter().map(|p| p.nde).collect()),
        ("TE".into(), est.draws.iter().map(|p| p.te).collect()),
        ("alpha_y".into(), draws.coefficients.iter().map(|c| c.alpha_y).collect()),
        ("beta_ey".into(), draws.coefficients.iter().map(|c| c.beta_ey).collect()),
        ("phi".into(), draws.coefficients.iter().map(|c| c.phi).collect()),
    ];
    let dlat = draws.dims.latent();
    for j in 0..dlat {
        traces.push((format!("beta_et_{}", j + 1), draws.coefficients.iter().map(|c| c.beta_et[j]).collect()));
    }
    for j in 0..dlat {
        traces.push((format!("beta_ty_{}", j + 1), draws.coefficients.iter().map(|c| c.beta_ty[j]).collect()));
    }
    for j in 0..data.k() {
        traces.push((format!("beta_zy_{}", j + 1), draws.coefficients.iter().map(|c| c.beta_zy[j]).collect()));
    }
    let path = ctx.file("draws_summary.csv");
    output::write_trace_summary(&path, &traces, c.level)?;
    let path = ctx.file("loadings_a.csv");
    output::write_matrix_cells(&path, "value", &draws.mean_params.a)?;
    let path = ctx.file("loadings_b.csv");
    output::write_matrix_cells(&path, "value", &draws.mean_params.b)?;

    let nie_ess = effective_sample_size(&traces[0].1).map_or(f64::NAN, |e| e.value);
    let summary = FitSummary {
        n: data.n(),
        p: data.p(),
        q: data.q(),
        k: data.k(),
        p0: c.p0,
        q0: c.q0,
        retained_draws: draws.len(),
        dic_variant: DIC_VARIANT.into(),
        dic: d.dic,
        mean_deviance: d.mean_deviance,
        p_d: d.p_d,
        variance_explained: ve,
        nie_ess,
        max_frame_error: draws.max_frame_error,
        kappas: kappas.clone(),
        kappa_rule: if c.kappas.is_some() { "user" } else { "range-fractions" }.into(),
        zero_variance_cells: pre.zero_variance,
    };
    ctx.write_json("fit_summary.json", &summary)?;
    if c.save_draws {
        ctx.write_json(
            DRAWS_FILE,
            &SavedDraws {
                z_ref: z_ref.as_slice().to_vec(),
                draws,
            },
        )?;
    }

    ctx.say(format!(
        "joint fit: n={} p={} q={} p0={} q0={}, {} retained draws",
        summary.n, summary.p, summary.q, c.p0, c.q0, summary.retained_draws
    ));
    report_effects(ctx, &est);
    ctx.say(format!("DIC {:.4}  VE {:.4}  NIE ESS {:.1}", summary.dic, ve, nie_ess));
    Ok(())
}

fn run_two_step(c: &TwoStepConfig, ctx: &mut RunContext) -> CliResult<()> {
    let (input, pre) = load_input(&c.input, ctx)?;
    let data = &input.data;
    let z_ref = resolve_z_ref(&c.z_ref, data.k(), data.mean_covariates())?;
    let fit = ctx.timed("fit", || two_step_fit(data, c.p0, c.q0))?;
    let point = closed_form_effects(&EffectParams::from_two_step(&fit, &z_ref)?);

    let path = ctx.file("effects.csv");
    output::write_point_effects(&path, &point)?;
    let path = ctx.file("mediation_map.csv");
    output::write_cells(&path, "quantity", data.p(), data.q(), &fit.mediation_quantities())?;
    let path = ctx.file("loadings_a.csv");
    output::write_matrix_cells(&path, "value", fit.mpca.a.as_mat())?;
    let path = ctx.file("loadings_b.csv");
    output::write_matrix_cells(&path, "value", fit.mpca.b.as_mat())?;
    let summary = TwoStepSummary {
        variance_explained: variance_explained_mpca(&fit.mpca, data)?,
        mpca_converged: fit.mpca.converged,
        probit_loglik: fit.outcome.loglik,
        probit_gradient_norm: fit.outcome.gradient_norm,
        probit_coefficients: fit.outcome.coef.as_slice().to_vec(),
        zero_variance_cells: pre.zero_variance,
    };
    ctx.write_json("two_step_summary.json", &summary)?;

    ctx.say(format!("two-step fit: p0={} q0={}", c.p0, c.q0));
    ctx.say(format!("NIE {:.4}  NDE {:.4}  TE {:.4}", point.nie, point.nde, point.te));
    ctx.say(format!("VE {:.4}", summary.variance_explained));
    Ok(())
}

fn load_draws(path: &Path) -> CliResult<SavedDraws> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        message: format!("not a saved chain: {e}"),
    })
}

fn run_effects(c: &EffectsConfig, ctx: &mut RunContext) -> CliResult<()> {
    let saved = ctx.timed("load", || load_draws(&c.draws))?;
    let z_ref = resolve_z_ref(&c.z_ref, saved.draws.dims.k, Vector::from_column_slice(&saved.z_ref))?;
    let est = ctx.timed("effects", || {
        let mut rng = substream(c.seed.unwrap_or(0), "effects", 0);
        posterior_effects(&saved.draws, &z_ref, c.effect_method, c.level, &mut rng)
    })?;
    let path = ctx.file("effects.csv");
    output::write_effects(&path, &est)?;
    report_effects(ctx, &est);
    Ok(())
}

fn run_map(c: &MapConfig, ctx: &mut RunContext) -> CliResult<()> {
    let saved = ctx.timed("load", || load_draws(&c.draws))?;
    let kappas = resolve_kappas(&c.kappas, &saved.draws.mean_mediation())?;
    let map = ctx.timed("map", || MediationMap::from_draws(&saved.draws, &kappas))?;
    write_map(ctx, &map)?;
    ctx.say(format!("mediation map {}x{} with thresholds {:?}", map.p, map.q, map.kappas));
    Ok(())
}

fn run_grid(c: &GridConfig, ctx: &mut RunContext) -> CliResult<()> {
    let (input, _) = load_input(&c.input, ctx)?;
    let sampler = c.chain.sampler(derive_seed(c.seed, "chain", 0));
    let opts = GridOptions {
        level: c.level,
        keep_draws: false,
    };
    let cells = ctx.timed("grid", || model_grid_search(&input.data, &c.p0s, &c.q0s, &sampler, &opts))?;
    let path = ctx.file("grid_summary.csv");
    output::write_grid_summary(&path, &cells)?;

    ctx.say("p0  q0  DIC           VE      NIE");
    for cell in &cells {
        match &cell.outcome {
            Ok(f) => ctx.say(format!(
                "{:<3} {:<3} {:<13.4} {:.4}  {:.4}",
                cell.p0, cell.q0, f.dic.dic, f.ve, f.nie.mean
            )),
            Err(e) => ctx.say(format!("{:<3} {:<3} failed: {e}", cell.p0, cell.q0)),
        }
    }
    Ok(())
}

fn run_replicate(c: &ReplicateConfig, ctx: &mut RunContext) -> CliResult<()> {
    let sim = SimConfig {
        scenario: c.scenario,
        n: c.n,
        replicates: c.replicates,
        methods: c.methods.clone(),
        sampler: c.chain.sampler(0),
        master_seed: c.seed,
        level: c.level,
        kappas: c.kappas.clone().unwrap_or_else(|| c.scenario.kappa_grid()),
    };
    let run = ctx.timed("simulation", || run_simulation(&sim))?;
    let path = ctx.file("replicates.csv");
    output::write_replicates(&path, &run.results)?;
    if !run.failures.is_empty() {
        let path = ctx.file("failures.csv");
        output::write_failures(&path, &run.failures)?;
        ctx.say(format!("{} replicate fit(s) failed; see failures.csv", run.failures.len()));
    }
    if c.table1 {
        let rows = summarize_table1(&run)?;
        let path = ctx.file("table1.csv");
        output::write_table1(&path, &rows)?;
        ctx.say(format!(
            "{} scenario, n={}, {} replicates (values x 1000 except means)",
            c.scenario.name(),
            c.n,
            c.replicates
        ));
        ctx.say("method    effect  truth   mean    MSE     Var     Bias");
        for r in &rows {
            ctx.say(format!(
                "{:<9} {:<6}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}",
                r.method.name(),
                r.effect,
                r.truth,
                r.mean,
                r.mse_x1000,
                r.var_x1000,
                r.bias_x1000
            ));
        }
    }
    if c.figure_data {
        let dir = ctx.out.join("figures");
        for path in export_figure_data(&run, &dir)? {
            let name = path.strip_prefix(&ctx.out).unwrap_or(&path).to_string_lossy().into_owned();
            ctx.outputs.push(name);
        }
    }
    Ok(())
}
