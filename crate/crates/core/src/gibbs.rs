//! Gibbs sampler for the joint model.
//!
//! One iteration runs, in order: probit auxiliaries, latent features, the
//! columns of `A`, the columns of `B`, the mean `μ` (when sampled, followed
//! by a joint translation of `μ` and the features), the precision `φ`, the
//! mediator regression, the outcome regression, and finally the Varimax
//! rotation of `A` and `B` propagated to every rotation-dependent quantity.
//!
//! The loading updates assume orthonormal `A` and `B`; the sampler keeps
//! them on the Stiefel manifold throughout.

use nalgebra::Cholesky;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dist::{normal_truncated_above, normal_truncated_below, vmf_cosine};
use crate::error::{Error, Result};
use crate::linalg::{orthonormality_error, polar_retraction, vec, Dims, Mat, MatrixDataset, Vector};
use crate::mediation::mediation_quantities;
use crate::model::{complete_loglik, LatentState, ModelParams, MuMode, Priors};
use crate::rotation::{varimax, VarimaxOptions};
use crate::seed::rng_from_seed;
use crate::twostep::{fit_mpca, MpcaOptions};

/// Sampler settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub varimax_enabled: bool,
    pub priors: Priors,
    pub seed: u64,
    /// Keep every retained `ModelParams` (memory grows with `p q`).
    #[serde(default)]
    pub retain_params: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            iterations: 4000,
            burn_in: 1000,
            thin: 5,
            varimax_enabled: true,
            priors: Priors::default(),
            seed: 0,
            retain_params: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.thin == 0 {
            return Err(Error::Config("iterations and thin must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than the number of iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.retained() == 0 {
            return Err(Error::Config("the schedule retains no draws".into()));
        }
        self.priors.validate()
    }

    /// Number of retained draws, `floor((iterations - burn_in) / thin)`.
    pub fn retained(&self) -> usize {
        (self.iterations.saturating_sub(self.burn_in)) / self.thin
    }

    fn keeps(&self, iteration: usize) -> bool {
        iteration > self.burn_in && (iteration - self.burn_in) % self.thin == 0
    }
}

/// The parameters that enter the causal effects, for one retained draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientDraw {
    pub alpha_y: f64,
    pub beta_ey: f64,
    pub beta_et: Vector,
    pub beta_ty: Vector,
    pub omega_zt: Mat,
    pub beta_zy: Vector,
    pub phi: f64,
}

impl CoefficientDraw {
    pub fn from_params(theta: &ModelParams) -> Self {
        CoefficientDraw {
            alpha_y: theta.alpha_y,
            beta_ey: theta.beta_ey,
            beta_et: theta.beta_et.clone(),
            beta_ty: theta.beta_ty.clone(),
            omega_zt: theta.omega_zt.clone(),
            beta_zy: theta.beta_zy.clone(),
            phi: theta.phi,
        }
    }
}

/// Retained output of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub dims: Dims,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub coefficients: Vec<CoefficientDraw>,
    /// Per-draw mediation quantities (length `p q`, column-major).
    pub mediation: Vec<Vec<f64>>,
    /// Per-draw complete-data deviance `-2 log p(X, T, Y | Θ)`.
    pub deviances: Vec<f64>,
    /// Every retained parameter set, when requested.
    pub params: Option<Vec<ModelParams>>,
    /// Posterior means; loadings are the nearest orthonormal frames to the
    /// averaged loadings.
    pub mean_params: ModelParams,
    /// Posterior mean latent features per subject.
    pub mean_features: Vec<Mat>,
    /// Posterior mean of `A T_i Bᵀ` per subject.
    pub mean_signal: Vec<Mat>,
    /// Worst `max|FᵀF - I|` over all retained loading frames.
    pub max_frame_error: f64,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Element-wise posterior mean of the mediation quantities.
    pub fn mean_mediation(&self) -> Vec<f64> {
        let r = self.mediation.len().max(1) as f64;
        let len = self.mediation.first().map_or(0, Vec::len);
        let mut out = vec![0.0; len];
        for draw in &self.mediation {
            for (o, v) in out.iter_mut().zip(draw) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= r);
        out
    }
}

/// Draws `x ~ N(Λ⁻¹ h, Λ⁻¹)` given the precision `Λ` and linear term `h`.
pub fn draw_gaussian_precision<R: Rng + ?Sized>(
    precision: &Mat,
    linear: &Vector,
    rng: &mut R,
) -> Result<Vector> {
    let chol = Cholesky::new(precision.clone())
        .ok_or_else(|| Error::Numerical("posterior precision is not positive definite".into()))?;
    let mean = chol.solve(linear);
    let z = Vector::from_fn(linear.len(), |_, _| rng.sample(StandardNormal));
    let l = chol.l();
    let noise = l
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    Ok(mean + noise)
}

/// Redraws every probit auxiliary from `N(η_i, 1)` truncated to `[0, ∞)`
/// when `Y_i = 1` and to `(-∞, 0)` otherwise.
pub fn update_probit_auxiliary<R: Rng + ?Sized>(
    theta: &ModelParams,
    state: &LatentState,
    data: &MatrixDataset,
    rng: &mut R,
) -> Vec<f64> {
    (0..data.n())
        .map(|i| {
            let eta = theta.linear_predictor(data.e()[i], &state.t[i], &data.z_row(i));
            if data.y()[i] {
                normal_truncated_below(eta, 0.0, rng)
            } else {
                normal_truncated_above(eta, 0.0, rng)
            }
        })
        .collect()
}

/// Precision of `vec(T_i)` given everything else:
/// `φ WᵀW + I + β_TY β_TYᵀ`, which is `(1 + φ) I + β_TY β_TYᵀ` for
/// orthonormal loadings.
pub fn latent_precision(theta: &ModelParams) -> Mat {
    let d = theta.p0() * theta.q0();
    let wtw = (theta.b.tr_mul(&theta.b)).kronecker(&theta.a.tr_mul(&theta.a));
    let mut prec = wtw * theta.phi + Mat::identity(d, d);
    prec.ger(1.0, &theta.beta_ty, &theta.beta_ty, 1.0);
    prec
}

/// Linear term `m_i` of the latent-feature conditional for one subject.
fn latent_linear(theta: &ModelParams, proj: &Mat, e: f64, z: &Vector, ystar: f64) -> Vector {
    let offset = ystar - theta.alpha_y - theta.beta_ey * e - theta.beta_zy.dot(z);
    let mut m = vec(proj) * theta.phi;
    m += theta.mediator_mean(e, z);
    m.axpy(offset, &theta.beta_ty, 1.0);
    m
}

/// Moments of the latent-feature conditional for every subject:
/// the shared precision and the per-subject means.
pub fn latent_conditional(
    theta: &ModelParams,
    state: &LatentState,
    data: &MatrixDataset,
) -> Result<(Mat, Vec<Vector>)> {
    let prec = latent_precision(theta);
    let chol = Cholesky::new(prec.clone())
        .ok_or_else(|| Error::Numerical("latent precision is not positive definite".into()))?;
    let mu_proj = theta.a.tr_mul(&theta.mu) * &theta.b;
    let means = (0..data.n())
        .map(|i| {
            let proj = theta.a.tr_mul(&data.x()[i]) * &theta.b - &mu_proj;
            let m = latent_linear(theta, &proj, data.e()[i], &data.z_row(i), state.ystar[i]);
            chol.solve(&m)
        })
        .collect();
    Ok((prec, means))
}

/// Draws every `vec(T_i)` from its Gaussian full conditional.
pub fn update_latent_t<R: Rng + ?Sized>(
    theta: &ModelParams,
    state: &LatentState,
    data: &MatrixDataset,
    rng: &mut R,
) -> Result<Vec<Mat>> {
    let (p0, q0) = (theta.p0(), theta.q0());
    let d = p0 * q0;
    let prec = latent_precision(theta);
    let chol = Cholesky::new(prec)
        .ok_or_else(|| Error::Numerical("latent precision is not positive definite".into()))?;
    let l = chol.l();
    let mu_proj = theta.a.tr_mul(&theta.mu) * &theta.b;
    let mut out = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let proj = theta.a.tr_mul(&data.x()[i]) * &theta.b - &mu_proj;
        let m = latent_linear(theta, &proj, data.e()[i], &data.z_row(i), state.ystar[i]);
        let mean = chol.solve(&m);
        let z = Vector::from_fn(d, |_, _| rng.sample(StandardNormal));
        let noise = l
            .tr_solve_lower_triangular(&z)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        out.push(Mat::from_column_slice(p0, q0, (mean + noise).as_slice()));
    }
    Ok(out)
}

/// Which loading matrix to update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    A,
    B,
}

/// Draws a frame from the matrix Langevin (von Mises–Fisher on the Stiefel
/// manifold) density `∝ exp(tr(Cᵀ F))`, one column at a time: each column is
/// von Mises–Fisher on the unit sphere of the orthogonal complement of the
/// other columns, with direction the projection of the matching column of
/// `C` and concentration that projection's norm.
pub fn sample_langevin_columns<R: Rng + ?Sized>(frame: &Mat, c: &Mat, rng: &mut R) -> Mat {
    let (rows, cols) = frame.shape();
    assert_eq!(c.shape(), (rows, cols));
    assert!(cols < rows, "column updates need cols < rows");
    let sphere_dim = rows - cols + 1;
    let mut f = frame.clone();

    let project = |f: &Mat, skip: usize, v: &mut Vector| {
        for l in 0..cols {
            if l != skip {
                let col = f.column(l);
                let coef = col.dot(v);
                v.axpy(-coef, &col, 1.0);
            }
        }
    };

    for j in 0..cols {
        let mut u: Vector = c.column(j).into_owned();
        project(&f, j, &mut u);
        let kappa = u.norm();
        let new_col = if kappa > 1e-300 && kappa.is_finite() {
            u /= kappa;
            let w = vmf_cosine(kappa, sphere_dim, rng);
            let v = loop {
                let mut g = Vector::from_fn(rows, |_, _| rng.sample(StandardNormal));
                project(&f, j, &mut g);
                let along = u.dot(&g);
                g.axpy(-along, &u, 1.0);
                let norm = g.norm();
                if norm > 1e-10 {
                    break g / norm;
                }
            };
            u * w + v * (1.0 - w * w).max(0.0).sqrt()
        } else {
            // zero concentration: uniform on the embedded sphere
            loop {
                let mut g = Vector::from_fn(rows, |_, _| rng.sample(StandardNormal));
                project(&f, j, &mut g);
                let norm = g.norm();
                if norm > 1e-10 {
                    break g / norm;
                }
            }
        };
        // one more projection removes rounding drift
        let mut col = new_col;
        project(&f, j, &mut col);
        let norm = col.norm();
        f.set_column(j, &(col / norm));
    }
    f
}

/// Linear coefficient `φ Σ_i (X_i − μ) B T_iᵀ` (for `A`) or
/// `φ Σ_i (X_i − μ)ᵀ A T_i` (for `B`) of the loading conditional.
pub fn loading_linear_term(
    which: Frame,
    theta: &ModelParams,
    state: &LatentState,
    data: &MatrixDataset,
) -> Mat {
    let t_sum: Mat = state
        .t
        .iter()
        .fold(Mat::zeros(theta.p0(), theta.q0()), |acc, t| acc + t);
    match which {
        Frame::A => {
            let mut c = Mat::zeros(theta.p(), theta.p0());
            for (x, t) in data.x().iter().zip(&state.t) {
                c += x * (&theta.b * t.transpose());
            }
            c -= &theta.mu * (&theta.b * t_sum.transpose());
            c * theta.phi
        }
        Frame::B => {
            let mut c = Mat::zeros(theta.q(), theta.q0());
            for (x, t) in data.x().iter().zip(&state.t) {
                c += x.tr_mul(&(&theta.a * t));
            }
            c -= theta.mu.tr_mul(&(&theta.a * t_sum));
            c * theta.phi
        }
    }
}

/// Draws `A` (or `B`) column by column from its full conditional under a
/// uniform prior on the Stiefel manifold.
pub fn update_loading_columns<R: Rng + ?Sized>(
    which: Frame,
    theta: &ModelParams,
    state: &LatentState,
    data: &MatrixDataset,
    rng: &mut R,
) -> Result<Mat> {
    let frame = match which {
        Frame::A => &theta.a,
        Frame::B => &theta.b,
    };
    if frame.ncols() >= frame.nrows() {
        return Err(Error::Config(
            "column-wise loading updates need fewer latent than observed dimensions".into(),
        ));
    }
    let c = loading_linear_term(which, theta, state, data);
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite loading conditional".into()));
    }
    Ok(sample_langevin_columns(frame, &c, rng))
}

/// Draws `vec(μ)` from `N(φ Σ vec(X_i − A T_i Bᵀ) / (nφ + λ), (nφ + λ)⁻¹ I)`.
pub fn update_mu<R: Rng + ?Sized>(
    theta: &ModelParams,
    state: &LatentState,
    data: &MatrixDataset,
    prior_precision: f64,
    rng: &mut R,
) -> Mat {
    let n = data.n() as f64;
    let mut resid_sum = Mat::zeros(theta.p(), theta.q());
    let mut t_sum = Mat::zeros(theta.p0(), theta.q0());
    for (x, t) in data.x().iter().zip(&state.t) {
        resid_sum += x;
        t_sum += t;
    }
    resid_sum -= &theta.a * t_sum * theta.b.transpose();
    let post_prec = n * theta.phi + prior_precision;
    let sd = post_prec.sqrt().recip();
    let mut mu = resid_sum * (theta.phi / post_prec);
    for v in mu.as_mut_slice() {
        *v += sd * rng.sample::<f64, _>(StandardNormal);
    }
    mu
}

/// Joint translation `μ → μ + A Δ Bᵀ`, `T_i → T_i − Δ` with `vec(Δ)` drawn
/// from its conditional along that direction. The matrix likelihood is
/// unchanged by the move; only the priors on `μ` and the features and the
/// probit auxiliaries constrain `Δ`. Without it the sampler mixes slowly
/// along this ridge.
pub fn shift_mean_and_features<R: Rng + ?Sized>(
    theta: &ModelParams,
    state: &LatentState,
    data: &MatrixDataset,
    prior_precision: f64,
    rng: &mut R,
) -> Result<(Mat, Vec<Mat>)> {
    let (p0, q0) = (theta.p0(), theta.q0());
    let d = p0 * q0;
    let n = data.n() as f64;
    let b = &theta.beta_ty;
    let mut prec = Mat::identity(d, d) * (prior_precision + n);
    prec.ger(n, b, b, 1.0);

    let mut h = -vec(&(theta.a.tr_mul(&theta.mu) * &theta.b)) * prior_precision;
    let mut resid_y = 0.0;
    for i in 0..data.n() {
        let z = data.z_row(i);
        let e = data.e()[i];
        h += vec(&state.t[i]) - theta.mediator_mean(e, &z);
        resid_y += state.ystar[i] - theta.linear_predictor(e, &state.t[i], &z);
    }
    h.axpy(-resid_y, b, 1.0);

    let delta = draw_gaussian_precision(&prec, &h, rng)?;
    let delta = Mat::from_column_slice(p0, q0, delta.as_slice());
    let mu = &theta.mu + &theta.a * &delta * theta.b.transpose();
    let t = state.t.iter().map(|t| t - &delta).collect();
    Ok((mu, t))
}

/// Sum of squared residuals `Σ_i ‖X_i − μ − A T_i Bᵀ‖²`.
pub fn residual_sum_of_squares(theta: &ModelParams, state: &LatentState, data: &MatrixDataset) -> f64 {
    let bt = theta.b.transpose();
    data.x()
        .iter()
        .zip(&state.t)
        .map(|(x, t)| (x - &theta.mu - &theta.a * t * &bt).norm_squared())
        .sum()
}

/// Draws `φ ~ Gamma(shape + npq/2, rate + RSS/2)` (shape-rate).
pub fn update_phi<R: Rng + ?Sized>(
    theta: &ModelParams,
    state: &LatentState,
    data: &MatrixDataset,
    priors: &Priors,
    rng: &mut R,
) -> Result<f64> {
    let (shape, rate) = phi_posterior(theta, state, data, priors);
    let g = Gamma::new(shape, rate.recip())
        .map_err(|e| Error::Numerical(format!("invalid gamma posterior: {e}")))?;
    Ok(g.sample(rng))
}

/// Shape and rate of the precision's full conditional.
pub fn phi_posterior(
    theta: &ModelParams,
    state: &LatentState,
    data: &MatrixDataset,
    priors: &Priors,
) -> (f64, f64) {
    let count = (data.n() * data.p() * data.q()) as f64;
    let rss = residual_sum_of_squares(theta, state, data);
    (priors.phi_shape + 0.5 * count, priors.phi_rate + 0.5 * rss)
}

/// Draws `(β_ET, Ω_ZT)`: each coordinate of `vec(T)` is a unit-variance
/// regression on `(E, Z)` with independent `N(0, 1/reg_prec)` priors.
pub fn update_mediator_regression<R: Rng + ?Sized>(
    theta: &ModelParams,
    state: &LatentState,
    data: &MatrixDataset,
    reg_prec: f64,
    rng: &mut R,
) -> Result<(Vector, Mat)> {
    let n = data.n();
    let k = data.k();
    let d = theta.p0() * theta.q0();
    let mut design = Mat::zeros(n, 1 + k);
    for i in 0..n {
        design[(i, 0)] = data.e()[i];
        for c in 0..k {
            design[(i, 1 + c)] = data.z()[(i, c)];
        }
    }
    let prec = design.tr_mul(&design) + Mat::identity(1 + k, 1 + k) * reg_prec;
    let chol = Cholesky::new(prec)
        .ok_or_else(|| Error::Numerical("mediator regression precision is singular".into()))?;
    let l = chol.l();

    let mut beta_et = Vector::zeros(d);
    let mut omega = Mat::zeros(d, k);
    for j in 0..d {
        let target = Vector::from_iterator(n, state.t.iter().map(|t| t.as_slice()[j]));
        let mean = chol.solve(&design.tr_mul(&target));
        let z = Vector::from_fn(1 + k, |_, _| rng.sample(StandardNormal));
        let noise = l
            .tr_solve_lower_triangular(&z)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        let coef = mean + noise;
        beta_et[j] = coef[0];
        for c in 0..k {
            omega[(j, c)] = coef[1 + c];
        }
    }
    Ok((beta_et, omega))
}

/// Outcome-model design row `(1, E_i, vec(T_i), Z_i)`.
pub fn outcome_design(data: &MatrixDataset, t: &[Mat]) -> Mat {
    let n = data.n();
    let k = data.k();
    let d = t.first().map_or(0, |t| t.len());
    let mut design = Mat::zeros(n, 2 + d + k);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        design[(i, 1)] = data.e()[i];
        for (j, v) in t[i].as_slice().iter().enumerate() {
            design[(i, 2 + j)] = *v;
        }
        for c in 0..k {
            design[(i, 2 + d + c)] = data.z()[(i, c)];
        }
    }
    design
}

/// Draws `(α_Y, β_EY, β_TY, β_ZY)` jointly: the auxiliaries regressed on
/// `(1, E, vec(T), Z)` with unit noise and prior precision `reg_prec`.
pub fn update_outcome_regression<R: Rng + ?Sized>(
    theta: &ModelParams,
    state: &LatentState,
    data: &MatrixDataset,
    reg_prec: f64,
    rng: &mut R,
) -> Result<(f64, f64, Vector, Vector)> {
    let d = theta.p0() * theta.q0();
    let k = data.k();
    let design = outcome_design(data, &state.t);
    let dim = design.ncols();
    let prec = design.tr_mul(&design) + Mat::identity(dim, dim) * reg_prec;
    let ystar = Vector::from_column_slice(&state.ystar);
    let coef = draw_gaussian_precision(&prec, &design.tr_mul(&ystar), rng)?;
    let beta_ty = coef.rows(2, d).into_owned();
    let beta_zy = coef.rows(2 + d, k).into_owned();
    Ok((coef[0], coef[1], beta_ty, beta_zy))
}

/// Varimax-rotates `A` and `B` and carries the rotations `P`, `Q` through
/// `β_ET`, `β_TY`, `Ω_ZT` and the features, leaving the likelihood unchanged.
/// Returns the rotated parameters, the rotated state, and `(P, Q)`.
pub fn varimax_rotate_and_propagate(
    theta: &ModelParams,
    state: &LatentState,
) -> Result<(ModelParams, LatentState, Mat, Mat)> {
    let opts = VarimaxOptions::default();
    let p_rot = varimax(&theta.a, opts)?.rotation;
    let q_rot = varimax(&theta.b, opts)?.rotation;
    Ok((theta.rotate(&p_rot, &q_rot), state.rotate(&p_rot, &q_rot), p_rot, q_rot))
}

/// Starting point: algorithmic MPCA loadings and projected features, zero
/// coefficients, and the precision implied by the MPCA residual.
fn initial_state(data: &MatrixDataset, p0: usize, q0: usize) -> Result<(ModelParams, LatentState)> {
    let fit = fit_mpca(data, p0, q0, MpcaOptions::default())?;
    let mut theta = ModelParams::zeros(data.p(), data.q(), p0, q0, data.k());
    theta.a = fit.a.into_mat();
    theta.b = fit.b.into_mat();
    theta.mu = fit.mu;
    let state = LatentState {
        t: fit.t,
        ystar: vec![0.0; data.n()],
    };
    let rss = residual_sum_of_squares(&theta, &state, data);
    let count = (data.n() * data.p() * data.q()) as f64;
    theta.phi = (count / rss.max(1e-12 * count)).clamp(1e-6, 1e8);
    Ok((theta, state))
}

struct Accumulator {
    count: f64,
    params: ModelParams,
    features: Vec<Mat>,
    signal: Vec<Mat>,
}

impl Accumulator {
    fn new(theta: &ModelParams, n: usize) -> Self {
        let (p, q, p0, q0, k) = (theta.p(), theta.q(), theta.p0(), theta.q0(), theta.k());
        let mut zero = ModelParams::zeros(p, q, p0, q0, k);
        zero.a = Mat::zeros(p, p0);
        zero.b = Mat::zeros(q, q0);
        zero.phi = 0.0;
        Accumulator {
            count: 0.0,
            params: zero,
            features: vec![Mat::zeros(p0, q0); n],
            signal: vec![Mat::zeros(p, q); n],
        }
    }

    fn add(&mut self, theta: &ModelParams, state: &LatentState) {
        self.count += 1.0;
        let s = &mut self.params;
        s.a += &theta.a;
        s.b += &theta.b;
        s.mu += &theta.mu;
        s.beta_et += &theta.beta_et;
        s.omega_zt += &theta.omega_zt;
        s.alpha_y += theta.alpha_y;
        s.beta_ey += theta.beta_ey;
        s.beta_ty += &theta.beta_ty;
        s.beta_zy += &theta.beta_zy;
        s.phi += theta.phi;
        let bt = theta.b.transpose();
        for ((f, sig), t) in self.features.iter_mut().zip(&mut self.signal).zip(&state.t) {
            *f += t;
            *sig += &theta.a * t * &bt;
        }
    }

    fn finish(self) -> Result<(ModelParams, Vec<Mat>, Vec<Mat>)> {
        let c = self.count;
        let s = self.params;
        let mean = ModelParams {
            a: polar_retraction(&(s.a / c))?.into_mat(),
            b: polar_retraction(&(s.b / c))?.into_mat(),
            mu: s.mu / c,
            beta_et: s.beta_et / c,
            omega_zt: s.omega_zt / c,
            alpha_y: s.alpha_y / c,
            beta_ey: s.beta_ey / c,
            beta_ty: s.beta_ty / c,
            beta_zy: s.beta_zy / c,
            phi: s.phi / c,
        };
        let features = self.features.into_iter().map(|f| f / c).collect();
        let signal = self.signal.into_iter().map(|f| f / c).collect();
        Ok((mean, features, signal))
    }
}

fn state_is_finite(theta: &ModelParams, state: &LatentState) -> bool {
    theta.validate().is_ok()
        && state.ystar.iter().all(|v| v.is_finite())
        && state.t.iter().all(|t| t.iter().all(|v| v.is_finite()))
}

/// One full Gibbs sweep, in the documented order.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    theta: &mut ModelParams,
    state: &mut LatentState,
    data: &MatrixDataset,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<()> {
    let priors = &config.priors;
    state.ystar = update_probit_auxiliary(theta, state, data, rng);
    state.t = update_latent_t(theta, state, data, rng)?;
    theta.a = update_loading_columns(Frame::A, theta, state, data, rng)?;
    theta.b = update_loading_columns(Frame::B, theta, state, data, rng)?;
    if let MuMode::Sampled { precision } = priors.mu_mode {
        theta.mu = update_mu(theta, state, data, precision, rng);
        let (mu, t) = shift_mean_and_features(theta, state, data, precision, rng)?;
        theta.mu = mu;
        state.t = t;
    }
    theta.phi = update_phi(theta, state, data, priors, rng)?;
    let (beta_et, omega) = update_mediator_regression(theta, state, data, priors.reg_prec, rng)?;
    theta.beta_et = beta_et;
    theta.omega_zt = omega;
    let (alpha, bey, bty, bzy) = update_outcome_regression(theta, state, data, priors.reg_prec, rng)?;
    theta.alpha_y = alpha;
    theta.beta_ey = bey;
    theta.beta_ty = bty;
    theta.beta_zy = bzy;
    if config.varimax_enabled {
        let (t2, s2, _, _) = varimax_rotate_and_propagate(theta, state)?;
        *theta = t2;
        *state = s2;
    }
    Ok(())
}

/// Runs one chain and returns its retained draws. Deterministic given
/// `config.seed`.
pub fn run_chain(
    data: &MatrixDataset,
    p0: usize,
    q0: usize,
    config: &SamplerConfig,
) -> Result<PosteriorDraws> {
    let dims = data.dims(p0, q0);
    dims.validate_for_sampler()?;
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);

    let (mut theta, mut state) = initial_state(data, p0, q0)?;
    let r = config.retained();
    let mut coefficients = Vec::with_capacity(r);
    let mut mediation = Vec::with_capacity(r);
    let mut deviances = Vec::with_capacity(r);
    let mut params = config.retain_params.then(|| Vec::with_capacity(r));
    let mut acc = Accumulator::new(&theta, data.n());
    let mut max_frame_error = 0.0_f64;

    for iteration in 1..=config.iterations {
        gibbs_sweep(&mut theta, &mut state, data, config, &mut rng).map_err(|e| match e {
            Error::Numerical(message) => Error::NonFinite { iteration, message },
            other => other,
        })?;
        if !state_is_finite(&theta, &state) {
            return Err(Error::NonFinite {
                iteration,
                message: "non-finite parameter or latent state".into(),
            });
        }
        if !config.keeps(iteration) {
            continue;
        }
        max_frame_error = max_frame_error
            .max(orthonormality_error(&theta.a))
            .max(orthonormality_error(&theta.b));
        mediation.push(mediation_quantities(&theta.a, &theta.b, &theta.beta_et, &theta.beta_ty));
        deviances.push(-2.0 * complete_loglik(&theta, &state, data)?);
        coefficients.push(CoefficientDraw::from_params(&theta));
        if let Some(ps) = params.as_mut() {
            ps.push(theta.clone());
        }
        acc.add(&theta, &state);
    }

    let (mean_params, mean_features, mean_signal) = acc.finish()?;
    Ok(PosteriorDraws {
        dims,
        iterations: config.iterations,
        burn_in: config.burn_in,
        thin: config.thin,
        coefficients,
        mediation,
        deviances,
        params,
        mean_params,
        mean_features,
        mean_signal,
        max_frame_error,
    })
}
