//! The joint model: matrix factor submodel, latent mediator regression and
//! probit outcome, plus the synthetic data-generating mechanism.
//!
//! For subject `i`
//!
//! ```text
//! X_i       = μ + A T_i Bᵀ + ε_X,          vec(ε_X) ~ N(0, φ⁻¹ I_pq)
//! vec(T_i)  = β_ET E_i + Ω_ZT Z_i + ε_T,   vec(ε_T) ~ N(0, I_p0q0)
//! P(Y_i=1)  = Φ(α_Y + β_EY E_i + β_TYᵀ vec(T_i) + β_ZYᵀ Z_i)
//! ```

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dist::log_norm_cdf;
use crate::error::{Error, Result};
use crate::linalg::{
    kron, sample_uniform_stiefel, standard_normal_matrix, unvec, vec, Dims, Mat, MatrixDataset,
    Vector,
};
use crate::rotation::{varimax, VarimaxOptions};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// All parameters of the joint model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Row loadings, `p x p0`.
    pub a: Mat,
    /// Column loadings, `q x q0`.
    pub b: Mat,
    /// Mean matrix, `p x q`.
    pub mu: Mat,
    /// Treatment effect on the latent features, length `p0 q0`.
    pub beta_et: Vector,
    /// Covariate effects on the latent features, `p0 q0 x K`.
    pub omega_zt: Mat,
    pub alpha_y: f64,
    pub beta_ey: f64,
    /// Latent feature effects on the outcome, length `p0 q0`.
    pub beta_ty: Vector,
    /// Covariate effects on the outcome, length `K`.
    pub beta_zy: Vector,
    /// Precision of the matrix noise.
    pub phi: f64,
}

impl ModelParams {
    /// All-zero coefficients, identity-like loadings, unit precision.
    pub fn zeros(p: usize, q: usize, p0: usize, q0: usize, k: usize) -> Self {
        ModelParams {
            a: Mat::identity(p, p0),
            b: Mat::identity(q, q0),
            mu: Mat::zeros(p, q),
            beta_et: Vector::zeros(p0 * q0),
            omega_zt: Mat::zeros(p0 * q0, k),
            alpha_y: 0.0,
            beta_ey: 0.0,
            beta_ty: Vector::zeros(p0 * q0),
            beta_zy: Vector::zeros(k),
            phi: 1.0,
        }
    }

    pub fn p(&self) -> usize {
        self.a.nrows()
    }
    pub fn q(&self) -> usize {
        self.b.nrows()
    }
    pub fn p0(&self) -> usize {
        self.a.ncols()
    }
    pub fn q0(&self) -> usize {
        self.b.ncols()
    }
    pub fn k(&self) -> usize {
        self.beta_zy.len()
    }

    pub fn dims(&self, n: usize) -> Dims {
        Dims {
            p: self.p(),
            q: self.q(),
            p0: self.p0(),
            q0: self.q0(),
            k: self.k(),
            n,
        }
    }

    /// Full loading matrix `W = B ⊗ A`.
    pub fn loading_matrix(&self) -> Mat {
        kron(&self.b, &self.a)
    }

    /// Checks shapes, finiteness and `φ > 0`.
    pub fn validate(&self) -> Result<()> {
        let (p, q, p0, q0, k) = (self.p(), self.q(), self.p0(), self.q0(), self.k());
        let d = p0 * q0;
        let shapes_ok = self.mu.shape() == (p, q)
            && self.beta_et.len() == d
            && self.beta_ty.len() == d
            && self.omega_zt.shape() == (d, k);
        if !shapes_ok {
            return Err(Error::Dimension(format!(
                "inconsistent parameter shapes for (p, q, p0, q0, K) = ({p}, {q}, {p0}, {q0}, {k})"
            )));
        }
        let finite = self
            .a
            .iter()
            .chain(self.b.iter())
            .chain(self.mu.iter())
            .chain(self.beta_et.iter())
            .chain(self.omega_zt.iter())
            .chain(self.beta_ty.iter())
            .chain(self.beta_zy.iter())
            .chain([self.alpha_y, self.beta_ey, self.phi].iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numerical("non-finite model parameter".into()));
        }
        if self.phi <= 0.0 {
            return Err(Error::Numerical(format!("precision must be positive, got {}", self.phi)));
        }
        Ok(())
    }

    pub fn check_data(&self, data: &MatrixDataset) -> Result<()> {
        if data.p() != self.p() || data.q() != self.q() || data.k() != self.k() {
            return Err(Error::Dimension(format!(
                "data is {}x{} with {} covariates, parameters expect {}x{} with {}",
                data.p(),
                data.q(),
                data.k(),
                self.p(),
                self.q(),
                self.k()
            )));
        }
        Ok(())
    }

    /// Probit linear predictor for one subject.
    pub fn linear_predictor(&self, e: f64, t: &Mat, z: &Vector) -> f64 {
        self.alpha_y
            + self.beta_ey * e
            + self.beta_ty.as_slice().iter().zip(t.as_slice()).map(|(b, t)| b * t).sum::<f64>()
            + self.beta_zy.dot(z)
    }

    /// Mean of `vec(T_i)` under the mediator model.
    pub fn mediator_mean(&self, e: f64, z: &Vector) -> Vector {
        &self.beta_et * e + &self.omega_zt * z
    }

    /// Applies the orthogonal change of latent basis `A → AP`, `B → BQ`, with
    /// every coefficient attached to `vec(T)` transformed by `(Q ⊗ P)ᵀ`.
    /// The likelihood is unchanged.
    pub fn rotate(&self, p_rot: &Mat, q_rot: &Mat) -> ModelParams {
        let (p0, q0) = (self.p0(), self.q0());
        let rot_vec = |v: &[f64]| -> Vector {
            let m = unvec(v, p0, q0).expect("shape checked");
            vec(&(p_rot.tr_mul(&m) * q_rot))
        };
        let mut omega = Mat::zeros(self.omega_zt.nrows(), self.omega_zt.ncols());
        for j in 0..omega.ncols() {
            let col: Vec<f64> = self.omega_zt.column(j).iter().copied().collect();
            omega.set_column(j, &rot_vec(&col));
        }
        ModelParams {
            a: &self.a * p_rot,
            b: &self.b * q_rot,
            mu: self.mu.clone(),
            beta_et: rot_vec(self.beta_et.as_slice()),
            omega_zt: omega,
            alpha_y: self.alpha_y,
            beta_ey: self.beta_ey,
            beta_ty: rot_vec(self.beta_ty.as_slice()),
            beta_zy: self.beta_zy.clone(),
            phi: self.phi,
        }
    }
}

/// Latent features and probit auxiliaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    /// Per-subject `p0 x q0` latent features.
    pub t: Vec<Mat>,
    /// Per-subject probit auxiliary, non-negative exactly when `Y_i = 1`.
    pub ystar: Vec<f64>,
}

impl LatentState {
    pub fn zeros(n: usize, p0: usize, q0: usize) -> Self {
        LatentState {
            t: vec![Mat::zeros(p0, q0); n],
            ystar: vec![0.0; n],
        }
    }

    /// `T_i → Pᵀ T_i Q`, i.e. `vec(T_i) → (Q ⊗ P)ᵀ vec(T_i)`.
    pub fn rotate(&self, p_rot: &Mat, q_rot: &Mat) -> LatentState {
        LatentState {
            t: self.t.iter().map(|t| p_rot.tr_mul(t) * q_rot).collect(),
            ystar: self.ystar.clone(),
        }
    }
}

/// How the mean matrix `μ` is handled by the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum MuMode {
    /// Fixed at the element-wise sample mean of the data.
    SampleMean,
    /// Sampled under the prior `vec(μ) ~ N(0, precision⁻¹ I)`.
    Sampled { precision: f64 },
}

/// Prior hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Priors {
    /// Gamma shape for the precision `φ`.
    pub phi_shape: f64,
    /// Gamma rate for the precision `φ`.
    pub phi_rate: f64,
    /// Prior precision of every regression coefficient.
    pub reg_prec: f64,
    pub mu_mode: MuMode,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            phi_shape: 0.1,
            phi_rate: 0.1,
            reg_prec: 1.0,
            mu_mode: MuMode::Sampled { precision: 0.01 },
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        let mu_ok = match self.mu_mode {
            MuMode::SampleMean => true,
            MuMode::Sampled { precision } => precision > 0.0,
        };
        if !(self.phi_shape > 0.0 && self.phi_rate > 0.0 && self.reg_prec > 0.0 && mu_ok) {
            return Err(Error::Config("prior hyperparameters must be positive".into()));
        }
        Ok(())
    }
}

fn check_state(theta: &ModelParams, state: &LatentState, data: &MatrixDataset) -> Result<()> {
    theta.validate()?;
    theta.check_data(data)?;
    if state.t.len() != data.n() || state.ystar.len() != data.n() {
        return Err(Error::Dimension("latent state length differs from subject count".into()));
    }
    if state.t.iter().any(|t| t.shape() != (theta.p0(), theta.q0())) {
        return Err(Error::Dimension("latent feature matrix has wrong shape".into()));
    }
    if state.t.iter().flat_map(|t| t.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite latent feature".into()));
    }
    Ok(())
}

/// Log-density of the matrix and mediator submodels for one subject.
fn gaussian_terms(theta: &ModelParams, x: &Mat, t: &Mat, e: f64, z: &Vector) -> f64 {
    let pq = (theta.p() * theta.q()) as f64;
    let d = (theta.p0() * theta.q0()) as f64;
    let resid = x - &theta.mu - &theta.a * t * theta.b.transpose();
    let lx = 0.5 * pq * (theta.phi.ln() - LN_2PI) - 0.5 * theta.phi * resid.norm_squared();
    let mean = theta.mediator_mean(e, z);
    let lt = -0.5 * d * LN_2PI
        - 0.5
            * t.as_slice()
                .iter()
                .zip(mean.iter())
                .map(|(t, m)| (t - m) * (t - m))
                .sum::<f64>();
    lx + lt
}

/// Complete-data log-likelihood `log p(X, T, Y | E, Z, Θ)` with the probit
/// auxiliaries integrated out.
pub fn complete_loglik(
    theta: &ModelParams,
    state: &LatentState,
    data: &MatrixDataset,
) -> Result<f64> {
    check_state(theta, state, data)?;
    let mut total = 0.0;
    for i in 0..data.n() {
        let z = data.z_row(i);
        let t = &state.t[i];
        let eta = theta.linear_predictor(data.e()[i], t, &z);
        let ly = if data.y()[i] { log_norm_cdf(eta) } else { log_norm_cdf(-eta) };
        total += gaussian_terms(theta, &data.x()[i], t, data.e()[i], &z) + ly;
    }
    if !total.is_finite() {
        return Err(Error::Numerical("complete log-likelihood is not finite".into()));
    }
    Ok(total)
}

/// Log-density of the augmented model `p(X, T, Y*, Y | E, Z, Θ)`, where
/// `Y* ~ N(η, 1)` and `Y = 1[Y* >= 0]`. Returns `-∞` when an auxiliary
/// disagrees in sign with its outcome.
pub fn augmented_loglik(
    theta: &ModelParams,
    state: &LatentState,
    data: &MatrixDataset,
) -> Result<f64> {
    check_state(theta, state, data)?;
    let mut total = 0.0;
    for i in 0..data.n() {
        let z = data.z_row(i);
        let t = &state.t[i];
        let ys = state.ystar[i];
        if (ys >= 0.0) != data.y()[i] {
            return Ok(f64::NEG_INFINITY);
        }
        let eta = theta.linear_predictor(data.e()[i], t, &z);
        total += gaussian_terms(theta, &data.x()[i], t, data.e()[i], &z)
            - 0.5 * LN_2PI
            - 0.5 * (ys - eta) * (ys - eta);
    }
    Ok(total)
}

/// Simulates `n` subjects from the joint model. Treatments are
/// Bernoulli(0.5); covariates, if any, are standard normal.
pub fn simulate_dataset<R: Rng + ?Sized>(
    theta: &ModelParams,
    n: usize,
    rng: &mut R,
) -> Result<(MatrixDataset, LatentState)> {
    theta.validate()?;
    if n == 0 {
        return Err(Error::Data("cannot simulate an empty dataset".into()));
    }
    let (p, q, p0, q0, k) = (theta.p(), theta.q(), theta.p0(), theta.q0(), theta.k());
    let coin = Bernoulli::new(0.5).expect("valid probability");
    let noise_sd = theta.phi.sqrt().recip();
    let bt = theta.b.transpose();

    let mut xs = Vec::with_capacity(n);
    let mut es = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut z = Mat::zeros(n, k);
    let mut state = LatentState::zeros(n, p0, q0);

    for i in 0..n {
        let e = if coin.sample(rng) { 1.0 } else { 0.0 };
        for c in 0..k {
            z[(i, c)] = rng.sample(StandardNormal);
        }
        let zi = z.row(i).transpose();
        let mean_t = theta.mediator_mean(e, &zi);
        let t = Mat::from_fn(p0, q0, |r, c| mean_t[c * p0 + r] + rng.sample::<f64, _>(StandardNormal));
        let mut x = &theta.mu + &theta.a * &t * &bt;
        for v in x.as_mut_slice() {
            *v += noise_sd * rng.sample::<f64, _>(StandardNormal);
        }
        let eta = theta.linear_predictor(e, &t, &zi);
        let ystar = eta + rng.sample::<f64, _>(StandardNormal);
        xs.push(x);
        es.push(e);
        ys.push(ystar >= 0.0);
        state.t[i] = t;
        state.ystar[i] = ystar;
    }
    debug_assert_eq!(xs[0].shape(), (p, q));
    Ok((MatrixDataset::new(xs, es, z, ys)?, state))
}

const SPARSE_RETRIES: usize = 100;

/// Sparse, nearly orthonormal loadings: a uniform Stiefel draw, Varimax
/// rotated, with entries of magnitude at most `threshold` set to zero and
/// every column rescaled to unit norm. Columns may be slightly correlated
/// after thresholding.
pub fn generate_sparse_loadings<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    threshold: f64,
    rng: &mut R,
) -> Result<Mat> {
    if !(threshold >= 0.0) {
        return Err(Error::Config(format!("threshold must be non-negative, got {threshold}")));
    }
    for _ in 0..SPARSE_RETRIES {
        let frame = sample_uniform_stiefel(rows, cols, rng)?;
        let mut m = varimax(frame.as_mat(), VarimaxOptions::default())?.rotated;
        if threshold > 0.0 {
            m.apply(|v| {
                if v.abs() <= threshold {
                    *v = 0.0
                }
            });
        }
        let norms: Vec<f64> = m.column_iter().map(|c| c.norm()).collect();
        if norms.iter().any(|&nrm| nrm == 0.0) {
            continue;
        }
        for (j, nrm) in norms.into_iter().enumerate() {
            m.column_mut(j).unscale_mut(nrm);
        }
        return Ok(m);
    }
    Err(Error::Numerical(format!(
        "every one of {SPARSE_RETRIES} draws had a column removed by thresholding at {threshold}"
    )))
}

/// The two synthetic designs: `(p, q) = (10, 10)` and `(10, 50)`, both with
/// `(p0, q0) = (2, 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Low,
    High,
}

impl Scenario {
    pub fn shape(self) -> (usize, usize, usize, usize) {
        match self {
            Scenario::Low => (10, 10, 2, 2),
            Scenario::High => (10, 50, 2, 2),
        }
    }

    /// Thresholds used for posterior-probability maps.
    pub fn kappa_grid(self) -> Vec<f64> {
        match self {
            Scenario::Low => vec![0.05, 0.1, 0.15],
            Scenario::High => vec![0.03, 0.06, 0.09],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Low => "low",
            Scenario::High => "high",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Scenario::Low),
            "high" => Ok(Scenario::High),
            other => Err(Error::Config(format!("unknown scenario '{other}' (expected low or high)"))),
        }
    }
}

/// Loading sparsity threshold used to build the synthetic truth.
pub const TRUTH_LOADING_THRESHOLD: f64 = 0.3;

/// Ground-truth parameters of the synthetic study. Loadings are freshly
/// generated from `rng`; everything else is fixed.
pub fn paper_truth_params<R: Rng + ?Sized>(scenario: Scenario, rng: &mut R) -> Result<ModelParams> {
    let (p, q, p0, q0) = scenario.shape();
    let a = generate_sparse_loadings(p, p0, TRUTH_LOADING_THRESHOLD, rng)?;
    let b = generate_sparse_loadings(q, q0, TRUTH_LOADING_THRESHOLD, rng)?;
    Ok(ModelParams {
        a,
        b,
        mu: Mat::zeros(p, q),
        beta_et: Vector::from_vec(vec![0.5, 0.5, 0.0, 0.0]),
        omega_zt: Mat::zeros(p0 * q0, 0),
        alpha_y: 0.0,
        beta_ey: 0.3,
        beta_ty: Vector::from_vec(vec![0.7, 0.0, 0.7, 0.0]),
        beta_zy: Vector::zeros(0),
        phi: 25.0,
    })
}

/// A random, valid parameter set with orthonormal loadings, used by tests
/// and benchmarks.
pub fn random_params<R: Rng + ?Sized>(
    p: usize,
    q: usize,
    p0: usize,
    q0: usize,
    k: usize,
    rng: &mut R,
) -> ModelParams {
    let d = p0 * q0;
    ModelParams {
        a: sample_uniform_stiefel(p, p0, rng).unwrap().into_mat(),
        b: sample_uniform_stiefel(q, q0, rng).unwrap().into_mat(),
        mu: standard_normal_matrix(p, q, rng) * 0.3,
        beta_et: Vector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal))),
        omega_zt: standard_normal_matrix(d, k, rng),
        alpha_y: rng.sample(StandardNormal),
        beta_ey: rng.sample(StandardNormal),
        beta_ty: Vector::from_iterator(d, (0..d).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))),
        beta_zy: Vector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal))),
        phi: 4.0,
    }
}
