//! Two-step baseline: algorithmic MPCA feature extraction, then separate
//! least-squares mediator regressions and a maximum-likelihood probit
//! outcome fit.

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::dist::{inv_mills, log_norm_cdf};
use crate::error::{Error, Result};
use crate::gibbs::outcome_design;
use crate::linalg::{
    sample_uniform_stiefel, top_eigenvectors, Mat, MatrixDataset, StiefelFrame, Vector,
    MANIFOLD_TOL,
};
use crate::mediation::mediation_quantities;
use crate::rotation::{varimax, VarimaxOptions};
use crate::seed::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcaOptions {
    pub max_iters: usize,
    /// Stop when the captured variance changes by less than
    /// `tol * total variance`.
    pub tol: f64,
    /// Additional random starting points besides the scatter-based one.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for MpcaOptions {
    fn default() -> Self {
        MpcaOptions {
            max_iters: 200,
            tol: 1e-12,
            restarts: 3,
            seed: 0x6d70_6361,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcaFit {
    pub a: StiefelFrame,
    pub b: StiefelFrame,
    /// Element-wise sample mean.
    pub mu: Mat,
    /// Projected features `Aᵀ (X_i − μ) B`.
    pub t: Vec<Mat>,
    /// Captured over total variance; 1 when the data have no variance.
    pub explained_variance: f64,
    pub total_variance: f64,
    pub captured_variance: f64,
    /// Captured variance after each half-sweep of the winning start.
    pub history: Vec<f64>,
    pub converged: bool,
}

impl MpcaFit {
    /// `Σ_i ‖X_i − μ − A T_i Bᵀ‖²`.
    pub fn reconstruction_error(&self, data: &MatrixDataset) -> f64 {
        let (a, b) = (self.a.as_mat(), self.b.as_mat());
        data.x()
            .iter()
            .zip(&self.t)
            .map(|(x, t)| (x - &self.mu - a * t * b.transpose()).norm_squared())
            .sum()
    }
}

fn captured(centered: &[Mat], a: &Mat, b: &Mat) -> f64 {
    centered.iter().map(|r| (a.tr_mul(r) * b).norm_squared()).sum()
}

fn row_scatter(centered: &[Mat], b: &Mat) -> Mat {
    let p = centered[0].nrows();
    centered.iter().fold(Mat::zeros(p, p), |acc, r| {
        let rb = r * b;
        acc + &rb * rb.transpose()
    })
}

fn col_scatter(centered: &[Mat], a: &Mat) -> Mat {
    let q = centered[0].ncols();
    centered.iter().fold(Mat::zeros(q, q), |acc, r| {
        let ra = r.tr_mul(a);
        acc + &ra * ra.transpose()
    })
}

struct Ascent {
    a: Mat,
    b: Mat,
    captured: f64,
    history: Vec<f64>,
    converged: bool,
}

fn alternate(centered: &[Mat], mut b: Mat, p0: usize, q0: usize, total: f64, opts: &MpcaOptions) -> Result<Ascent> {
    let mut history = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut a = Mat::zeros(centered[0].nrows(), p0);
    let mut converged = false;
    for _ in 0..opts.max_iters {
        a = top_eigenvectors(&row_scatter(centered, &b), p0)?.0;
        history.push(captured(centered, &a, &b));
        b = top_eigenvectors(&col_scatter(centered, &a), q0)?.0;
        let cur = captured(centered, &a, &b);
        history.push(cur);
        if (cur - prev).abs() <= opts.tol * total.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        prev = cur;
    }
    let captured = *history.last().unwrap_or(&0.0);
    Ok(Ascent { a, b, captured, history, converged })
}

/// Alternating-eigenvector MPCA. The first start takes `B` from the leading
/// eigenvectors of the column scatter; `opts.restarts` further starts use
/// seeded random frames. The start capturing the most variance wins.
pub fn fit_mpca(data: &MatrixDataset, p0: usize, q0: usize, opts: MpcaOptions) -> Result<MpcaFit> {
    let (p, q) = (data.p(), data.q());
    if p0 == 0 || q0 == 0 || p0 > p || q0 > q {
        return Err(Error::Dimension(format!(
            "MPCA needs 1 <= p0 <= {p} and 1 <= q0 <= {q}, got ({p0}, {q0})"
        )));
    }
    if opts.max_iters == 0 {
        return Err(Error::Config("MPCA needs at least one iteration".into()));
    }
    let mu = data.mean_matrix();
    let centered: Vec<Mat> = data.x().iter().map(|x| x - &mu).collect();
    let total: f64 = centered.iter().map(|r| r.norm_squared()).sum();

    let full = centered.iter().fold(Mat::zeros(q, q), |acc, r| acc + r.tr_mul(r));
    let b_init = top_eigenvectors(&full, q0)?.0;
    let mut best = alternate(&centered, b_init, p0, q0, total, &opts)?;
    let mut rng = substream(opts.seed, "mpca-restart", 0);
    for _ in 0..opts.restarts {
        let b0 = sample_uniform_stiefel(q, q0, &mut rng)?.into_mat();
        let cand = alternate(&centered, b0, p0, q0, total, &opts)?;
        if cand.captured > best.captured * (1.0 + 1e-12) {
            best = cand;
        }
    }

    let t = centered.iter().map(|r| best.a.tr_mul(r) * &best.b).collect();
    let explained_variance = if total > 0.0 { (best.captured / total).clamp(0.0, 1.0) } else { 1.0 };
    Ok(MpcaFit {
        a: StiefelFrame::new(best.a, MANIFOLD_TOL)?,
        b: StiefelFrame::new(best.b, MANIFOLD_TOL)?,
        mu,
        t,
        explained_variance,
        total_variance: total,
        captured_variance: best.captured,
        history: best.history,
        converged: best.converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbitFit {
    pub coef: Vector,
    /// Inverse observed information at the optimum.
    pub cov: Mat,
    pub loglik: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    /// The information matrix was singular and a ridge was added.
    pub ridge_used: bool,
}

fn probit_terms(y: &[bool], design: &Mat, beta: &Vector) -> (f64, Vector, Mat) {
    let dim = design.ncols();
    let eta = design * beta;
    let mut ll = 0.0;
    let mut grad = Vector::zeros(dim);
    let mut info = Mat::zeros(dim, dim);
    for (i, &yi) in y.iter().enumerate() {
        let s = if yi { 1.0 } else { -1.0 };
        let u = s * eta[i];
        ll += log_norm_cdf(u);
        let lam = inv_mills(u);
        let x = design.row(i).transpose();
        grad.axpy(s * lam, &x, 1.0);
        info.ger(lam * (lam + u), &x, &x, 1.0);
    }
    (ll, grad, info)
}

/// Maximum-likelihood probit regression by damped Newton steps on the
/// observed information.
pub fn probit_mle(y: &[bool], design: &Mat) -> Result<ProbitFit> {
    let (n, dim) = design.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("{} outcomes for {n} design rows", y.len())));
    }
    if design.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite probit design".into()));
    }
    let n_pos = y.iter().filter(|&&v| v).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::Separation("all outcomes are identical".into()));
    }

    let mut beta = Vector::zeros(dim);
    let (mut ll, mut grad, mut info) = probit_terms(y, design, &beta);
    let mut ridge_used = false;
    let mut iterations = 0;
    let solve = |info: &Mat, rhs: &Vector, ridge_used: &mut bool| -> Result<Vector> {
        if let Some(ch) = Cholesky::new(info.clone()) {
            return Ok(ch.solve(rhs));
        }
        *ridge_used = true;
        log::warn!("singular probit information; adding a ridge");
        let scale = info.trace().abs() / dim as f64;
        let ridged = info + Mat::identity(dim, dim) * (1e-8 * scale.max(1.0));
        Cholesky::new(ridged)
            .map(|ch| ch.solve(rhs))
            .ok_or_else(|| Error::Numerical("probit information is not positive definite".into()))
    };

    while iterations < 200 {
        if grad.norm() <= 1e-10 {
            break;
        }
        iterations += 1;
        let step = solve(&info, &grad, &mut ridge_used)?;
        let mut t = 1.0;
        loop {
            let cand = &beta + &step * t;
            let (cll, cgrad, cinfo) = probit_terms(y, design, &cand);
            if cll >= ll - 1e-12 * ll.abs() {
                beta = cand;
                ll = cll;
                grad = cgrad;
                info = cinfo;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                return Err(Error::Numerical("probit line search failed".into()));
            }
        }
        if ll > -1e-8 || beta.amax() > 1e3 {
            return Err(Error::Separation(
                "outcomes are perfectly separated by the design".into(),
            ));
        }
    }
    let gradient_norm = grad.norm();
    if gradient_norm > 1e-6 {
        return Err(Error::Numerical(format!(
            "probit fit did not converge (gradient norm {gradient_norm:.3e})"
        )));
    }
    let cov = match info.clone().try_inverse() {
        Some(c) => c,
        None => {
            ridge_used = true;
            (info + Mat::identity(dim, dim) * 1e-8)
                .try_inverse()
                .ok_or_else(|| Error::Numerical("cannot invert probit information".into()))?
        }
    };
    Ok(ProbitFit {
        coef: beta,
        cov,
        loglik: ll,
        gradient_norm,
        iterations,
        ridge_used,
    })
}

/// Point estimates of the two-step method, expressed in the Varimax basis
/// of the MPCA loadings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStepFit {
    /// MPCA fit with loadings and features rotated to the Varimax basis.
    pub mpca: MpcaFit,
    /// Intercepts of the feature regressions, length `p0 q0`.
    pub intercept_t: Vector,
    pub beta_et: Vector,
    pub omega_zt: Mat,
    pub alpha_y: f64,
    pub beta_ey: f64,
    pub beta_ty: Vector,
    pub beta_zy: Vector,
    pub outcome: ProbitFit,
}

impl TwoStepFit {
    pub fn mediation_quantities(&self) -> Vec<f64> {
        mediation_quantities(self.mpca.a.as_mat(), self.mpca.b.as_mat(), &self.beta_et, &self.beta_ty)
    }
}

/// Fits the two-step baseline: MPCA features, Varimax-rotated, then
/// least squares of each feature on `(1, E, Z)` and a probit fit of `Y` on
/// `(1, E, vec(T̂), Z)`.
pub fn two_step_fit(data: &MatrixDataset, p0: usize, q0: usize) -> Result<TwoStepFit> {
    let mut mpca = fit_mpca(data, p0, q0, MpcaOptions::default())?;
    let opts = VarimaxOptions::default();
    let pr = varimax(mpca.a.as_mat(), opts)?.rotation;
    let qr = varimax(mpca.b.as_mat(), opts)?.rotation;
    mpca.a = StiefelFrame::new(mpca.a.as_mat() * &pr, MANIFOLD_TOL)?;
    mpca.b = StiefelFrame::new(mpca.b.as_mat() * &qr, MANIFOLD_TOL)?;
    mpca.t = mpca.t.iter().map(|t| pr.tr_mul(t) * &qr).collect();

    let n = data.n();
    let k = data.k();
    let d = p0 * q0;
    let mut design = Mat::zeros(n, 2 + k);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        design[(i, 1)] = data.e()[i];
        for c in 0..k {
            design[(i, 2 + c)] = data.z()[(i, c)];
        }
    }
    let chol = Cholesky::new(design.tr_mul(&design))
        .ok_or_else(|| Error::Numerical("mediator regression design is rank deficient".into()))?;
    let mut intercept_t = Vector::zeros(d);
    let mut beta_et = Vector::zeros(d);
    let mut omega_zt = Mat::zeros(d, k);
    for j in 0..d {
        let target = Vector::from_iterator(n, mpca.t.iter().map(|t| t.as_slice()[j]));
        let coef = chol.solve(&design.tr_mul(&target));
        intercept_t[j] = coef[0];
        beta_et[j] = coef[1];
        for c in 0..k {
            omega_zt[(j, c)] = coef[2 + c];
        }
    }

    let outcome = probit_mle(data.y(), &outcome_design(data, &mpca.t))?;
    let coef = &outcome.coef;
    Ok(TwoStepFit {
        intercept_t,
        beta_et,
        omega_zt,
        alpha_y: coef[0],
        beta_ey: coef[1],
        beta_ty: coef.rows(2, d).into_owned(),
        beta_zy: coef.rows(2 + d, k).into_owned(),
        outcome,
        mpca,
    })
}
