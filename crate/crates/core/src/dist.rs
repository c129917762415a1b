//! Scalar and spherical samplers plus normal-CDF helpers.

use rand::Rng;
use rand_distr::{Beta, Distribution, Exp1, StandardNormal};
use statrs::function::erf::erfc;

use crate::linalg::Vector;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// `ln Φ(x)`, accurate far into the lower tail.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        norm_cdf(x).ln()
    } else {
        // asymptotic expansion of the Mills ratio
        let x2 = x * x;
        -0.5 * x2 - LN_SQRT_2PI - (-x).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// Inverse Mills ratio `φ(x) / Φ(x)`.
pub fn inv_mills(x: f64) -> f64 {
    if x > -30.0 {
        norm_pdf(x) / norm_cdf(x)
    } else {
        let x2 = x * x;
        -x / (1.0 - 1.0 / x2 + 3.0 / (x2 * x2))
    }
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

fn std_truncated_below<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a <= 0.0 {
        // acceptance probability at least 1/2
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z >= a {
                return z;
            }
        }
    }
    // Robert (1995) translated-exponential proposal
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = rng.sample(Exp1);
        let z = a + e / alpha;
        let log_rho = -0.5 * (z - alpha) * (z - alpha);
        let u: f64 = rng.random();
        if u.ln() <= log_rho {
            return z;
        }
    }
}

/// Draws `x ~ N(mean, 1)` conditioned on `x >= lower`.
pub fn normal_truncated_below<R: Rng + ?Sized>(mean: f64, lower: f64, rng: &mut R) -> f64 {
    mean + std_truncated_below(lower - mean, rng)
}

/// Draws `x ~ N(mean, 1)` conditioned on `x < upper`.
pub fn normal_truncated_above<R: Rng + ?Sized>(mean: f64, upper: f64, rng: &mut R) -> f64 {
    let x = mean - std_truncated_below(mean - upper, rng);
    // the boundary itself has probability zero; keep the strict inequality
    if x >= upper {
        upper - f64::EPSILON * upper.abs().max(1.0)
    } else {
        x
    }
}

/// Draws the cosine `w = μᵀx` of a von Mises–Fisher variate on the unit
/// sphere in `R^dim` with concentration `kappa` (Wood, 1994). With
/// `kappa = 0` this is the cosine of a uniform point.
pub fn vmf_cosine<R: Rng + ?Sized>(kappa: f64, dim: usize, rng: &mut R) -> f64 {
    assert!(dim >= 2, "von Mises-Fisher sampling needs dim >= 2");
    let m = (dim - 1) as f64;
    // b = (-2κ + sqrt(4κ² + m²)) / m, written without cancellation
    let b = m / (2.0 * kappa + (4.0 * kappa * kappa + m * m).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + m * (1.0 - x0 * x0).ln();
    let beta = Beta::new(0.5 * m, 0.5 * m).expect("valid beta parameters");
    loop {
        let z: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = rng.random();
        if kappa * w + m * (1.0 - x0 * w).ln() - c >= u.ln() {
            return w.clamp(-1.0, 1.0);
        }
    }
}

/// Draws from the von Mises–Fisher distribution with density proportional
/// to `exp(kappa * muᵀx)` on the unit sphere in `R^dim`, `mu` a unit vector.
pub fn sample_vmf<R: Rng + ?Sized>(mu: &Vector, kappa: f64, rng: &mut R) -> Vector {
    let d = mu.len();
    let w = vmf_cosine(kappa, d, rng);
    // uniform direction orthogonal to mu
    let v = loop {
        let g = Vector::from_fn(d, |_, _| rng.sample(StandardNormal));
        let g = &g - mu * mu.dot(&g);
        let norm = g.norm();
        if norm > 1e-12 {
            break g / norm;
        }
    };
    mu * w + v * (1.0 - w * w).max(0.0).sqrt()
}
