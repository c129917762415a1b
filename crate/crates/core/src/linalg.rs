//! Matrix, vectorisation and Kronecker utilities, plus the orthonormal-frame
//! and dataset types shared by the rest of the crate.
//!
//! Vectorisation is column-major throughout: `vec(M)[k * p + j] = M[(j, k)]`.
//! Only in that convention does `vec(A T Bᵀ) = (B ⊗ A) vec(T)` hold.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default tolerance for orthonormality checks.
pub const MANIFOLD_TOL: f64 = 1e-8;

/// Problem dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Rows of each observed matrix.
    pub p: usize,
    /// Columns of each observed matrix.
    pub q: usize,
    /// Rows of the latent feature matrix.
    pub p0: usize,
    /// Columns of the latent feature matrix.
    pub q0: usize,
    /// Number of covariates.
    pub k: usize,
    /// Number of subjects.
    pub n: usize,
}

impl Dims {
    /// Latent feature count `p0 * q0`.
    pub fn latent(&self) -> usize {
        self.p0 * self.q0
    }

    /// Observed element count `p * q`.
    pub fn observed(&self) -> usize {
        self.p * self.q
    }

    /// Checks the general model constraints `1 <= p0 <= p`, `1 <= q0 <= q`.
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 || self.n == 0 {
            return Err(Error::Dimension(format!(
                "p, q and n must be positive (p={}, q={}, n={})",
                self.p, self.q, self.n
            )));
        }
        if self.p0 == 0 || self.p0 > self.p || self.q0 == 0 || self.q0 > self.q {
            return Err(Error::Dimension(format!(
                "latent dims ({}, {}) must lie in [1, p] x [1, q] for (p, q) = ({}, {})",
                self.p0, self.q0, self.p, self.q
            )));
        }
        Ok(())
    }

    /// The column-wise loading updates need both dimensions strictly reduced,
    /// otherwise each column's conditional collapses to a sign flip and the
    /// chain is reducible.
    pub fn validate_for_sampler(&self) -> Result<()> {
        self.validate()?;
        if self.p0 >= self.p || self.q0 >= self.q {
            return Err(Error::Config(format!(
                "the Gibbs sampler requires p0 < p and q0 < q, got (p0, q0) = ({}, {}) for (p, q) = ({}, {})",
                self.p0, self.q0, self.p, self.q
            )));
        }
        Ok(())
    }
}

/// Column-major vectorisation.
pub fn vec(m: &Mat) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &[f64], p: usize, q: usize) -> Result<Mat> {
    if v.len() != p * q {
        return Err(Error::Dimension(format!(
            "cannot reshape vector of length {} into {}x{}",
            v.len(),
            p,
            q
        )));
    }
    Ok(Mat::from_column_slice(p, q, v))
}

/// Kronecker product `B ⊗ A`.
///
/// Entry `(k * rows(A) + r, c * cols(A) + s)` equals `B[(k, c)] * A[(r, s)]`.
pub fn kron(b: &Mat, a: &Mat) -> Mat {
    b.kronecker(a)
}

/// Largest absolute deviation of `FᵀF` from the identity.
pub fn orthonormality_error(f: &Mat) -> f64 {
    let g = f.tr_mul(f);
    let mut worst = 0.0_f64;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// A matrix with orthonormal columns (a point on the Stiefel manifold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Mat", into = "Mat")]
pub struct StiefelFrame(Mat);

impl StiefelFrame {
    /// Wraps `m`, checking `max|MᵀM − I| <= tol`.
    pub fn new(m: Mat, tol: f64) -> Result<Self> {
        if m.ncols() > m.nrows() {
            return Err(Error::Dimension(format!(
                "a {}x{} matrix cannot have orthonormal columns",
                m.nrows(),
                m.ncols()
            )));
        }
        let err = orthonormality_error(&m);
        if !(err <= tol) {
            return Err(Error::Numerical(format!(
                "frame is not orthonormal: max|FᵀF - I| = {err:e} > {tol:e}"
            )));
        }
        Ok(StiefelFrame(m))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.0)
    }
}

impl TryFrom<Mat> for StiefelFrame {
    type Error = Error;

    fn try_from(m: Mat) -> Result<Self> {
        StiefelFrame::new(m, MANIFOLD_TOL)
    }
}

impl From<StiefelFrame> for Mat {
    fn from(f: StiefelFrame) -> Mat {
        f.0
    }
}

pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    // fill column by column so the draw order matches the storage order
    for v in m.as_mut_slice() {
        *v = rng.sample(StandardNormal);
    }
    m
}

/// Draws from the uniform (Haar) distribution on the `rows x cols` Stiefel
/// manifold: QR of a Gaussian matrix with the signs of `R`'s diagonal moved
/// into `Q`.
pub fn sample_uniform_stiefel<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Result<StiefelFrame> {
    if cols > rows || cols == 0 {
        return Err(Error::Dimension(format!(
            "cannot draw a {rows}x{cols} orthonormal frame"
        )));
    }
    let g = standard_normal_matrix(rows, cols, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    StiefelFrame::new(q, MANIFOLD_TOL)
}

/// Nearest orthonormal frame to `m` in Frobenius norm (`U Vᵀ` from the thin
/// SVD). Used to average Stiefel-valued draws.
pub fn polar_retraction(m: &Mat) -> Result<StiefelFrame> {
    if m.ncols() > m.nrows() {
        return Err(Error::Dimension("polar retraction needs rows >= cols".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite matrix in polar retraction".into()));
    }
    let svd = m.clone().svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Numerical("SVD failed in polar retraction".into())),
    };
    StiefelFrame::new(u * vt, MANIFOLD_TOL)
}

/// Flips each column so that its largest-magnitude entry is positive.
pub fn normalize_column_signs(m: &mut Mat) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0_f64;
        for &v in col.iter() {
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < 0.0 {
            col.neg_mut();
        }
    }
}

/// The `k` leading eigenvectors (descending eigenvalue) of a symmetric
/// matrix, sign-normalised, together with their eigenvalues.
pub fn top_eigenvectors(sym: &Mat, k: usize) -> Result<(Mat, Vec<f64>)> {
    let n = sym.nrows();
    if sym.ncols() != n || k > n {
        return Err(Error::Dimension(format!(
            "need a square matrix with at least {k} rows, got {}x{}",
            n,
            sym.ncols()
        )));
    }
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite matrix in eigen-decomposition".into()));
    }
    let eig = SymmetricEigen::new(sym.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut vecs = Mat::zeros(n, k);
    let mut vals = Vec::with_capacity(k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
        vals.push(eig.eigenvalues[src]);
    }
    normalize_column_signs(&mut vecs);
    Ok((vecs, vals))
}

/// Per-subject observations: matrices `X_i`, treatment `E_i`, covariates
/// `Z_i` (row `i` of `z`) and binary outcome `Y_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDataset {
    x: Vec<Mat>,
    e: Vec<f64>,
    z: Mat,
    y: Vec<bool>,
}

impl MatrixDataset {
    pub fn new(x: Vec<Mat>, e: Vec<f64>, z: Mat, y: Vec<bool>) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(Error::Data("dataset has no subjects".into()));
        }
        let (p, q) = x[0].shape();
        if p == 0 || q == 0 {
            return Err(Error::Data("observed matrices must be non-empty".into()));
        }
        for (i, xi) in x.iter().enumerate() {
            if xi.shape() != (p, q) {
                return Err(Error::Data(format!(
                    "subject {i} has a {}x{} matrix, expected {p}x{q}",
                    xi.nrows(),
                    xi.ncols()
                )));
            }
            if xi.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("subject {i} has non-finite entries")));
            }
        }
        if e.len() != n || y.len() != n || z.nrows() != n {
            return Err(Error::Data(format!(
                "length mismatch: {n} matrices, {} treatments, {} outcomes, {} covariate rows",
                e.len(),
                y.len(),
                z.nrows()
            )));
        }
        if e.iter().chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite treatment or covariate".into()));
        }
        Ok(MatrixDataset { x, e, z, y })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn p(&self) -> usize {
        self.x[0].nrows()
    }

    pub fn q(&self) -> usize {
        self.x[0].ncols()
    }

    pub fn k(&self) -> usize {
        self.z.ncols()
    }

    pub fn dims(&self, p0: usize, q0: usize) -> Dims {
        Dims {
            p: self.p(),
            q: self.q(),
            p0,
            q0,
            k: self.k(),
            n: self.n(),
        }
    }

    pub fn x(&self) -> &[Mat] {
        &self.x
    }

    pub fn e(&self) -> &[f64] {
        &self.e
    }

    /// Covariates, one row per subject.
    pub fn z(&self) -> &Mat {
        &self.z
    }

    pub fn z_row(&self, i: usize) -> Vector {
        self.z.row(i).transpose()
    }

    pub fn y(&self) -> &[bool] {
        &self.y
    }

    /// Element-wise sample mean of the observed matrices.
    pub fn mean_matrix(&self) -> Mat {
        let mut m = Mat::zeros(self.p(), self.q());
        for xi in &self.x {
            m += xi;
        }
        m / self.n() as f64
    }

    /// Column means of the covariates (the default reference covariate value).
    pub fn mean_covariates(&self) -> Vector {
        let n = self.n() as f64;
        Vector::from_iterator(self.k(), self.z.column_iter().map(|c| c.sum() / n))
    }

    /// Returns a copy with every matrix replaced by `f(i, X_i)`.
    pub fn map_matrices<F: FnMut(usize, &Mat) -> Mat>(&self, mut f: F) -> Result<Self> {
        let x = self.x.iter().enumerate().map(|(i, m)| f(i, m)).collect();
        MatrixDataset::new(x, self.e.clone(), self.z.clone(), self.y.clone())
    }

    /// Subset of subjects in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let x = idx.iter().map(|&i| self.x[i].clone()).collect();
        let e = idx.iter().map(|&i| self.e[i]).collect();
        let y = idx.iter().map(|&i| self.y[i]).collect();
        let mut z = Mat::zeros(idx.len(), self.k());
        for (r, &i) in idx.iter().enumerate() {
            z.set_row(r, &self.z.row(i));
        }
        MatrixDataset::new(x, e, z, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn vec_is_column_major() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(vec(&m).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec(&Mat::identity(2, 2)).as_slice(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn unvec_inverts_vec() {
        let m = unvec(&[1.0, 2.0, 3.0, 4.0], 2, 2).unwrap();
        assert_eq!(m, Mat::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]));
        assert_eq!(unvec(&[0.0; 6], 3, 2).unwrap(), Mat::zeros(3, 2));
        assert!(matches!(unvec(&[1.0; 5], 2, 3), Err(Error::Dimension(_))));

        let mut rng = rng_from_seed(1);
        let m = standard_normal_matrix(3, 2, &mut rng);
        assert_eq!(unvec(vec(&m).as_slice(), 3, 2).unwrap(), m);
    }

    #[test]
    fn kron_matches_elementwise_definition() {
        assert_eq!(kron(&Mat::identity(3, 3), &Mat::identity(2, 2)), Mat::identity(6, 6));

        let mut rng = rng_from_seed(2);
        let b = standard_normal_matrix(2, 1, &mut rng);
        let a = standard_normal_matrix(3, 1, &mut rng);
        let w = kron(&b, &a);
        assert_eq!(w.shape(), (6, 1));
        for k in 0..2 {
            for r in 0..3 {
                assert_eq!(w[(k * 3 + r, 0)], b[(k, 0)] * a[(r, 0)]);
            }
        }

        let a = sample_uniform_stiefel(10, 2, &mut rng).unwrap();
        let b = sample_uniform_stiefel(10, 2, &mut rng).unwrap();
        let w = kron(b.as_mat(), a.as_mat());
        assert_eq!(w.shape(), (100, 4));
        assert!(orthonormality_error(&w) < 1e-8);
    }

    #[test]
    fn stiefel_draws_are_orthonormal() {
        let mut rng = rng_from_seed(3);
        let f = sample_uniform_stiefel(5, 2, &mut rng).unwrap();
        assert!(f.orthonormality_error() < 1e-10);
        let f = sample_uniform_stiefel(3, 3, &mut rng).unwrap();
        assert!((f.as_mat().determinant().abs() - 1.0).abs() < 1e-8);
        assert!(sample_uniform_stiefel(2, 3, &mut rng).is_err());
    }

    #[test]
    fn stiefel_first_coordinate_moments() {
        // a uniform point on S² has coordinates with mean 0 and variance 1/3
        let mut rng = rng_from_seed(4);
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_uniform_stiefel(3, 1, &mut rng).unwrap().as_mat()[(0, 0)])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0 / 3.0).abs() < 0.015, "var {var}");
    }

    #[test]
    fn stiefel_frame_rejects_non_orthonormal() {
        let m = Mat::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(StiefelFrame::new(m, MANIFOLD_TOL).is_err());
    }

    #[test]
    fn polar_retraction_fixes_orthonormal_frames() {
        let mut rng = rng_from_seed(5);
        let f = sample_uniform_stiefel(6, 3, &mut rng).unwrap();
        let r = polar_retraction(f.as_mat()).unwrap();
        assert!((r.as_mat() - f.as_mat()).amax() < 1e-10);
        let scaled = f.as_mat() * 0.3;
        let r = polar_retraction(&scaled).unwrap();
        assert!((r.as_mat() - f.as_mat()).amax() < 1e-10);
    }

    #[test]
    fn top_eigenvectors_sorted_descending() {
        let m = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 5.0, 3.0]));
        let (v, vals) = top_eigenvectors(&m, 2).unwrap();
        assert_eq!(vals, vec![5.0, 3.0]);
        assert!((v[(1, 0)] - 1.0).abs() < 1e-12);
        assert!((v[(2, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dims_validation() {
        let d = Dims { p: 10, q: 10, p0: 2, q0: 2, k: 0, n: 5 };
        d.validate_for_sampler().unwrap();
        let full = Dims { p0: 10, ..d };
        full.validate().unwrap();
        assert!(full.validate_for_sampler().is_err());
        assert!(Dims { p0: 0, ..d }.validate().is_err());
    }

    #[test]
    fn dataset_rejects_ragged_input() {
        let x = vec![Mat::zeros(2, 2), Mat::zeros(2, 3)];
        let r = MatrixDataset::new(x, vec![0.0, 1.0], Mat::zeros(2, 0), vec![true, false]);
        assert!(matches!(r, Err(Error::Data(_))));
    }

    proptest! {
        #[test]
        fn kron_vec_identity(
            p in 1usize..5, q in 1usize..5, p0 in 1usize..4, q0 in 1usize..4, seed in any::<u64>()
        ) {
            let mut rng = rng_from_seed(seed);
            let a = standard_normal_matrix(p, p0, &mut rng);
            let b = standard_normal_matrix(q, q0, &mut rng);
            let t = standard_normal_matrix(p0, q0, &mut rng);
            let lhs = vec(&(&a * &t * b.transpose()));
            let rhs = kron(&b, &a) * vec(&t);
            let scale = 1.0 + lhs.amax();
            prop_assert!((lhs - rhs).amax() <= 1e-13 * scale);
        }

        #[test]
        fn vec_unvec_round_trip(p in 1usize..6, q in 1usize..6, seed in any::<u64>()) {
            let mut rng = rng_from_seed(seed);
            let v: Vec<f64> = (0..p * q).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let m = unvec(&v, p, q).unwrap();
            let back = vec(&m);
            prop_assert_eq!(back.as_slice(), &v[..]);
        }
    }
}
