use serde::{Deserialize, Serialize};

use matmed::{Mat, MatrixDataset};

use crate::error::CliResult;

/// Element-wise standardization applied before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PreprocessMode {
    None,
    #[default]
    Center,
    CenterScale,
}

/// Cells whose population standard deviation falls below this are treated
/// as constant.
pub const ZERO_VARIANCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub mode: PreprocessMode,
    pub mean: Mat,
    /// Population (divide-by-n) standard deviation per cell.
    pub sd: Mat,
    /// `(row, col)` of cells with zero variance; these are centered only.
    pub zero_variance: Vec<(usize, usize)>,
}

/// Centers each cell at its sample mean and, for `CenterScale`, divides it
/// by its population standard deviation.
pub fn preprocess(data: &MatrixDataset, mode: PreprocessMode) -> CliResult<(MatrixDataset, PreprocessReport)> {
    let n = data.n() as f64;
    let mean = data.mean_matrix();
    let mut var = Mat::zeros(data.p(), data.q());
    for xi in data.x() {
        let d = xi - &mean;
        var += d.component_mul(&d);
    }
    let sd = (var / n).map(f64::sqrt);

    let mut zero_variance = Vec::new();
    for c in 0..data.q() {
        for r in 0..data.p() {
            if sd[(r, c)] <= ZERO_VARIANCE_TOL * mean[(r, c)].abs().max(1.0) {
                zero_variance.push((r, c));
            }
        }
    }
    if mode == PreprocessMode::CenterScale && !zero_variance.is_empty() {
        log::warn!(
            "{} constant cell(s) left centered but unscaled, first at {:?}",
            zero_variance.len(),
            zero_variance[0]
        );
    }

    let scale = Mat::from_fn(data.p(), data.q(), |r, c| {
        if mode == PreprocessMode::CenterScale && !zero_variance.contains(&(r, c)) {
            sd[(r, c)]
        } else {
            1.0
        }
    });
    let out = match mode {
        PreprocessMode::None => data.clone(),
        _ => data.map_matrices(|_, xi| (xi - &mean).component_div(&scale))?,
    };
    Ok((
        out,
        PreprocessReport {
            mode,
            mean,
            sd,
            zero_variance,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> MatrixDataset {
        let x = vec![
            Mat::from_row_slice(1, 2, &[1.0, 5.0]),
            Mat::from_row_slice(1, 2, &[2.0, 5.0]),
            Mat::from_row_slice(1, 2, &[6.0, 5.0]),
        ];
        MatrixDataset::new(x, vec![0.0, 1.0, 0.0], Mat::zeros(3, 0), vec![true, false, true]).unwrap()
    }

    #[test]
    fn hand_computed_toy() {
        let (out, rep) = preprocess(&toy(), PreprocessMode::CenterScale).unwrap();
        // cell (0,0): mean 3, population variance (4 + 1 + 9) / 3
        let sd = (14.0_f64 / 3.0).sqrt();
        assert!((rep.mean[(0, 0)] - 3.0).abs() < 1e-12);
        assert!((rep.sd[(0, 0)] - sd).abs() < 1e-12);
        assert!((out.x()[0][(0, 0)] + 2.0 / sd).abs() < 1e-12);
        assert!((out.x()[2][(0, 0)] - 3.0 / sd).abs() < 1e-12);
        assert_eq!(rep.zero_variance, vec![(0, 1)]);
        assert!(out.x().iter().all(|x| x[(0, 1)] == 0.0));
    }

    #[test]
    fn standardized_moments() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let x: Vec<Mat> = (0..40).map(|_| Mat::from_fn(3, 4, |r, c| rng.random::<f64>() * (r + c + 1) as f64 + 7.0)).collect();
        let data = MatrixDataset::new(x, vec![0.0; 40], Mat::zeros(40, 0), vec![false; 40]).unwrap();
        let (out, rep) = preprocess(&data, PreprocessMode::CenterScale).unwrap();
        assert!(rep.zero_variance.is_empty());
        let mean = out.mean_matrix();
        let mut var = Mat::zeros(3, 4);
        for xi in out.x() {
            var += xi.component_mul(xi);
        }
        var /= 40.0;
        assert!(mean.amax() < 1e-10);
        assert!(var.iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn center_only_and_none() {
        let (out, _) = preprocess(&toy(), PreprocessMode::Center).unwrap();
        assert_eq!(out.x()[2][(0, 0)], 3.0);
        let (same, _) = preprocess(&toy(), PreprocessMode::None).unwrap();
        assert_eq!(same, toy());
    }
}
