//! CSV writers for command outputs. Numbers are written in scientific
//! notation with 17 significant digits.

use std::path::Path;

use matmed::diagnostics::GridCell;
use matmed::effects::{EffectEstimates, EffectPoint, Interval};
use matmed::simharness::{ReplicateFailure, ReplicateResult, Table1Row};
use matmed::Mat;

use crate::error::CliResult;
use crate::ingest::fmt_f64;

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, fmt_f64)
}

/// `effect,mean,lo,hi` rows for NIE, NDE, TE and the per-feature indirect
/// effects `NIE_T<j>` (1-based, column-major feature order).
pub fn write_effects(path: &Path, est: &EffectEstimates) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["effect", "mean", "lo", "hi"])?;
    let mut row = |name: String, iv: &Interval| {
        w.write_record([name, fmt_f64(iv.mean), fmt_f64(iv.lo), fmt_f64(iv.hi)])
    };
    row("NIE".into(), &est.nie)?;
    row("NDE".into(), &est.nde)?;
    row("TE".into(), &est.te)?;
    for (j, iv) in est.nie_j.iter().enumerate() {
        row(format!("NIE_T{}", j + 1), iv)?;
    }
    w.flush()?;
    Ok(())
}

/// Point estimates without intervals; `lo` and `hi` are left empty.
pub fn write_point_effects(path: &Path, point: &EffectPoint) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["effect", "mean", "lo", "hi"])?;
    let mut rows = vec![("NIE".to_string(), point.nie), ("NDE".into(), point.nde), ("TE".into(), point.te)];
    rows.extend(point.nie_j.iter().enumerate().map(|(j, &v)| (format!("NIE_T{}", j + 1), v)));
    for (name, v) in rows {
        w.write_record([name, fmt_f64(v), String::new(), String::new()])?;
    }
    w.flush()?;
    Ok(())
}

/// `row,col,<value_name>` for a column-major `p x q` vector of values.
pub fn write_cells(path: &Path, value_name: &str, p: usize, q: usize, values: &[f64]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "col", value_name])?;
    for c in 0..q {
        for r in 0..p {
            w.write_record([r.to_string(), c.to_string(), fmt_f64(values[r + c * p])])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix_cells(path: &Path, value_name: &str, m: &Mat) -> CliResult<()> {
    write_cells(path, value_name, m.nrows(), m.ncols(), m.as_slice())
}

/// File name of the probability map for threshold `kappa`.
pub fn prob_map_name(kappa: f64) -> String {
    format!("prob_map_{kappa}.csv")
}

/// `parameter,mean,sd,lo,hi,ess` for scalar traces.
pub fn write_trace_summary(path: &Path, traces: &[(String, Vec<f64>)], level: f64) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["parameter", "mean", "sd", "lo", "hi", "ess"])?;
    for (name, values) in traces {
        let iv = Interval::from_draws(values, level);
        let n = values.len() as f64;
        let var = values.iter().map(|v| (v - iv.mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let ess = matmed::diagnostics::effective_sample_size(values).ok().map(|e| e.value);
        w.write_record([
            name.clone(),
            fmt_f64(iv.mean),
            fmt_f64(var.sqrt()),
            fmt_f64(iv.lo),
            fmt_f64(iv.hi),
            opt(ess),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_grid_summary(path: &Path, cells: &[GridCell]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "p0", "q0", "dic", "ve", "nie", "nie_lo", "nie_hi", "nde", "nde_lo", "nde_hi", "te", "te_lo", "te_hi", "p_d",
        "error",
    ])?;
    for cell in cells {
        let mut row = vec![cell.p0.to_string(), cell.q0.to_string()];
        match &cell.outcome {
            Ok(f) => {
                row.push(fmt_f64(f.dic.dic));
                row.push(fmt_f64(f.ve));
                for iv in [&f.nie, &f.nde, &f.te] {
                    row.extend([fmt_f64(iv.mean), fmt_f64(iv.lo), fmt_f64(iv.hi)]);
                }
                row.push(fmt_f64(f.dic.p_d));
                row.push(String::new());
            }
            Err(msg) => {
                row.extend(std::iter::repeat_n(String::new(), 12));
                row.push(msg.clone());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table1(path: &Path, rows: &[Table1Row]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "scenario",
        "n",
        "method",
        "effect",
        "truth",
        "mean",
        "mse_x1000",
        "var_x1000",
        "bias_x1000",
        "replicates",
    ])?;
    for r in rows {
        w.write_record([
            r.scenario.name().to_string(),
            r.n.to_string(),
            r.method.name().to_string(),
            r.effect.clone(),
            fmt_f64(r.truth),
            fmt_f64(r.mean),
            fmt_f64(r.mse_x1000),
            fmt_f64(r.var_x1000),
            fmt_f64(r.bias_x1000),
            r.replicates.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-replicate estimates. Timings are left out so that reruns are
/// byte-identical.
pub fn write_replicates(path: &Path, results: &[ReplicateResult]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "replicate", "method", "nie", "nde", "te", "nie_lo", "nie_hi", "nde_lo", "nde_hi", "te_lo", "te_hi", "auc",
        "seed",
    ])?;
    for r in results {
        let mut row = vec![
            r.replicate.to_string(),
            r.method.name().to_string(),
            fmt_f64(r.nie),
            fmt_f64(r.nde),
            fmt_f64(r.te),
        ];
        match &r.intervals {
            Some(ivs) => ivs.iter().for_each(|iv| row.extend([fmt_f64(iv.lo), fmt_f64(iv.hi)])),
            None => row.extend(std::iter::repeat_n(String::new(), 6)),
        }
        row.push(opt(r.auc));
        row.push(r.seed.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_failures(path: &Path, failures: &[ReplicateFailure]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["replicate", "method", "message"])?;
    for f in failures {
        w.write_record([f.replicate.to_string(), f.method.name().to_string(), f.message.clone()])?;
    }
    w.flush()?;
    Ok(())
}
