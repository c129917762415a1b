//! Long-format CSV input and output.
//!
//! The matrix file holds one observed cell per line,
//! `subject_id,row_index,col_index,value` with 0-based indices. The subjects
//! file holds `subject_id,E,Y,Z1,...,ZK`, one line per subject; its order
//! fixes the subject order of the dataset.

use std::collections::HashMap;
use std::path::Path;

use matmed::{Mat, MatrixDataset};

use crate::error::{CliError, CliResult};

pub const MATRIX_HEADER: [&str; 4] = ["subject_id", "row_index", "col_index", "value"];

/// A dataset together with the subject identifiers it was read with.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub ids: Vec<String>,
    pub data: MatrixDataset,
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn open(path: &Path) -> CliResult<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn parse_f64(path: &Path, line: u64, field: &str, raw: &str) -> CliResult<f64> {
    let v: f64 = raw
        .parse()
        .map_err(|_| parse_err(path, line, format!("{field} '{raw}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("{field} '{raw}' is not finite")));
    }
    Ok(v)
}

fn parse_index(path: &Path, line: u64, field: &str, raw: &str) -> CliResult<usize> {
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("{field} '{raw}' is not a non-negative integer")))
}

struct Subjects {
    ids: Vec<String>,
    e: Vec<f64>,
    y: Vec<bool>,
    z: Vec<Vec<f64>>,
    k: usize,
}

fn read_subjects(path: &Path) -> CliResult<Subjects> {
    let mut rdr = open(path)?;
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 3 || names[..3] != ["subject_id", "E", "Y"] {
        return Err(parse_err(path, 1, "header must start with subject_id,E,Y"));
    }
    let k = names.len() - 3;
    for (j, name) in names[3..].iter().enumerate() {
        if *name != format!("Z{}", j + 1) {
            return Err(parse_err(path, 1, format!("covariate column {} must be named Z{}", j + 4, j + 1)));
        }
    }

    let mut out = Subjects {
        ids: Vec::new(),
        e: Vec::new(),
        y: Vec::new(),
        z: Vec::new(),
        k,
    };
    let mut seen = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(parse_err(path, line, "empty subject_id"));
        }
        if let Some(first) = seen.insert(id.clone(), line) {
            return Err(parse_err(path, line, format!("subject '{id}' already listed on line {first}")));
        }
        out.e.push(parse_f64(path, line, "E", &rec[1])?);
        out.y.push(match &rec[2] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(path, line, format!("Y must be 0 or 1, got '{other}'"))),
        });
        let z = (0..k)
            .map(|j| parse_f64(path, line, &format!("Z{}", j + 1), &rec[3 + j]))
            .collect::<CliResult<Vec<_>>>()?;
        out.z.push(z);
        out.ids.push(id);
    }
    if out.ids.is_empty() {
        return Err(parse_err(path, 1, "no subjects"));
    }
    Ok(out)
}

/// Reads a dataset from a matrix file and a subjects file.
///
/// The matrix shape is inferred from the largest indices; every subject must
/// supply every cell exactly once and every matrix line must name a listed
/// subject.
pub fn ingest(matrix_path: &Path, subjects_path: &Path) -> CliResult<Ingested> {
    let subjects = read_subjects(subjects_path)?;
    let index: HashMap<&str, usize> = subjects.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut rdr = open(matrix_path)?;
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != MATRIX_HEADER {
        return Err(parse_err(matrix_path, 1, format!("header must be {}", MATRIX_HEADER.join(","))));
    }

    // (subject, row, col) -> (value, line)
    let mut cells: HashMap<(usize, usize, usize), (f64, u64)> = HashMap::new();
    let (mut p, mut q) = (0, 0);
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        let id = &rec[0];
        let &s = index
            .get(id)
            .ok_or_else(|| parse_err(matrix_path, line, format!("subject '{id}' is missing from the subjects file")))?;
        let r = parse_index(matrix_path, line, "row_index", &rec[1])?;
        let c = parse_index(matrix_path, line, "col_index", &rec[2])?;
        let v = parse_f64(matrix_path, line, "value", &rec[3])?;
        if let Some((_, first)) = cells.insert((s, r, c), (v, line)) {
            return Err(parse_err(
                matrix_path,
                line,
                format!("duplicate cell (subject {id}, row {r}, col {c}), first given on line {first}"),
            ));
        }
        p = p.max(r + 1);
        q = q.max(c + 1);
    }
    if cells.is_empty() {
        return Err(parse_err(matrix_path, 1, "no matrix cells"));
    }

    let n = subjects.ids.len();
    let mut x = vec![Mat::zeros(p, q); n];
    for (s, xs) in x.iter_mut().enumerate() {
        for c in 0..q {
            for r in 0..p {
                match cells.get(&(s, r, c)) {
                    Some(&(v, _)) => xs[(r, c)] = v,
                    None => {
                        return Err(CliError::Input {
                            path: matrix_path.to_path_buf(),
                            message: format!(
                                "subject '{}' has no value for cell (row {r}, col {c}) of the {p}x{q} matrix",
                                subjects.ids[s]
                            ),
                        })
                    }
                }
            }
        }
    }

    let z = Mat::from_fn(n, subjects.k, |i, j| subjects.z[i][j]);
    let data = MatrixDataset::new(x, subjects.e, z, subjects.y)?;
    Ok(Ingested { ids: subjects.ids, data })
}

/// Full-precision scientific formatting (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a dataset in the two-file long format read by [`ingest`].
pub fn export(ingested: &Ingested, matrix_path: &Path, subjects_path: &Path) -> CliResult<()> {
    let data = &ingested.data;
    let mut w = csv::Writer::from_path(matrix_path)?;
    w.write_record(MATRIX_HEADER)?;
    for (id, xi) in ingested.ids.iter().zip(data.x()) {
        for c in 0..data.q() {
            for r in 0..data.p() {
                w.write_record([id.clone(), r.to_string(), c.to_string(), fmt_f64(xi[(r, c)])])?;
            }
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(subjects_path)?;
    let mut header = vec!["subject_id".to_string(), "E".into(), "Y".into()];
    header.extend((1..=data.k()).map(|j| format!("Z{j}")));
    w.write_record(&header)?;
    for (i, id) in ingested.ids.iter().enumerate() {
        let mut row = vec![id.clone(), fmt_f64(data.e()[i]), (data.y()[i] as u8).to_string()];
        row.extend((0..data.k()).map(|j| fmt_f64(data.z()[(i, j)])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Identifiers `s0001, s0002, ...` for generated datasets.
pub fn default_ids(n: usize) -> Vec<String> {
    let width = n.to_string().len().max(4);
    (1..=n).map(|i| format!("s{i:0width$}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        std::fs::File::create(&path).unwrap().write_all(body.as_bytes()).unwrap();
        path
    }

    const SUBJECTS: &str = "subject_id,E,Y,Z1\na,1,1,0.5\nb,0,0,-0.5\n";

    fn matrix_body() -> String {
        let mut s = String::from("subject_id,row_index,col_index,value\n");
        for id in ["a", "b"] {
            for r in 0..2 {
                for c in 0..2 {
                    s.push_str(&format!("{id},{r},{c},{}\n", r * 2 + c));
                }
            }
        }
        s
    }

    #[test]
    fn two_by_two_toy() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "m.csv", &matrix_body());
        let s = write(dir.path(), "s.csv", SUBJECTS);
        let got = ingest(&m, &s).unwrap();
        assert_eq!((got.data.n(), got.data.p(), got.data.q(), got.data.k()), (2, 2, 2, 1));
        assert_eq!(got.data.x()[1][(1, 0)], 2.0);
        assert_eq!(got.data.y(), &[true, false]);
        assert_eq!(got.ids, vec!["a", "b"]);
    }

    #[test]
    fn duplicate_triple_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let body = matrix_body() + "b,1,0,9\n";
        let m = write(dir.path(), "m.csv", &body);
        let s = write(dir.path(), "s.csv", SUBJECTS);
        let err = ingest(&m, &s).unwrap_err().to_string();
        assert!(err.contains("subject b, row 1, col 0"), "{err}");
        assert!(err.contains(":10:"), "{err}");
    }

    #[test]
    fn missing_cell_and_subject() {
        let dir = tempfile::tempdir().unwrap();
        let body: String = matrix_body().lines().filter(|l| *l != "a,0,1,1").map(|l| format!("{l}\n")).collect();
        let m = write(dir.path(), "m.csv", &body);
        let s = write(dir.path(), "s.csv", SUBJECTS);
        let err = ingest(&m, &s).unwrap_err().to_string();
        assert!(err.contains("row 0, col 1"), "{err}");

        let m = write(dir.path(), "m2.csv", &(matrix_body() + "c,0,0,1\n"));
        let err = ingest(&m, &s).unwrap_err().to_string();
        assert!(err.contains("'c' is missing"), "{err}");
    }

    #[test]
    fn non_binary_outcome_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "m.csv", &matrix_body());
        let s = write(dir.path(), "s.csv", "subject_id,E,Y,Z1\na,1,1,0.5\nb,0,2,-0.5\n");
        let err = ingest(&m, &s).unwrap_err();
        assert_eq!(err.category(), "parse");
        assert!(err.to_string().contains(":3: Y must be 0 or 1"), "{err}");
    }

    #[test]
    fn bad_headers() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "m.csv", &matrix_body());
        let s = write(dir.path(), "s.csv", "subject_id,E,Y,X1\na,1,1,0.5\n");
        assert!(ingest(&m, &s).is_err());
        let s = write(dir.path(), "s2.csv", SUBJECTS);
        let m = write(dir.path(), "m2.csv", "id,row,col,value\na,0,0,1\n");
        assert!(ingest(&m, &s).is_err());
    }
}
