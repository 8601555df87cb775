//! File formats: headerless numeric CSVs for matrices (17 significant
//! digits, lossless round trip), a groups file with one size per line, and
//! JSON for everything structured.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{GroupStructure, SupportIndex};

fn io_err(path: &Path, err: std::io::Error) -> Error {
    Error::Io(path.display().to_string(), err)
}

/// Writes a matrix as a headerless CSV with 17 significant digits.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                w.write_all(b",").map_err(|e| io_err(path, e))?;
            }
            write!(w, "{:.16e}", m[(r, c)]).map_err(|e| io_err(path, e))?;
        }
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a headerless numeric CSV; every row must have the same width.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: format!("not a number: {field:?}"),
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    msg: format!("expected {} fields, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: "empty matrix file".into(),
        });
    }
    let ncols = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

/// Writes group sizes, one per line.
pub fn write_groups(path: &Path, groups: &GroupStructure) -> Result<()> {
    let mut out = String::new();
    for &s in groups.sizes() {
        out.push_str(&s.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_groups(path: &Path) -> Result<GroupStructure> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut sizes = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: usize = line.trim().parse().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: format!("not a group size: {line:?}"),
        })?;
        sizes.push(v);
    }
    GroupStructure::new(sizes)
}

/// Ground-truth sidecar written next to the data CSVs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthFile {
    pub support: Vec<(usize, usize)>,
    pub signal: f64,
    pub in_signal_budget: bool,
    pub l21_total: f64,
    pub signal_budget: f64,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numeric(format!("serialize {}: {e}", path.display())))?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Reads a JSONL chain written by the sampler sink.
pub fn read_chain(path: &Path) -> Result<Vec<crate::sampler::SampleRecord>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Converts chain records into the (support, stacked active coefficients)
/// pairs the mixture comparison consumes.
pub fn chain_to_comparison_samples(
    records: &[crate::sampler::SampleRecord],
    groups: &GroupStructure,
    d: usize,
) -> Result<Vec<(SupportIndex, nalgebra::DVector<f64>)>> {
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let support = rec.support_index(groups.num_groups(), d)?;
        let mut dense = std::collections::HashMap::new();
        for &(r, c, v) in &rec.beta {
            dense.insert((r, c), v);
        }
        let mut active = Vec::new();
        for (k, j) in support.pairs() {
            for r in groups.columns(j) {
                active.push(*dense.get(&(r, k)).unwrap_or(&0.0));
            }
        }
        out.push((support, nalgebra::DVector::from_vec(active)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matrix_csv_roundtrip_is_lossless() {
        let mut rng = StdRng::seed_from_u64(91);
        let dir = std::env::temp_dir().join("groupslab-io-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.csv");
        let m = DMatrix::from_fn(7, 3, |_, _| {
            // Values across several magnitudes, including negatives.
            (rng.random::<f64>() - 0.5) * 10f64.powi(rng.random_range(-8..8))
        });
        write_matrix_csv(&path, &m).unwrap();
        let back = read_matrix_csv(&path).unwrap();
        assert_eq!(m.nrows(), back.nrows());
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits(), "{a} vs {b}");
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = std::env::temp_dir().join("groupslab-io-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        fs::write(&path, "1.0,2.0\n3.0,oops\n").unwrap();
        match read_matrix_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let path2 = dir.join("ragged.csv");
        fs::write(&path2, "1.0,2.0\n3.0\n").unwrap();
        match read_matrix_csv(&path2) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn groups_file_roundtrip() {
        let dir = std::env::temp_dir().join("groupslab-io-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("groups.txt");
        let g = GroupStructure::new(vec![2, 1, 3]).unwrap();
        write_groups(&path, &g).unwrap();
        let back = read_groups(&path).unwrap();
        assert_eq!(back.sizes(), g.sizes());
    }
}
