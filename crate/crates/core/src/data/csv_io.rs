use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

use super::{ClientDataset, SkewSpec};

/// Reads a `f0,...,f{d-1},label` file. When `num_classes` is `None` the class
/// count is taken as `max(label) + 1` (at least 2).
pub fn load_csv(path: &Path, client_id: usize, num_classes: Option<usize>) -> Result<ClientDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.last() != Some(&"label") {
        return Err(Error::Parse {
            line: 1,
            message: "missing label column".into(),
        });
    }
    let dim = cols.len() - 1;
    if dim == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "no feature columns".into(),
        });
    }
    for (i, name) in cols[..dim].iter().enumerate() {
        if *name != format!("f{i}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected column f{i}, found {name:?}"),
            });
        }
    }

    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", dim + 1, record.len()),
            });
        }
        for (i, field) in record.iter().take(dim).enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("f{i}: not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("f{i}: non-finite value"),
                });
            }
            feats.push(v);
        }
        let label_field = &record[dim];
        let label: usize = label_field.parse().map_err(|_| Error::Parse {
            line,
            message: format!("label: not a class index: {label_field:?}"),
        })?;
        if let Some(c) = num_classes {
            if label >= c {
                return Err(Error::Validation(format!(
                    "line {line}: label {label} out of range for {c} classes"
                )));
            }
        }
        labels.push(label);
    }
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(2, |m| (m + 1).max(2)));
    let n = labels.len();
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ClientDataset::new(client_id, Matrix::from_vec(n, dim, feats)?, labels, classes, tag)
}

/// Writes features and labels in the format `load_csv` reads. Values are
/// printed with Rust's shortest round-trip formatting.
pub fn write_csv(path: &Path, features: &Matrix, labels: &[usize]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        let header: Vec<String> = (0..features.cols()).map(|i| format!("f{i}")).collect();
        writeln!(out, "{},label", header.join(","))?;
        for (r, y) in labels.iter().enumerate() {
            for v in features.row(r) {
                write!(out, "{v},")?;
            }
            writeln!(out, "{y}")?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// Sidecar describing how a synthetic dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub seed: u64,
    pub dim: usize,
    pub classes: usize,
    pub client_files: Vec<String>,
    pub client_counts: Vec<usize>,
    pub skews: Vec<SkewSpec>,
    pub eval_files: Vec<String>,
    pub eval_clients: Vec<Option<usize>>,
    pub eval_counts: Vec<usize>,
}

pub fn write_metadata(path: &Path, meta: &DatasetMetadata) -> Result<()> {
    let text = serde_json::to_string_pretty(meta)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("c.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn two_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "f0,f1,label\n0.5,1.5,0\n-2,3e-1,1\n");
        let ds = load_csv(&p, 0, None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.features.row(1), &[-2.0, 0.3]);
        assert_eq!(ds.labels, vec![0, 1]);
    }

    #[test]
    fn missing_label_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "f0,f1\n0.5,1.5\n");
        assert!(matches!(load_csv(&p, 0, None), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn non_numeric_feature_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "f0,f1,label\n0.5,1.5,0\n0.1,abc,1\n");
        match load_csv(&p, 0, None) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("f1"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn label_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "f0,label\n0.5,7\n");
        assert!(matches!(load_csv(&p, 0, Some(3)), Err(Error::Validation(_))));
    }

    #[test]
    fn write_then_load_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let (x, y) = crate::data::generate_base(5, 30, 3, 4).unwrap();
        let p = dir.path().join("out.csv");
        write_csv(&p, &x, &y).unwrap();
        let ds = load_csv(&p, 2, Some(4)).unwrap();
        assert_eq!(ds.features, x);
        assert_eq!(ds.labels, y);
    }
}
