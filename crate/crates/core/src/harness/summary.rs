use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::federation::RoundReport;

/// Summary columns, in order. Per-client and per-split values are packed into
/// one field each (`;`-separated) so the column count never changes.
pub const SUMMARY_COLUMNS: [&str; 10] = [
    "mode",
    "eta",
    "rounds_per_epoch",
    "weighting",
    "seed",
    "train_loss",
    "eval_loss",
    "mean_eval_loss",
    "total_bytes",
    "total_rounds",
];

/// One finished run, as it appears in `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub mode: String,
    pub eta: f64,
    pub rounds_per_epoch: usize,
    pub weighting: String,
    pub seed: u64,
    /// Final local training loss per client.
    pub train_loss: Vec<f64>,
    /// Final evaluation loss per split, as `(name, loss)`.
    pub eval_loss: Vec<(String, f64)>,
    pub total_bytes: u64,
    pub total_rounds: usize,
}

impl SummaryRow {
    pub fn mean_eval_loss(&self) -> f64 {
        if self.eval_loss.is_empty() {
            return f64::NAN;
        }
        self.eval_loss.iter().map(|(_, l)| l).sum::<f64>() / self.eval_loss.len() as f64
    }

    fn fields(&self) -> [String; 10] {
        let join = |v: Vec<String>| v.join(";");
        [
            self.mode.clone(),
            self.eta.to_string(),
            self.rounds_per_epoch.to_string(),
            self.weighting.clone(),
            self.seed.to_string(),
            join(self.train_loss.iter().map(f64::to_string).collect()),
            join(self.eval_loss.iter().map(|(n, l)| format!("{n}={l}")).collect()),
            self.mean_eval_loss().to_string(),
            self.total_bytes.to_string(),
            self.total_rounds.to_string(),
        ]
    }
}

/// Writes `rows` as CSV with a [`SUMMARY_COLUMNS`] header.
pub fn emit_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("no completed runs to summarize".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(SUMMARY_COLUMNS).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r.fields()).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

/// Writes one JSON object per report.
pub fn write_metrics(reports: &[RoundReport], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for r in reports {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64) -> SummaryRow {
        SummaryRow {
            mode: "fedavg".into(),
            eta: 0.95,
            rounds_per_epoch: 20,
            weighting: "equal".into(),
            seed,
            train_loss: vec![0.5, 0.25],
            eval_loss: vec![("S1".into(), 1.0), ("S2".into(), 0.5)],
            total_bytes: 1234,
            total_rounds: 400,
        }
    }

    #[test]
    fn golden_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        emit_summary(&[row(0)], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "mode,eta,rounds_per_epoch,weighting,seed,train_loss,eval_loss,mean_eval_loss,total_bytes,total_rounds"
        );
        assert_eq!(lines.next().unwrap(), "fedavg,0.95,20,equal,0,0.5;0.25,S1=1;S2=0.5,0.75,1234,400");
        assert!(lines.next().is_none());
    }

    #[test]
    fn one_row_per_run() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let rows: Vec<_> = (0..6).map(row).collect();
        emit_summary(&rows, &p).unwrap();
        let mut rdr = csv::Reader::from_path(&p).unwrap();
        let recs: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(recs.len(), 6);
        assert!(recs.iter().all(|r| r.len() == SUMMARY_COLUMNS.len()));
    }

    #[test]
    fn empty_and_unwritable() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_summary(&[], &dir.path().join("s.csv")).is_err());
        let bad = dir.path().join("missing").join("s.csv");
        match emit_summary(&[row(0)], &bad) {
            Err(Error::Io { path, .. }) => assert_eq!(path, bad),
            other => panic!("{other:?}"),
        }
    }
}
