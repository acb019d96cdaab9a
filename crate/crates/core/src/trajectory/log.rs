use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const TRAJECTORY_HEADER: &str = "iteration,val_loss,val_accuracy";

/// Metrics of one validation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub iteration: u64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Validation metrics in evaluation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    records: Vec<EvalRecord>,
}

impl TrajectoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = EvalRecord>) -> Result<Self> {
        let mut log = TrajectoryLog::new();
        for r in records {
            log.push(r)?;
        }
        Ok(log)
    }

    pub fn push(&mut self, record: EvalRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.iteration <= last.iteration {
                return Err(Error::Domain(format!(
                    "trajectory iterations must increase: {} after {}",
                    record.iteration, last.iteration
                )));
            }
        }
        if !record.val_loss.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite validation loss at iteration {}",
                record.iteration
            )));
        }
        if !(0.0..=1.0).contains(&record.val_accuracy) {
            return Err(Error::Domain(format!(
                "validation accuracy {} outside [0, 1] at iteration {}",
                record.val_accuracy, record.iteration
            )));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[EvalRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.val_loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAJECTORY_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{}\n",
                r.iteration,
                format_sig9(r.val_loss),
                format_sig9(r.val_accuracy)
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |field: &'static str, detail: String| Error::Format {
            what: "trajectory csv",
            field,
            detail,
        };
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == TRAJECTORY_HEADER => {}
            other => {
                return Err(bad(
                    "header",
                    format!("expected `{TRAJECTORY_HEADER}`, found {other:?}"),
                ))
            }
        }
        let mut log = TrajectoryLog::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(bad("row", format!("line {}: expected 3 columns", n + 2)));
            }
            let iteration = cols[0]
                .parse()
                .map_err(|e| bad("iteration", format!("line {}: {e}", n + 2)))?;
            let val_loss = cols[1]
                .parse()
                .map_err(|e| bad("val_loss", format!("line {}: {e}", n + 2)))?;
            let val_accuracy = cols[2]
                .parse()
                .map_err(|e| bad("val_accuracy", format!("line {}: {e}", n + 2)))?;
            log.push(EvalRecord {
                iteration,
                val_loss,
                val_accuracy,
            })?;
        }
        Ok(log)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// Decimal notation with nine significant digits.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}
