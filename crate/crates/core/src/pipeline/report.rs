use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::Strategy;
use super::experiment::{CellResult, BASELINE_LABEL, TEACHER_LABEL};
use crate::error::{Error, Result};
use crate::trajectory::format_sig9;

pub const RESULTS_HEADER: &str = "strategy,target_domain,seed,target_acc,val_acc,segment_start,segment_end";

pub fn results_to_csv(results: &[CellResult]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in results {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.strategy,
            r.target_domain,
            r.seed,
            format_sig9(r.target_acc),
            format_sig9(r.val_acc),
            r.segment_start,
            r.segment_end
        )
        .unwrap();
    }
    out
}

pub fn read_results_csv(path: &Path) -> Result<Vec<CellResult>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |field: &'static str, detail: String| Error::Format {
        what: "results csv",
        field,
        detail: format!("{}: {detail}", path.display()),
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == RESULTS_HEADER => {}
        other => return Err(bad("header", format!("expected `{RESULTS_HEADER}`, found {other:?}"))),
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let c: Vec<&str> = line.split(',').map(str::trim).collect();
        if c.len() != 7 {
            return Err(bad("row", format!("line {}: expected 7 columns, got {}", n + 2, c.len())));
        }
        let line_no = n + 2;
        let acc = |field: &'static str, s: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|e| bad(field, format!("line {line_no}: {e}")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(field, format!("line {line_no}: accuracy {v} outside [0, 1]")));
            }
            Ok(v)
        };
        let int = |field: &'static str, s: &str| -> Result<u64> {
            s.parse().map_err(|e| bad(field, format!("line {line_no}: {e}")))
        };
        out.push(CellResult {
            strategy: c[0].to_string(),
            target_domain: c[1].to_string(),
            seed: int("seed", c[2])?,
            target_acc: acc("target_acc", c[3])?,
            val_acc: acc("val_acc", c[4])?,
            segment_start: int("segment_start", c[5])?,
            segment_end: int("segment_end", c[6])?,
        });
    }
    Ok(out)
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStats {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl CellStats {
    /// Sums run over sorted values so the result does not depend on input order.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("no values to aggregate".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            let ss: f64 = sorted.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(CellStats { mean, sd, n })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub strategy: String,
    /// Aligned with [`Summary::domains`]; `None` where the strategy has no result.
    pub per_domain: Vec<Option<CellStats>>,
    /// Unweighted mean of the per-domain means.
    pub avg: f64,
}

/// Target accuracy per strategy and target domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub domains: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

fn strategy_rank(name: &str) -> usize {
    let mut fixed = vec![TEACHER_LABEL, BASELINE_LABEL];
    fixed.extend(Strategy::ALL.iter().map(|s| s.result_label()));
    fixed.iter().position(|&f| f == name).unwrap_or(fixed.len())
}

/// Orders `rot5` before `rot15`: letters lexically, then the numeric suffix.
fn natural_cmp(a: &str, b: &str) -> Ordering {
    let split = |s: &str| {
        let pos = s.find(|c: char| c.is_ascii_digit() || c == '-').unwrap_or(s.len());
        let (head, tail) = s.split_at(pos);
        (head.to_string(), tail.parse::<f64>().ok(), s.to_string())
    };
    let (ha, na, fa) = split(a);
    let (hb, nb, fb) = split(b);
    ha.cmp(&hb)
        .then_with(|| match (na, nb) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            _ => Ordering::Equal,
        })
        .then_with(|| fa.cmp(&fb))
}

pub fn aggregate(results: &[CellResult]) -> Result<Summary> {
    if results.is_empty() {
        return Err(Error::Domain("no results to aggregate".into()));
    }
    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in results {
        cells
            .entry((r.strategy.clone(), r.target_domain.clone()))
            .or_default()
            .push(r.target_acc);
    }
    let mut domains: Vec<String> = cells.keys().map(|(_, d)| d.clone()).collect();
    domains.sort_by(|a, b| natural_cmp(a, b));
    domains.dedup();
    let mut strategies: Vec<String> = cells.keys().map(|(s, _)| s.clone()).collect();
    strategies.sort_by(|a, b| strategy_rank(a).cmp(&strategy_rank(b)).then_with(|| a.cmp(b)));
    strategies.dedup();

    let rows = strategies
        .into_iter()
        .map(|strategy| {
            let per_domain = domains
                .iter()
                .map(|d| {
                    cells
                        .get(&(strategy.clone(), d.clone()))
                        .map(|v| CellStats::from_values(v))
                        .transpose()
                })
                .collect::<Result<Vec<_>>>()?;
            let means: Vec<f64> = per_domain.iter().flatten().map(|s| s.mean).collect();
            let avg = means.iter().sum::<f64>() / means.len() as f64;
            Ok(SummaryRow {
                strategy,
                per_domain,
                avg,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Summary { domains, rows })
}

impl Summary {
    pub fn row(&self, strategy: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    /// `strategy,<domain>_mean,<domain>_sd,…,avg` with accuracies as fractions.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy");
        for d in &self.domains {
            write!(out, ",{d}_mean,{d}_sd").unwrap();
        }
        out.push_str(",avg\n");
        for row in &self.rows {
            out.push_str(&row.strategy);
            for cell in &row.per_domain {
                match cell {
                    Some(s) => write!(out, ",{},{}", format_sig9(s.mean), format_sig9(s.sd)).unwrap(),
                    None => out.push_str(",,"),
                }
            }
            writeln!(out, ",{}", format_sig9(row.avg)).unwrap();
        }
        out
    }

    /// Fixed-width table in percent, `mean ± sd` per domain plus `Avg.`.
    pub fn to_table(&self) -> String {
        let label_width = self.rows.iter().map(|r| r.strategy.len()).max().unwrap_or(8).max(8);
        let mut out = format!("{:<label_width$}", "strategy");
        for d in &self.domains {
            write!(out, " {d:>13}").unwrap();
        }
        out.push_str("    Avg.\n");
        for row in &self.rows {
            write!(out, "{:<label_width$}", row.strategy).unwrap();
            for cell in &row.per_domain {
                match cell {
                    Some(s) => write!(out, " {:>6.1} ± {:<4.1}", 100.0 * s.mean, 100.0 * s.sd).unwrap(),
                    None => write!(out, " {:>13}", "-").unwrap(),
                }
            }
            writeln!(out, " {:>7.2}", 100.0 * row.avg).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(strategy: &str, domain: &str, seed: u64, acc: f64) -> CellResult {
        CellResult {
            strategy: strategy.into(),
            target_domain: domain.into(),
            seed,
            target_acc: acc,
            val_acc: 0.5,
            segment_start: 0,
            segment_end: 10,
        }
    }

    #[test]
    fn two_seed_mean_and_sd() {
        let s = CellStats::from_values(&[0.8, 0.9]).unwrap();
        assert!((s.mean - 0.85).abs() < 1e-15);
        assert!((s.sd - 0.0707106781).abs() < 1e-9);
        assert_eq!(CellStats::from_values(&[0.3]).unwrap().sd, 0.0);
        assert!(CellStats::from_values(&[]).is_err());
    }

    #[test]
    fn avg_is_mean_of_domain_means() {
        let results = [
            r("kd-wakd", "rot0", 0, 0.8),
            r("kd-wakd", "rot0", 1, 0.6),
            r("kd-wakd", "rot15", 0, 0.9),
            r("kd-erm", "rot15", 0, 0.5),
        ];
        let s = aggregate(&results).unwrap();
        assert_eq!(s.domains, vec!["rot0", "rot15"]);
        assert_eq!(s.rows[0].strategy, "kd-erm");
        assert!(s.rows[0].per_domain[0].is_none());
        assert!((s.row("kd-wakd").unwrap().avg - 0.8).abs() < 1e-15);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn natural_domain_order() {
        let results = [r("a", "rot45", 0, 0.1), r("a", "rot5", 0, 0.1), r("a", "rot15", 0, 0.1)];
        assert_eq!(aggregate(&results).unwrap().domains, vec!["rot5", "rot15", "rot45"]);
    }

    #[test]
    fn results_csv_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("results.csv");
        let rows = vec![r("kd-erm", "rot0", 3, 0.875), r("teacher-swad", "rot15", 0, 1.0)];
        fs::write(&path, results_to_csv(&rows)).unwrap();
        assert_eq!(read_results_csv(&path).unwrap(), rows);
        fs::write(&path, "strategy,seed\nx,1\n").unwrap();
        assert!(read_results_csv(&path).is_err());
    }
}
