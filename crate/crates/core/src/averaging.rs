//! Checkpoint selection and weight averaging over a finished trajectory.
//!
//! * ERM picks the single checkpoint with the best validation accuracy.
//! * SWAD averages every checkpoint inside a segment chosen from the
//!   validation-loss curve.
//! * SMA averages from a fixed early iteration up to the evaluation point
//!   whose *averaged* model has the best validation accuracy.
//! * WAKD averages everything after the first fraction of training and
//!   never looks at validation data.
//!
//! All strategies are read-only passes over a [`CheckpointStore`], so they
//! can share one trajectory.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::trajectory::{stream_checkpoints, write_checkpoint_file, Checkpoint, CheckpointStore, TrajectoryLog};

/// Iteration field written into averaged-model checkpoint files.
pub const AVERAGED_ITERATION: u64 = u64::MAX;

/// Default fraction of training skipped before SMA/WAKD start averaging.
pub const DEFAULT_START_FRACTION: f64 = 0.1;

/// Incremental mean of parameter vectors with an `f64` sum.
#[derive(Debug, Clone, Default)]
pub struct RunningMean {
    count: u64,
    sum: Vec<f64>,
}

impl RunningMean {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, params: &ParamVector) -> Result<()> {
        if self.count == 0 {
            self.sum = vec![0.0; params.len()];
        } else if params.len() != self.sum.len() {
            return Err(Error::Domain(format!(
                "averaging {} values into a mean of length {}",
                params.len(),
                self.sum.len()
            )));
        }
        for (s, &p) in self.sum.iter_mut().zip(params.as_slice()) {
            *s += p as f64;
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean_f64(&self) -> Option<Vec<f64>> {
        (self.count > 0).then(|| {
            let n = self.count as f64;
            self.sum.iter().map(|s| s / n).collect()
        })
    }

    pub fn mean(&self) -> Option<ParamVector> {
        self.mean_f64()
            .map(|m| ParamVector::new(m.into_iter().map(|v| v as f32).collect()))
    }
}

/// Inclusive range of training iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start_iteration: u64,
    pub end_iteration: u64,
}

impl Segment {
    pub fn new(start_iteration: u64, end_iteration: u64) -> Result<Self> {
        if start_iteration > end_iteration {
            return Err(Error::Domain(format!(
                "segment start {start_iteration} after end {end_iteration}"
            )));
        }
        Ok(Segment {
            start_iteration,
            end_iteration,
        })
    }

    pub fn single(iteration: u64) -> Self {
        Segment {
            start_iteration: iteration,
            end_iteration: iteration,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwadConfig {
    pub n_s: usize,
    pub n_e: usize,
    pub r: f64,
}

impl Default for SwadConfig {
    fn default() -> Self {
        SwadConfig {
            n_s: 3,
            n_e: 6,
            r: 1.3,
        }
    }
}

impl SwadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_s == 0 || self.n_e == 0 || self.r <= 1.0 || !self.r.is_finite() {
            return Err(Error::Config(format!(
                "SWAD needs n_s ≥ 1, n_e ≥ 1 and r > 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

fn require_records(log: &TrajectoryLog, what: &str) -> Result<()> {
    if log.is_empty() {
        return Err(Error::Domain(format!("{what} needs a non-empty trajectory log")));
    }
    Ok(())
}

/// Iteration of the best validation accuracy; ties go to the earliest.
pub fn select_erm(log: &TrajectoryLog) -> Result<u64> {
    require_records(log, "ERM selection")?;
    let mut best = log.records()[0];
    for r in &log.records()[1..] {
        if r.val_accuracy > best.val_accuracy {
            best = *r;
        }
    }
    Ok(best.iteration)
}

/// SWAD segment boundaries as indices into the evaluation sequence.
///
/// The start `s` is the first index whose loss is the minimum of the window
/// `l[s..s+n_s]` (clipped at the end). With `θ = r·l[s]`, the end is one
/// before the first full run of `n_e` consecutive losses above `θ` that
/// begins after `s`, or the last index if no such run exists.
pub fn swad_indices(losses: &[f64], cfg: &SwadConfig) -> Result<(usize, usize)> {
    cfg.validate()?;
    if losses.is_empty() {
        return Err(Error::Domain("SWAD needs at least one evaluation".into()));
    }
    let m = losses.len();

    // Sliding-window minimum over l[k..k+n_s] with a monotone deque of indices.
    let mut window: VecDeque<usize> = VecDeque::new();
    let mut start = m - 1;
    let mut next = 0;
    for k in 0..m {
        while next < m && next < k + cfg.n_s {
            while window.back().is_some_and(|&b| losses[b] > losses[next]) {
                window.pop_back();
            }
            window.push_back(next);
            next += 1;
        }
        while window.front().is_some_and(|&f| f < k) {
            window.pop_front();
        }
        let min = losses[*window.front().expect("window covers k")];
        if losses[k] <= min {
            start = k;
            break;
        }
    }

    let threshold = cfg.r * losses[start];
    let mut run = 0;
    let mut end = m - 1;
    for (b, &l) in losses.iter().enumerate().skip(start + 1) {
        if l > threshold {
            run += 1;
            if run == cfg.n_e {
                end = b + 1 - cfg.n_e - 1;
                break;
            }
        } else {
            run = 0;
        }
    }
    Ok((start, end))
}

pub fn select_swad_segment(log: &TrajectoryLog, cfg: &SwadConfig) -> Result<Segment> {
    require_records(log, "SWAD selection")?;
    let (s, e) = swad_indices(&log.losses(), cfg)?;
    let records = log.records();
    Segment::new(records[s].iteration, records[e].iteration)
}

/// Mean of every stored checkpoint inside `segment`.
pub fn average_segment<S: CheckpointStore + ?Sized>(store: &S, segment: Segment) -> Result<ParamVector> {
    let mut mean = RunningMean::new();
    for checkpoint in stream_checkpoints(store, segment.start_iteration, segment.end_iteration)? {
        mean.update(&checkpoint?.params)?;
    }
    mean.mean().ok_or_else(|| {
        Error::Domain(format!(
            "no checkpoints between iterations {} and {}",
            segment.start_iteration, segment.end_iteration
        ))
    })
}

#[derive(Debug, Clone)]
pub struct SmaSelection {
    pub segment: Segment,
    pub params: ParamVector,
    pub val_accuracy: f64,
}

/// Prefix averaging from `start_iteration`.
///
/// At every evaluation record at or after the start, the mean of all stored
/// checkpoints in `[start, t]` is scored with `val_accuracy`. The prefix with
/// the best score wins, ties going to the earliest. Evaluation points with no
/// checkpoint in their prefix are skipped.
pub fn select_sma<S, F>(
    store: &S,
    log: &TrajectoryLog,
    start_iteration: u64,
    mut val_accuracy: F,
) -> Result<SmaSelection>
where
    S: CheckpointStore + ?Sized,
    F: FnMut(&ParamVector) -> Result<f64>,
{
    let evals: Vec<u64> = log
        .records()
        .iter()
        .map(|r| r.iteration)
        .filter(|&it| it >= start_iteration)
        .collect();
    let Some(&last) = evals.last() else {
        return Err(Error::Domain(format!(
            "no evaluation records at or after iteration {start_iteration}"
        )));
    };

    let mut checkpoints = stream_checkpoints(store, start_iteration, last)?.peekable();
    let mut mean = RunningMean::new();
    let mut best: Option<SmaSelection> = None;
    for t in evals {
        while let Some(c) = checkpoints.next_if(|c| c.as_ref().map_or(true, |c| c.iteration <= t)) {
            mean.update(&c?.params)?;
        }
        let Some(params) = mean.mean() else { continue };
        let acc = val_accuracy(&params)?;
        if best.as_ref().is_none_or(|b| acc > b.val_accuracy) {
            best = Some(SmaSelection {
                segment: Segment::new(start_iteration, t)?,
                params,
                val_accuracy: acc,
            });
        }
    }
    best.ok_or_else(|| {
        Error::Domain(format!(
            "no checkpoints at or after iteration {start_iteration} up to {last}"
        ))
    })
}

/// First averaged iteration: `⌈fraction·total⌉`.
pub fn tail_start(total_iterations: u64, fraction: f64) -> Result<u64> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Domain(format!("start fraction {fraction} outside [0, 1]")));
    }
    let exact = fraction * total_iterations as f64;
    let nearest = exact.round();
    // 0.1·30 is 3.0000000000000004 in binary; treat that as the integer 3.
    if (exact - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        Ok(nearest as u64)
    } else {
        Ok(exact.ceil() as u64)
    }
}

/// Averages every checkpoint from `⌈fraction·T⌉` through `T`. Needs no
/// validation data.
pub fn select_wakd<S: CheckpointStore + ?Sized>(
    store: &S,
    total_iterations: u64,
    fraction: f64,
) -> Result<(Segment, ParamVector)> {
    let segment = Segment::new(tail_start(total_iterations, fraction)?, total_iterations)?;
    let params = average_segment(store, segment)?;
    Ok((segment, params))
}

/// Sidecar written next to an averaged-model checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AveragedRecord {
    pub strategy: String,
    pub segment_start: u64,
    pub segment_end: u64,
}

pub fn sidecar_path(checkpoint_path: &Path) -> PathBuf {
    checkpoint_path.with_extension("json")
}

/// Writes an averaged model with the reserved iteration value plus its JSON
/// sidecar (`<path>` with a `.json` extension).
pub fn write_averaged(path: &Path, params: &ParamVector, record: &AveragedRecord) -> Result<()> {
    write_checkpoint_file(path, &Checkpoint::new(AVERAGED_ITERATION, params.clone()))?;
    let sidecar = sidecar_path(path);
    let mut json = serde_json::to_string_pretty(record).expect("sidecar serializes");
    json.push('\n');
    fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))
}
