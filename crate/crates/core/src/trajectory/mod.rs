//! Persistence of training trajectories: per-iteration checkpoints and the
//! validation log. Selection strategies read these back after training.
//!
//! On-disk layout of a run:
//!
//! ```text
//! <run>/ckpt/<iteration>.wakd   one checkpoint per stored iteration
//! <run>/ckpt/manifest.txt       `<iteration> <file name>` lines, append-only
//! <run>/trajectory.csv          iteration,val_loss,val_accuracy
//! ```

pub mod format;
mod log;

pub use log::{format_sig9, EvalRecord, TrajectoryLog, TRAJECTORY_HEADER};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::ParamVector;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CHECKPOINT_EXT: &str = "wakd";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub params: ParamVector,
}

impl Checkpoint {
    pub fn new(iteration: u64, params: ParamVector) -> Self {
        Checkpoint { iteration, params }
    }
}

/// A single trajectory's checkpoints, keyed by strictly increasing iteration.
pub trait CheckpointStore {
    /// Stored iterations in ascending order.
    fn iterations(&self) -> Vec<u64>;

    fn read(&self, iteration: u64) -> Result<Checkpoint>;

    fn write(&mut self, checkpoint: &Checkpoint) -> Result<()>;

    fn last_iteration(&self) -> Option<u64> {
        self.iterations().last().copied()
    }
}

fn check_append(last: Option<u64>, iteration: u64, present: bool) -> Result<()> {
    if present {
        return Err(Error::Conflict(iteration));
    }
    match last {
        Some(last) if iteration < last => Err(Error::Domain(format!(
            "checkpoint iterations must increase: {iteration} after {last}"
        ))),
        _ => Ok(()),
    }
}

/// In-memory store, used for trajectories that never need to leave the process.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    checkpoints: BTreeMap<u64, ParamVector>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }
}

impl CheckpointStore for MemoryStore {
    fn iterations(&self) -> Vec<u64> {
        self.checkpoints.keys().copied().collect()
    }

    fn read(&self, iteration: u64) -> Result<Checkpoint> {
        self.checkpoints
            .get(&iteration)
            .map(|p| Checkpoint::new(iteration, p.clone()))
            .ok_or(Error::NotFound(iteration))
    }

    fn write(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        check_append(
            self.checkpoints.keys().next_back().copied(),
            checkpoint.iteration,
            self.checkpoints.contains_key(&checkpoint.iteration),
        )?;
        self.checkpoints
            .insert(checkpoint.iteration, checkpoint.params.clone());
        Ok(())
    }
}

/// Directory of `.wakd` files plus an append-only manifest.
///
/// Each checkpoint is written to a temporary file and renamed into place
/// before its manifest line is appended, so a reader that trusts the
/// manifest never sees a partial file.
#[derive(Debug)]
pub struct DirStore {
    dir: PathBuf,
    manifest: Vec<(u64, String)>,
}

impl DirStore {
    /// Creates an empty store, failing if `dir` already holds a manifest.
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&manifest_path)
            .map_err(|e| Error::io(&manifest_path, e))?;
        Ok(DirStore {
            dir,
            manifest: Vec::new(),
        })
    }

    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let mut manifest: Vec<(u64, String)> = Vec::new();
        // A trailing line without a newline is an interrupted append.
        let complete = match text.rfind('\n') {
            Some(end) => &text[..end],
            None => "",
        };
        for (n, line) in complete.lines().enumerate() {
            let bad = |detail: String| Error::Format {
                what: "checkpoint manifest",
                field: "entry",
                detail: format!("{}: line {}: {detail}", manifest_path.display(), n + 1),
            };
            let (it, name) = line
                .split_once(' ')
                .ok_or_else(|| bad(format!("expected `<iteration> <file>`, got {line:?}")))?;
            let it: u64 = it.parse().map_err(|e| bad(format!("{e}")))?;
            if let Some(&(last, _)) = manifest.last() {
                if it <= last {
                    return Err(bad(format!("iteration {it} after {last}")));
                }
            }
            manifest.push((it, name.to_string()));
        }
        Ok(DirStore { dir, manifest })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &[(u64, String)] {
        &self.manifest
    }

    fn lookup(&self, iteration: u64) -> Option<&str> {
        self.manifest
            .binary_search_by_key(&iteration, |(it, _)| *it)
            .ok()
            .map(|i| self.manifest[i].1.as_str())
    }
}

impl CheckpointStore for DirStore {
    fn iterations(&self) -> Vec<u64> {
        self.manifest.iter().map(|(it, _)| *it).collect()
    }

    fn read(&self, iteration: u64) -> Result<Checkpoint> {
        let name = self.lookup(iteration).ok_or(Error::NotFound(iteration))?;
        let checkpoint = read_checkpoint_file(&self.dir.join(name))?;
        if checkpoint.iteration != iteration {
            return Err(Error::Format {
                what: "checkpoint",
                field: "iteration",
                detail: format!(
                    "{name} holds iteration {}, manifest says {iteration}",
                    checkpoint.iteration
                ),
            });
        }
        Ok(checkpoint)
    }

    fn write(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        let it = checkpoint.iteration;
        check_append(
            self.manifest.last().map(|(last, _)| *last),
            it,
            self.lookup(it).is_some(),
        )?;
        let name = format!("{it}.{CHECKPOINT_EXT}");
        write_checkpoint_file(&self.dir.join(&name), checkpoint)?;
        let manifest_path = self.dir.join(MANIFEST_FILE);
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&manifest_path)
            .map_err(|e| Error::io(&manifest_path, e))?;
        f.write_all(format!("{it} {name}\n").as_bytes())
            .map_err(|e| Error::io(&manifest_path, e))?;
        self.manifest.push((it, name));
        Ok(())
    }
}

/// Writes `checkpoint` via a temporary sibling file and an atomic rename.
pub fn write_checkpoint_file(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, format::encode(checkpoint)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint_file(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    format::decode(&bytes).map_err(|e| match e {
        Error::Format { what, field, detail } => Error::Format {
            what,
            field,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    })
}

/// Lazily yields the checkpoints with `from ≤ iteration ≤ to` in ascending
/// order, loading one at a time.
pub fn stream_checkpoints<S: CheckpointStore + ?Sized>(
    store: &S,
    from: u64,
    to: u64,
) -> Result<impl Iterator<Item = Result<Checkpoint>> + '_> {
    if from > to {
        return Err(Error::Domain(format!("empty iteration range {from}..={to}")));
    }
    let wanted: Vec<u64> = store
        .iterations()
        .into_iter()
        .filter(|it| (from..=to).contains(it))
        .collect();
    Ok(wanted.into_iter().map(move |it| store.read(it)))
}
