//! Synthetic multi-domain classification data.
//!
//! Every domain shares the label set but draws inputs from its own joint
//! distribution. In the `rotated-blobs` family class `c` is a Gaussian blob
//! centred at `2·(cos 2πc/C, sin 2πc/C)` and a domain rotates every sample by
//! its angle about the origin; `scaled-blobs` stretches each axis instead.
//! One domain is held out as the target and never reaches training or model
//! selection.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::seed;

const BLOB_RADIUS: f64 = 2.0;
const TRAIN_FRACTION_NUM: usize = 4;
const TRAIN_FRACTION_DEN: usize = 5;

const STREAM_GENERATE: u64 = 0x6461_7461;
const STREAM_SPLIT: u64 = 0x7370_6c74;
const STREAM_EPOCH: u64 = 0x6570_6f63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    RotatedBlobs,
    ScaledBlobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub family: Family,
    pub num_classes: usize,
    pub samples_per_domain: usize,
    /// One rotation per domain (`rotated-blobs`).
    pub angles_deg: Vec<f64>,
    /// One `(x, y)` scale per domain (`scaled-blobs`).
    pub scales: Vec<[f64; 2]>,
    pub noise: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            family: Family::RotatedBlobs,
            num_classes: 3,
            samples_per_domain: 500,
            angles_deg: vec![0.0, 15.0, 30.0, 45.0],
            scales: Vec::new(),
            noise: 0.8,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn num_domains(&self) -> usize {
        match self.family {
            Family::RotatedBlobs => self.angles_deg.len(),
            Family::ScaledBlobs => self.scales.len(),
        }
    }

    pub fn domain_name(&self, id: usize) -> String {
        match self.family {
            Family::RotatedBlobs => format!("rot{}", self.angles_deg[id]),
            Family::ScaledBlobs => format!("scale{}x{}", self.scales[id][0], self.scales[id][1]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return err(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.samples_per_domain < self.num_classes {
            return err(format!(
                "samples_per_domain ({}) must be at least num_classes ({})",
                self.samples_per_domain, self.num_classes
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return err(format!("noise must be a finite non-negative number, got {}", self.noise));
        }
        let (used, unused) = match self.family {
            Family::RotatedBlobs => ("angles_deg", self.scales.len()),
            Family::ScaledBlobs => ("scales", self.angles_deg.len()),
        };
        if unused != 0 {
            return err(format!("family {:?} takes its domains from `{used}` only", self.family));
        }
        if self.num_domains() == 0 {
            return err(format!("`{used}` must list at least one domain"));
        }
        let params: Vec<[f64; 2]> = match self.family {
            Family::RotatedBlobs => self.angles_deg.iter().map(|&a| [a, 0.0]).collect(),
            Family::ScaledBlobs => self.scales.clone(),
        };
        if params.iter().flatten().any(|v| !v.is_finite()) {
            return err(format!("`{used}` must be finite"));
        }
        for (i, a) in params.iter().enumerate() {
            if params[..i].contains(a) {
                return err(format!("domains must have distinct parameters, {a:?} repeats"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub id: usize,
    pub name: String,
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Domain {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Identifies one example by its domain and position within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExampleRef {
    pub domain: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub input_dim: usize,
    pub num_classes: usize,
    pub domains: Vec<Domain>,
}

impl DomainDataset {
    pub fn validate(&self) -> Result<()> {
        for (i, d) in self.domains.iter().enumerate() {
            if d.id != i {
                return Err(Error::Config(format!("domain at position {i} has id {}", d.id)));
            }
            if d.is_empty() {
                return Err(Error::Config(format!("domain {} is empty", d.name)));
            }
            if d.features.cols() != self.input_dim || d.features.rows() != d.len() {
                return Err(Error::Config(format!("domain {} has inconsistent shape", d.name)));
            }
            for c in 0..self.num_classes {
                if !d.labels.contains(&c) {
                    return Err(Error::Config(format!("class {c} missing from domain {}", d.name)));
                }
            }
            if let Some(&bad) = d.labels.iter().find(|&&l| l >= self.num_classes) {
                return Err(Error::Config(format!("label {bad} in domain {} out of range", d.name)));
            }
        }
        Ok(())
    }

    /// Inputs and labels for the given examples, in order.
    pub fn gather(&self, refs: &[ExampleRef]) -> (Matrix, Vec<usize>) {
        let mut data = Vec::with_capacity(refs.len() * self.input_dim);
        let mut labels = Vec::with_capacity(refs.len());
        for r in refs {
            let d = &self.domains[r.domain];
            data.extend_from_slice(d.features.row(r.index));
            labels.push(d.labels[r.index]);
        }
        let m = Matrix::new(refs.len(), self.input_dim, data).expect("consistent shape");
        (m, labels)
    }

    pub fn domain_refs(&self, domain: usize) -> Vec<ExampleRef> {
        (0..self.domains[domain].len())
            .map(|index| ExampleRef { domain, index })
            .collect()
    }

    fn csv_header(&self) -> String {
        let mut out = String::from("domain_id,label");
        for f in 0..self.input_dim {
            write!(out, ",f{f}").unwrap();
        }
        out.push('\n');
        out
    }

    fn push_csv_row(&self, out: &mut String, r: ExampleRef) {
        let d = &self.domains[r.domain];
        write!(out, "{},{}", d.id, d.labels[r.index]).unwrap();
        for v in d.features.row(r.index) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        for d in &self.domains {
            for r in self.domain_refs(d.id) {
                self.push_csv_row(&mut out, r);
            }
        }
        out
    }

    /// The given examples in the CSV export format, in order.
    pub fn subset_csv(&self, refs: &[ExampleRef]) -> String {
        let mut out = self.csv_header();
        for &r in refs {
            self.push_csv_row(&mut out, r);
        }
        out
    }

    /// Parses the `domain_id,label,f0,…` export. Domain ids must be
    /// `0..K` with each domain present; names fall back to `d<id>`.
    pub fn from_csv(text: &str, num_classes: Option<usize>) -> Result<Self> {
        let bad = |field: &'static str, detail: String| Error::Format {
            what: "dataset csv",
            field,
            detail,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("header", "empty file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let input_dim = cols.len().saturating_sub(2);
        let expected: Vec<String> = ["domain_id".to_string(), "label".to_string()]
            .into_iter()
            .chain((0..input_dim).map(|f| format!("f{f}")))
            .collect();
        if input_dim == 0 || cols != expected {
            return Err(bad("header", format!("expected domain_id,label,f0,..., got {header:?}")));
        }
        let mut by_domain: BTreeMap<usize, (Vec<f64>, Vec<usize>)> = BTreeMap::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != input_dim + 2 {
                return Err(bad("row", format!("line {}: expected {} columns", n + 2, input_dim + 2)));
            }
            let domain: usize = fields[0]
                .parse()
                .map_err(|e| bad("domain_id", format!("line {}: {e}", n + 2)))?;
            let label: usize = fields[1]
                .parse()
                .map_err(|e| bad("label", format!("line {}: {e}", n + 2)))?;
            let entry = by_domain.entry(domain).or_default();
            for f in &fields[2..] {
                entry
                    .0
                    .push(f.parse().map_err(|e| bad("feature", format!("line {}: {e}", n + 2)))?);
            }
            entry.1.push(label);
        }
        let num_classes = num_classes.unwrap_or_else(|| {
            by_domain
                .values()
                .flat_map(|(_, l)| l.iter())
                .max()
                .map_or(0, |m| m + 1)
        });
        let domains = by_domain
            .into_iter()
            .map(|(id, (data, labels))| {
                Ok(Domain {
                    id,
                    name: format!("d{id}"),
                    features: Matrix::new(labels.len(), input_dim, data)?,
                    labels,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = DomainDataset {
            input_dim,
            num_classes,
            domains,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Writes the CSV export and, when given, the generator spec as a
    /// `.json` sidecar next to it.
    pub fn write_csv(&self, path: &Path, spec: Option<&GeneratorSpec>) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))?;
        if let Some(spec) = spec {
            let sidecar = path.with_extension("json");
            let json = serde_json::to_string_pretty(spec).expect("spec serializes") + "\n";
            fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))?;
        }
        Ok(())
    }

    /// Reads a CSV export, taking class count and domain names from the
    /// `.json` sidecar when one exists.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sidecar = path.with_extension("json");
        let spec: Option<GeneratorSpec> = if sidecar.exists() {
            let json = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
            Some(serde_json::from_str(&json).map_err(|source| Error::Json {
                path: sidecar.clone(),
                source,
            })?)
        } else {
            None
        };
        let mut ds = Self::from_csv(&text, spec.as_ref().map(|s| s.num_classes))?;
        if let Some(spec) = spec.filter(|s| s.num_domains() == ds.domains.len()) {
            for d in &mut ds.domains {
                d.name = spec.domain_name(d.id);
            }
        }
        Ok(ds)
    }
}

/// Reads any file in the CSV export format as one flat labeled example set,
/// ignoring domain grouping.
pub fn read_examples_csv(path: &Path) -> Result<(Matrix, Vec<usize>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |field: &'static str, detail: String| Error::Format {
        what: "dataset csv",
        field,
        detail: format!("{}: {detail}", path.display()),
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("header", "empty file".into()))?;
    let width = header.split(',').count();
    if width < 3 || !header.starts_with("domain_id,label,f0") {
        return Err(bad("header", format!("expected domain_id,label,f0,..., got {header:?}")));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(bad("row", format!("line {}: expected {width} columns", n + 2)));
        }
        labels.push(fields[1].parse().map_err(|e| bad("label", format!("line {}: {e}", n + 2)))?);
        for f in &fields[2..] {
            data.push(f.parse().map_err(|e| bad("feature", format!("line {}: {e}", n + 2)))?);
        }
    }
    let m = Matrix::new(labels.len(), width - 2, data)?;
    Ok((m, labels))
}

pub fn generate(spec: &GeneratorSpec) -> Result<DomainDataset> {
    spec.validate()?;
    let c = spec.num_classes;
    let domains = (0..spec.num_domains())
        .map(|id| {
            let mut rng = seed::rng(spec.seed, &[STREAM_GENERATE, id as u64]);
            let mut data = Vec::with_capacity(2 * spec.samples_per_domain);
            let mut labels = Vec::with_capacity(spec.samples_per_domain);
            for i in 0..spec.samples_per_domain {
                let label = i % c;
                let phase = std::f64::consts::TAU * label as f64 / c as f64;
                let nx: f64 = StandardNormal.sample(&mut rng);
                let ny: f64 = StandardNormal.sample(&mut rng);
                let base = [
                    BLOB_RADIUS * phase.cos() + spec.noise * nx,
                    BLOB_RADIUS * phase.sin() + spec.noise * ny,
                ];
                data.extend_from_slice(&shift_point(spec, id, base));
                labels.push(label);
            }
            Ok(Domain {
                id,
                name: spec.domain_name(id),
                features: Matrix::new(labels.len(), 2, data)?,
                labels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DomainDataset {
        input_dim: 2,
        num_classes: c,
        domains,
    })
}

/// Applies domain `id`'s transformation to a base-distribution draw.
pub fn shift_point(spec: &GeneratorSpec, id: usize, [x, y]: [f64; 2]) -> [f64; 2] {
    match spec.family {
        Family::RotatedBlobs => {
            let (sin, cos) = spec.angles_deg[id].to_radians().sin_cos();
            [cos * x - sin * y, sin * x + cos * y]
        }
        Family::ScaledBlobs => [spec.scales[id][0] * x, spec.scales[id][1] * y],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainIndices {
    pub domain: usize,
    pub indices: Vec<usize>,
}

/// Train/validation indices for every source domain, with one target held out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub target: usize,
    pub seed: u64,
    pub train: Vec<DomainIndices>,
    pub val: Vec<DomainIndices>,
}

impl SplitPlan {
    pub fn new(dataset: &DomainDataset, target: usize, seed: u64) -> Result<Self> {
        if dataset.domains.len() < 2 {
            return Err(Error::Config(format!(
                "leave-one-domain-out needs at least 2 domains, got {}",
                dataset.domains.len()
            )));
        }
        if target >= dataset.domains.len() {
            return Err(Error::Config(format!("target domain {target} does not exist")));
        }
        let mut train = Vec::new();
        let mut val = Vec::new();
        for d in dataset.domains.iter().filter(|d| d.id != target) {
            let mut idx: Vec<usize> = (0..d.len()).collect();
            idx.shuffle(&mut seed::rng(seed, &[STREAM_SPLIT, d.id as u64]));
            let n_train = train_count(d.len());
            let val_idx = idx.split_off(n_train);
            train.push(DomainIndices { domain: d.id, indices: idx });
            val.push(DomainIndices { domain: d.id, indices: val_idx });
        }
        Ok(SplitPlan { target, seed, train, val })
    }

    /// Source examples of one split, pooled in domain order.
    pub fn refs(&self, split: Split) -> Vec<ExampleRef> {
        let parts = match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        };
        parts
            .iter()
            .flat_map(|p| p.indices.iter().map(|&index| ExampleRef { domain: p.domain, index }))
            .collect()
    }
}

/// `round(0.8·n)`.
pub fn train_count(n: usize) -> usize {
    (TRAIN_FRACTION_NUM * 2 * n + TRAIN_FRACTION_DEN) / (2 * TRAIN_FRACTION_DEN)
}

/// One plan per domain, each domain taking a turn as target.
pub fn leave_one_out_splits(dataset: &DomainDataset, seed: u64) -> Result<Vec<SplitPlan>> {
    if dataset.domains.len() < 2 {
        return Err(Error::Config(format!(
            "leave-one-domain-out needs at least 2 domains, got {}",
            dataset.domains.len()
        )));
    }
    (0..dataset.domains.len())
        .map(|t| SplitPlan::new(dataset, t, seed))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub refs: Vec<ExampleRef>,
}

/// One shuffled pass over a split; the last partial batch is kept.
pub fn batches<'a>(
    dataset: &'a DomainDataset,
    plan: &SplitPlan,
    split: Split,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<impl Iterator<Item = Batch> + 'a> {
    if batch_size == 0 {
        return Err(Error::Domain("batch size must be at least 1".into()));
    }
    let mut refs = plan.refs(split);
    if refs.is_empty() {
        return Err(Error::Domain(format!("{split:?} split is empty")));
    }
    refs.shuffle(&mut seed::rng(epoch_seed, &[STREAM_EPOCH]));
    let chunks: Vec<Vec<ExampleRef>> = refs.chunks(batch_size).map(<[_]>::to_vec).collect();
    Ok(chunks.into_iter().map(move |refs| {
        let (inputs, labels) = dataset.gather(&refs);
        Batch { inputs, labels, refs }
    }))
}

/// Endless batch sequence over the training split, reshuffled every epoch.
pub struct BatchStream<'a> {
    dataset: &'a DomainDataset,
    plan: &'a SplitPlan,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    current: Box<dyn Iterator<Item = Batch> + 'a>,
}

impl<'a> BatchStream<'a> {
    pub fn new(dataset: &'a DomainDataset, plan: &'a SplitPlan, batch_size: usize, seed: u64) -> Result<Self> {
        let current = Box::new(batches(dataset, plan, Split::Train, batch_size, seed::derive(seed, &[0]))?);
        Ok(BatchStream {
            dataset,
            plan,
            batch_size,
            seed,
            epoch: 0,
            current,
        })
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if let Some(b) = self.current.next() {
            return Some(b);
        }
        self.epoch += 1;
        let epoch_seed = seed::derive(self.seed, &[self.epoch]);
        self.current = Box::new(
            batches(self.dataset, self.plan, Split::Train, self.batch_size, epoch_seed)
                .expect("split was non-empty at construction"),
        );
        self.current.next()
    }
}
