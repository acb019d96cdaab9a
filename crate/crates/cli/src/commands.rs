use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use log::warn;

use wakd_core::averaging::{
    average_segment, select_erm, select_sma, select_swad_segment, select_wakd, tail_start,
    write_averaged, AveragedRecord, Segment, SwadConfig, DEFAULT_START_FRACTION,
};
use wakd_core::data::{generate, read_examples_csv, GeneratorSpec};
use wakd_core::nn::{ArchSpec, ParamVector};
use wakd_core::pipeline::{aggregate, evaluate, read_results_csv, run_experiment, ExperimentConfig, Strategy};
use wakd_core::trajectory::{CheckpointStore, DirStore, TrajectoryLog};

const EXIT_PARTIAL: u8 = 2;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid {what} {}", path.display()))
}

pub fn run(
    config: Option<&Path>,
    out: Option<PathBuf>,
    seeds: Option<Vec<u64>>,
    parallel_cells: bool,
) -> Result<ExitCode> {
    let mut cfg: ExperimentConfig = match config {
        Some(path) => read_json(path, "config")?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = out {
        cfg.output_dir = Some(out);
    }
    if let Some(seeds) = seeds {
        cfg.seeds = seeds;
    }
    cfg.parallel_cells |= parallel_cells;
    let Some(out) = cfg.output_dir.clone() else {
        bail!("no output directory: pass --out or set output_dir in the config");
    };
    cfg.validate()?;

    let results = run_experiment(&cfg)?;
    if !results.results.is_empty() {
        print!("{}", aggregate(&results.results)?.to_table());
    }
    println!("results written to {}", out.join("results.csv").display());
    if results.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &results.failures {
            eprintln!("failed: {} (target {}, seed {}): {}", f.stage, f.target_domain, f.seed, f.message);
        }
        Ok(ExitCode::from(EXIT_PARTIAL))
    }
}

pub struct AverageArgs {
    pub ckpt_dir: PathBuf,
    pub strategy: String,
    pub trajectory: Option<PathBuf>,
    pub out: PathBuf,
    pub start_frac: Option<f64>,
    pub swad: Option<String>,
    pub total_iterations: Option<u64>,
    pub val_data: Option<PathBuf>,
    pub arch: Option<PathBuf>,
}

fn parse_swad(text: &str) -> Result<SwadConfig> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let [n_s, n_e, r] = parts[..] else {
        bail!("--swad expects `n_s,n_e,r`, got {text:?}");
    };
    let cfg = SwadConfig {
        n_s: n_s.parse().context("--swad n_s")?,
        n_e: n_e.parse().context("--swad n_e")?,
        r: r.parse().context("--swad r")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn average(args: AverageArgs) -> Result<ExitCode> {
    let strategy = Strategy::parse(&args.strategy)?;
    let store = DirStore::open(&args.ckpt_dir)?;
    let total = match args.total_iterations.or(store.last_iteration()) {
        Some(t) => t,
        None => bail!("no checkpoints in {}", args.ckpt_dir.display()),
    };
    let fraction = args.start_frac.unwrap_or(DEFAULT_START_FRACTION);
    let log = || -> Result<TrajectoryLog> {
        let path = args
            .trajectory
            .as_deref()
            .with_context(|| format!("--strategy {strategy} needs --trajectory"))?;
        Ok(TrajectoryLog::read_csv(path)?)
    };
    if args.swad.is_some() && strategy != Strategy::Swad {
        bail!("--swad only applies to --strategy swad");
    }

    let (segment, params): (Segment, ParamVector) = match strategy {
        Strategy::Erm => {
            let it = select_erm(&log()?)?;
            (Segment::single(it), store.read(it)?.params)
        }
        Strategy::Swad => {
            let cfg = args.swad.as_deref().map(parse_swad).transpose()?.unwrap_or_default();
            let segment = select_swad_segment(&log()?, &cfg)?;
            (segment, average_segment(&store, segment)?)
        }
        Strategy::Sma => {
            let log = log()?;
            let arch_path = args.arch.as_deref().context("--strategy sma needs --arch")?;
            let arch: ArchSpec = read_json(arch_path, "architecture")?;
            let val_path = args.val_data.as_deref().context("--strategy sma needs --val-data")?;
            let (inputs, labels) = read_examples_csv(val_path)?;
            let start = tail_start(total, fraction)?;
            let sel = select_sma(&store, &log, start, |p| Ok(evaluate(&arch, p, &inputs, &labels)?.accuracy))?;
            (sel.segment, sel.params)
        }
        Strategy::Wakd => {
            if args.trajectory.is_some() {
                warn!("--trajectory is ignored by wakd");
            }
            select_wakd(&store, total, fraction)?
        }
    };

    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_averaged(
        &args.out,
        &params,
        &AveragedRecord {
            strategy: strategy.name().to_string(),
            segment_start: segment.start_iteration,
            segment_end: segment.end_iteration,
        },
    )?;
    println!(
        "segment_start={} segment_end={}",
        segment.start_iteration, segment.end_iteration
    );
    Ok(ExitCode::SUCCESS)
}

pub fn report(files: &[PathBuf], summary_path: &Path) -> Result<ExitCode> {
    let mut results = Vec::new();
    for f in files {
        results.extend(read_results_csv(f)?);
    }
    let summary = aggregate(&results)?;
    print!("{}", summary.to_table());
    fs::write(summary_path, summary.to_csv()).with_context(|| format!("writing {}", summary_path.display()))?;
    Ok(ExitCode::SUCCESS)
}

pub fn generate_data(spec: Option<&Path>, out: &Path) -> Result<ExitCode> {
    let spec: GeneratorSpec = match spec {
        Some(path) => read_json(path, "generator spec")?,
        None => GeneratorSpec::default(),
    };
    let dataset = generate(&spec)?;
    dataset.write_csv(out, Some(&spec))?;
    println!(
        "{} domains × {} examples written to {}",
        dataset.domains.len(),
        spec.samples_per_domain,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}
