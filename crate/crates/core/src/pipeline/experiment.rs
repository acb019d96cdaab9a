use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use super::config::{ExperimentConfig, Strategy};
use super::report::{aggregate, results_to_csv};
use super::train::{evaluate, train_model, Objective, TrainSettings};
use crate::averaging::{
    average_segment, select_erm, select_sma, select_swad_segment, select_wakd, write_averaged,
    AveragedRecord, Segment,
};
use crate::data::{generate, DomainDataset, Split, SplitPlan};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, ArchSpec, Matrix, ParamVector};
use crate::seed;
use crate::trajectory::{CheckpointStore, DirStore, MemoryStore, TrajectoryLog};

/// Row label of the SWAD-averaged teacher.
pub const TEACHER_LABEL: &str = "teacher-swad";
/// Row label of the student trained on hard labels without a teacher.
pub const BASELINE_LABEL: &str = "student-swad";

const STREAM_TEACHER: u64 = 1;
const STREAM_STUDENT: u64 = 2;

/// One evaluated model of one (target, seed) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub strategy: String,
    pub target_domain: String,
    pub seed: u64,
    pub target_acc: f64,
    pub val_acc: f64,
    pub segment_start: u64,
    pub segment_end: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub stage: String,
    pub target_domain: String,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellOutcome {
    pub results: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunResults {
    pub results: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
}

pub fn cell_dir_name(target_name: &str, seed: u64) -> String {
    format!("{target_name}_seed{seed}")
}

struct EvalSets {
    val_inputs: Matrix,
    val_labels: Vec<usize>,
    target_inputs: Matrix,
    target_labels: Vec<usize>,
}

impl EvalSets {
    fn score(&self, arch: &ArchSpec, params: &ParamVector) -> Result<(f64, f64)> {
        let target = evaluate(arch, params, &self.target_inputs, &self.target_labels)?;
        let val = evaluate(arch, params, &self.val_inputs, &self.val_labels)?;
        Ok((target.accuracy, val.accuracy))
    }
}

fn settings(config: &ExperimentConfig, iterations: u64) -> TrainSettings {
    TrainSettings {
        iterations,
        eval_every: config.eval_every,
        batch_size: config.batch_size,
        adam: AdamConfig::with_learning_rate(config.learning_rate),
        checkpoint_every: config.checkpoint_every,
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Runs one (target, seed) cell: teacher → SWAD teacher → hard-label
/// baseline student → distilled student → every requested strategy on the
/// one distilled trajectory → target-domain scores.
///
/// With `cell_dir`, the distilled student's checkpoints, all validation logs,
/// the student's source-val split and every selected model are written
/// there. Teacher and baseline checkpoints stay in memory.
pub fn run_cell(
    config: &ExperimentConfig,
    dataset: &DomainDataset,
    target: usize,
    run_seed: u64,
    cell_dir: Option<&Path>,
) -> CellOutcome {
    let target_name = dataset.domains[target].name.clone();
    let mut outcome = CellOutcome::default();
    let fail = |outcome: &mut CellOutcome, stage: &str, e: Error| {
        warn!("{target_name} seed {run_seed}: {stage} failed: {e}");
        outcome.failures.push(CellFailure {
            stage: stage.to_string(),
            target_domain: target_name.clone(),
            seed: run_seed,
            message: e.to_string(),
        });
    };

    let plan = match SplitPlan::new(dataset, target, run_seed) {
        Ok(p) => p,
        Err(e) => {
            fail(&mut outcome, "split", e);
            return outcome;
        }
    };
    let (val_inputs, val_labels) = dataset.gather(&plan.refs(Split::Val));
    let (target_inputs, target_labels) = dataset.gather(&dataset.domain_refs(target));
    let sets = EvalSets {
        val_inputs,
        val_labels,
        target_inputs,
        target_labels,
    };
    let result = |strategy: &str, (target_acc, val_acc): (f64, f64), segment: Segment| CellResult {
        strategy: strategy.to_string(),
        target_domain: dataset.domains[target].name.clone(),
        seed: run_seed,
        target_acc,
        val_acc,
        segment_start: segment.start_iteration,
        segment_end: segment.end_iteration,
    };
    let averaged_dir = cell_dir.map(|d| d.join("averaged"));
    // The sidecar names the selection rule; the file name names the model.
    let save = |label: &str, rule: Strategy, params: &ParamVector, segment: Segment| -> Result<()> {
        if let Some(dir) = &averaged_dir {
            write_averaged(
                &dir.join(format!("{label}.wakd")),
                params,
                &AveragedRecord {
                    strategy: rule.name().to_string(),
                    segment_start: segment.start_iteration,
                    segment_end: segment.end_iteration,
                },
            )?;
        }
        Ok(())
    };
    let save_log = |sub: &str, log: &TrajectoryLog| -> Result<()> {
        if let Some(dir) = cell_dir {
            create_dir(&dir.join(sub))?;
            log.write_csv(&dir.join(sub).join("trajectory.csv"))?;
        }
        Ok(())
    };
    if let Some(dir) = &averaged_dir {
        if let Err(e) = create_dir(dir) {
            fail(&mut outcome, "output", e);
            return outcome;
        }
    }

    // Teacher: hard labels, SWAD-averaged.
    let teacher_seed = seed::derive(run_seed, &[target as u64, STREAM_TEACHER]);
    let teacher = (|| -> Result<(Segment, ParamVector)> {
        let mut store = MemoryStore::new();
        let log = train_model(
            &config.teacher_arch,
            Objective::HardLabel,
            dataset,
            &plan,
            &settings(config, config.teacher_iterations),
            teacher_seed,
            &mut store,
        )?;
        save_log("teacher", &log)?;
        let segment = select_swad_segment(&log, &config.swad)?;
        let params = average_segment(&store, segment)?;
        save(TEACHER_LABEL, Strategy::Swad, &params, segment)?;
        Ok((segment, params))
    })();
    let (teacher_segment, teacher_params) = match teacher {
        Ok(t) => t,
        Err(e) => {
            fail(&mut outcome, TEACHER_LABEL, e);
            return outcome;
        }
    };
    match sets.score(&config.teacher_arch, &teacher_params) {
        Ok(scores) => outcome.results.push(result(TEACHER_LABEL, scores, teacher_segment)),
        Err(e) => fail(&mut outcome, TEACHER_LABEL, e),
    }

    // Both students start from the same initialization and batch order.
    let student_seed = seed::derive(run_seed, &[target as u64, STREAM_STUDENT]);
    let baseline = (|| -> Result<CellResult> {
        let mut store = MemoryStore::new();
        let log = train_model(
            &config.student_arch,
            Objective::HardLabel,
            dataset,
            &plan,
            &settings(config, config.teacher_iterations),
            student_seed,
            &mut store,
        )?;
        save_log("baseline", &log)?;
        let segment = select_swad_segment(&log, &config.swad)?;
        let params = average_segment(&store, segment)?;
        save(BASELINE_LABEL, Strategy::Swad, &params, segment)?;
        Ok(result(BASELINE_LABEL, sets.score(&config.student_arch, &params)?, segment))
    })();
    match baseline {
        Ok(r) => outcome.results.push(r),
        Err(e) => fail(&mut outcome, BASELINE_LABEL, e),
    }

    // Distilled student. Its trajectory is shared by every strategy.
    let mut store: Box<dyn CheckpointStore> = match cell_dir {
        Some(dir) => {
            let student_dir = dir.join("student");
            let setup = (|| -> Result<Box<dyn CheckpointStore>> {
                create_dir(&student_dir)?;
                write_json(&student_dir.join("arch.json"), &config.student_arch)?;
                let csv = dataset.subset_csv(&plan.refs(Split::Val));
                let path = student_dir.join("val.csv");
                fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
                Ok(Box::new(DirStore::create(student_dir.join("ckpt"))?))
            })();
            match setup {
                Ok(s) => s,
                Err(e) => {
                    fail(&mut outcome, "student", e);
                    return outcome;
                }
            }
        }
        None => Box::new(MemoryStore::new()),
    };
    let student_log = train_model(
        &config.student_arch,
        Objective::Distill {
            teacher_arch: &config.teacher_arch,
            teacher: &teacher_params,
            tau: config.tau,
        },
        dataset,
        &plan,
        &settings(config, config.distill_iterations),
        student_seed,
        store.as_mut(),
    )
    .and_then(|log| save_log("student", &log).map(|_| log));
    let student_log = match student_log {
        Ok(log) => log,
        Err(e) => {
            fail(&mut outcome, "student", e);
            return outcome;
        }
    };
    let store = store.as_ref();
    let total = config.distill_iterations;

    for &strategy in &config.strategies {
        let label = strategy.result_label();
        let selected = (|| -> Result<(Segment, ParamVector)> {
            match strategy {
                Strategy::Erm => {
                    let it = select_erm(&student_log)?;
                    Ok((Segment::single(it), store.read(it)?.params))
                }
                Strategy::Swad => {
                    let segment = select_swad_segment(&student_log, &config.swad)?;
                    Ok((segment, average_segment(store, segment)?))
                }
                Strategy::Sma => {
                    let start = crate::averaging::tail_start(total, config.start_fraction)?;
                    let sel = select_sma(store, &student_log, start, |p| {
                        Ok(evaluate(&config.student_arch, p, &sets.val_inputs, &sets.val_labels)?.accuracy)
                    })?;
                    Ok((sel.segment, sel.params))
                }
                Strategy::Wakd => select_wakd(store, total, config.start_fraction),
            }
        })()
        .and_then(|(segment, params)| {
            save(label, strategy, &params, segment)?;
            Ok(result(label, sets.score(&config.student_arch, &params)?, segment))
        });
        match selected {
            Ok(r) => outcome.results.push(r),
            Err(e) => fail(&mut outcome, label, e),
        }
    }
    outcome
}

/// Runs every (target, seed) cell and, when `output_dir` is set, writes
/// `config.json`, `results.csv`, `summary.csv`, `failures.csv` (only when
/// something failed) and one directory per cell under `runs/`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResults> {
    config.validate()?;
    let dataset = generate(&config.generator)?;
    let out = config.output_dir.clone();
    if let Some(out) = &out {
        create_dir(&out.join("runs"))?;
        let path = out.join("config.json");
        fs::write(&path, config.to_canonical_json()).map_err(|e| Error::io(&path, e))?;
    }

    let cells: Vec<(usize, u64)> = config
        .target_ids()
        .into_iter()
        .flat_map(|t| config.seeds.iter().map(move |&s| (t, s)))
        .collect();
    let run = |&(target, seed): &(usize, u64)| -> CellOutcome {
        let name = &dataset.domains[target].name;
        info!("cell {name} seed {seed}: start");
        let dir: Option<PathBuf> = out.as_ref().map(|o| o.join("runs").join(cell_dir_name(name, seed)));
        if let Some(dir) = &dir {
            if dir.exists() {
                if let Err(e) = fs::remove_dir_all(dir) {
                    return CellOutcome {
                        results: Vec::new(),
                        failures: vec![CellFailure {
                            stage: "output".into(),
                            target_domain: name.clone(),
                            seed,
                            message: Error::io(dir, e).to_string(),
                        }],
                    };
                }
            }
        }
        let outcome = run_cell(config, &dataset, target, seed, dir.as_deref());
        info!("cell {name} seed {seed}: done");
        outcome
    };
    let outcomes: Vec<CellOutcome> = if config.parallel_cells {
        cells.par_iter().map(run).collect()
    } else {
        cells.iter().map(run).collect()
    };

    let mut results = RunResults::default();
    for o in outcomes {
        results.results.extend(o.results);
        results.failures.extend(o.failures);
    }

    if let Some(out) = &out {
        let path = out.join("results.csv");
        fs::write(&path, results_to_csv(&results.results)).map_err(|e| Error::io(&path, e))?;
        if !results.results.is_empty() {
            let path = out.join("summary.csv");
            fs::write(&path, aggregate(&results.results)?.to_csv()).map_err(|e| Error::io(&path, e))?;
        }
        let path = out.join("failures.csv");
        if results.failures.is_empty() {
            if path.exists() {
                fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
        } else {
            let mut csv = String::from("stage,target_domain,seed,message\n");
            for f in &results.failures {
                csv.push_str(&format!(
                    "{},{},{},\"{}\"\n",
                    f.stage,
                    f.target_domain,
                    f.seed,
                    f.message.replace('"', "'")
                ));
            }
            fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(results)
}
