//! Whole-cell behavior: a hand-staged replay of one cell, rerun determinism,
//! result cardinality, reuse of the single distilled trajectory, and
//! isolation of per-strategy failures.

use std::fs;
use std::path::Path;

use wakd_core::averaging::{
    average_segment, select_erm, select_sma, select_swad_segment, select_wakd, tail_start,
    Segment,
};
use wakd_core::data::{generate, read_examples_csv, GeneratorSpec, Split, SplitPlan};
use wakd_core::nn::{AdamConfig, ArchSpec, ParamVector};
use wakd_core::pipeline::{
    cell_dir_name, evaluate, run_cell, run_experiment, train_model, CellResult,
    ExperimentConfig, Objective, Strategy, TrainSettings, BASELINE_LABEL, TEACHER_LABEL,
};
use wakd_core::seed;
use wakd_core::trajectory::{
    read_checkpoint_file, CheckpointStore, DirStore, MemoryStore, TrajectoryLog,
};

fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig {
        generator: GeneratorSpec { samples_per_domain: 100, ..GeneratorSpec::default() },
        teacher_iterations: 200,
        distill_iterations: 300,
        eval_every: 20,
        learning_rate: 1e-2,
        seeds: vec![0],
        ..ExperimentConfig::default()
    };
    c.teacher_arch.hidden_dims = vec![16];
    c
}

fn settings(c: &ExperimentConfig, iterations: u64) -> TrainSettings {
    TrainSettings {
        iterations,
        eval_every: c.eval_every,
        batch_size: c.batch_size,
        adam: AdamConfig::with_learning_rate(c.learning_rate),
        checkpoint_every: c.checkpoint_every,
    }
}

#[test]
fn cell_matches_a_hand_staged_replay() {
    let config = tiny_config();
    let data = generate(&config.generator).unwrap();
    let (target, run_seed) = (1usize, 7u64);
    let tmp = tempfile::tempdir().unwrap();
    let outcome = run_cell(&config, &data, target, run_seed, Some(tmp.path()));
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);

    let plan = SplitPlan::new(&data, target, run_seed).unwrap();
    let (xv, yv) = data.gather(&plan.refs(Split::Val));
    let (xt, yt) = data.gather(&data.domain_refs(target));
    let score = |label: &str, arch: &ArchSpec, p: &ParamVector, s: Segment| CellResult {
        strategy: label.into(),
        target_domain: data.domains[target].name.clone(),
        seed: run_seed,
        target_acc: evaluate(arch, p, &xt, &yt).unwrap().accuracy,
        val_acc: evaluate(arch, p, &xv, &yv).unwrap().accuracy,
        segment_start: s.start_iteration,
        segment_end: s.end_iteration,
    };
    let train_swad = |arch: &ArchSpec, stream: u64| {
        let mut store = MemoryStore::new();
        let log = train_model(
            arch,
            Objective::HardLabel,
            &data,
            &plan,
            &settings(&config, config.teacher_iterations),
            seed::derive(run_seed, &[target as u64, stream]),
            &mut store,
        )
        .unwrap();
        let segment = select_swad_segment(&log, &config.swad).unwrap();
        (segment, average_segment(&store, segment).unwrap())
    };

    let (t_seg, teacher) = train_swad(&config.teacher_arch, 1);
    let (b_seg, baseline) = train_swad(&config.student_arch, 2);
    let mut expected = vec![
        score(TEACHER_LABEL, &config.teacher_arch, &teacher, t_seg),
        score(BASELINE_LABEL, &config.student_arch, &baseline, b_seg),
    ];

    let mut store = MemoryStore::new();
    let log = train_model(
        &config.student_arch,
        Objective::Distill { teacher_arch: &config.teacher_arch, teacher: &teacher, tau: config.tau },
        &data,
        &plan,
        &settings(&config, config.distill_iterations),
        seed::derive(run_seed, &[target as u64, 2]),
        &mut store,
    )
    .unwrap();
    let total = config.distill_iterations;
    let start = tail_start(total, config.start_fraction).unwrap();
    let arch = &config.student_arch;

    let it = select_erm(&log).unwrap();
    expected.push(score("kd-erm", arch, &store.read(it).unwrap().params, Segment::single(it)));
    let seg = select_swad_segment(&log, &config.swad).unwrap();
    expected.push(score("kd-swad", arch, &average_segment(&store, seg).unwrap(), seg));
    let sma = select_sma(&store, &log, start, |p| Ok(evaluate(arch, p, &xv, &yv)?.accuracy)).unwrap();
    expected.push(score("kd-sma", arch, &sma.params, sma.segment));
    let (seg, wakd) = select_wakd(&store, total, config.start_fraction).unwrap();
    expected.push(score("kd-wakd", arch, &wakd, seg));

    assert_eq!(outcome.results, expected);

    // The saved teacher is exactly the one distilled from.
    let saved = read_checkpoint_file(&tmp.path().join("averaged").join("teacher-swad.wakd")).unwrap();
    assert!(saved.params.bit_eq(&teacher));
}

#[test]
fn every_strategy_reuses_the_one_stored_trajectory() {
    let config = tiny_config();
    let data = generate(&config.generator).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let outcome = run_cell(&config, &data, 0, 3, Some(tmp.path()));
    assert!(outcome.failures.is_empty());

    // Recompute each selection from what is on disk alone.
    let student = tmp.path().join("student");
    let store = DirStore::open(student.join("ckpt")).unwrap();
    let log = TrajectoryLog::read_csv(&student.join("trajectory.csv")).unwrap();
    let arch: ArchSpec = serde_json::from_str(&fs::read_to_string(student.join("arch.json")).unwrap()).unwrap();
    let (xv, yv) = read_examples_csv(&student.join("val.csv")).unwrap();
    let total = config.distill_iterations;
    assert_eq!(store.last_iteration(), Some(total));

    let saved = |label: &str| read_checkpoint_file(&tmp.path().join("averaged").join(format!("{label}.wakd"))).unwrap();
    let it = select_erm(&log).unwrap();
    assert!(saved("kd-erm").params.bit_eq(&store.read(it).unwrap().params));
    let seg = select_swad_segment(&log, &config.swad).unwrap();
    assert!(saved("kd-swad").params.bit_eq(&average_segment(&store, seg).unwrap()));
    let start = tail_start(total, config.start_fraction).unwrap();
    let sma = select_sma(&store, &log, start, |p| Ok(evaluate(&arch, p, &xv, &yv)?.accuracy)).unwrap();
    assert!(saved("kd-sma").params.bit_eq(&sma.params));
    let (_, wakd) = select_wakd(&store, total, config.start_fraction).unwrap();
    assert!(saved("kd-wakd").params.bit_eq(&wakd));
}

fn run_into(config: &ExperimentConfig, dir: &Path) -> Vec<CellResult> {
    let mut c = config.clone();
    c.output_dir = Some(dir.to_path_buf());
    let r = run_experiment(&c).unwrap();
    assert!(r.failures.is_empty(), "{:?}", r.failures);
    r.results
}

#[test]
fn reruns_are_identical() {
    let mut config = tiny_config();
    config.targets = Some(vec![0, 3]);
    config.seeds = vec![4, 5];
    let tmp = tempfile::tempdir().unwrap();
    let a = run_into(&config, &tmp.path().join("a"));
    let b = run_into(&config, &tmp.path().join("b"));
    assert_eq!(a, b);
    let read = |d: &str| fs::read(tmp.path().join(d).join("results.csv")).unwrap();
    assert_eq!(read("a"), read("b"));

    // Running again over an existing output directory changes nothing.
    run_into(&config, &tmp.path().join("a"));
    assert_eq!(read("a"), read("b"));

    // Parallel cells only change scheduling.
    config.parallel_cells = true;
    assert_eq!(run_into(&config, &tmp.path().join("c")), a);
}

#[test]
fn results_have_one_row_per_cell_and_model() {
    let mut config = tiny_config();
    config.strategies = vec![Strategy::Erm, Strategy::Wakd];
    config.seeds = vec![0, 1];
    let tmp = tempfile::tempdir().unwrap();
    let results = run_into(&config, tmp.path());
    assert_eq!(results.len(), 4 * 2 * 4);
    for label in [TEACHER_LABEL, BASELINE_LABEL, "kd-erm", "kd-wakd"] {
        assert_eq!(results.iter().filter(|r| r.strategy == label).count(), 8, "{label}");
    }
    for r in results.iter().filter(|r| r.strategy == "kd-wakd") {
        assert_eq!((r.segment_start, r.segment_end), (30, 300));
    }
    for d in &generate(&config.generator).unwrap().domains {
        for seed in [0, 1] {
            assert!(tmp.path().join("runs").join(cell_dir_name(&d.name, seed)).is_dir());
        }
    }
    assert!(tmp.path().join("summary.csv").is_file());
    assert!(!tmp.path().join("failures.csv").exists());
}

#[test]
fn a_failing_strategy_does_not_sink_the_cell() {
    let mut config = tiny_config();
    // No validation happens at or after iteration 290, so SMA has nothing
    // to score, while ERM and WAKD still work.
    config.distill_iterations = 290;
    config.eval_every = 20;
    config.start_fraction = 1.0;
    config.strategies = vec![Strategy::Erm, Strategy::Sma, Strategy::Wakd];
    config.targets = Some(vec![2]);
    let tmp = tempfile::tempdir().unwrap();
    config.output_dir = Some(tmp.path().to_path_buf());
    let r = run_experiment(&config).unwrap();
    assert_eq!(r.failures.len(), 1);
    assert_eq!(r.failures[0].stage, "kd-sma");
    let labels: Vec<&str> = r.results.iter().map(|r| r.strategy.as_str()).collect();
    assert_eq!(labels, [TEACHER_LABEL, BASELINE_LABEL, "kd-erm", "kd-wakd"]);
    let failures = fs::read_to_string(tmp.path().join("failures.csv")).unwrap();
    assert!(failures.starts_with("stage,target_domain,seed,message\nkd-sma,rot30,0,"));
}
