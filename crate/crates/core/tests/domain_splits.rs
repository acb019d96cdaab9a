//! Leave-one-domain-out splits, batching and the synthetic shift itself.

use std::collections::BTreeMap;

use wakd_core::data::{
    batches, generate, leave_one_out_splits, train_count, BatchStream, DomainDataset,
    ExampleRef, GeneratorSpec, Split, SplitPlan,
};
use wakd_core::nn::{Activation, AdamConfig, ArchSpec};
use wakd_core::pipeline::{evaluate, train_model, Objective, TrainSettings};
use wakd_core::trajectory::{CheckpointStore, MemoryStore};

fn small_spec(seed: u64) -> GeneratorSpec {
    GeneratorSpec { samples_per_domain: 120, seed, ..GeneratorSpec::default() }
}

fn sorted(mut refs: Vec<ExampleRef>) -> Vec<ExampleRef> {
    refs.sort_by_key(|r| (r.domain, r.index));
    refs
}

#[test]
fn target_never_appears_in_source_splits() {
    let data = generate(&small_spec(1)).unwrap();
    for plan in leave_one_out_splits(&data, 9).unwrap() {
        for split in [Split::Train, Split::Val] {
            assert!(plan.refs(split).iter().all(|r| r.domain != plan.target));
        }
        let mut stream = BatchStream::new(&data, &plan, 32, 3).unwrap();
        for _ in 0..50 {
            let batch = stream.next().unwrap();
            assert!(batch.refs.iter().all(|r| r.domain != plan.target));
        }
    }
}

#[test]
fn splits_partition_each_source_domain() {
    let data = generate(&small_spec(2)).unwrap();
    let plan = SplitPlan::new(&data, 2, 5).unwrap();
    for (t, v) in plan.train.iter().zip(&plan.val) {
        assert_eq!(t.indices.len(), train_count(120));
        let mut all: Vec<usize> = t.indices.iter().chain(&v.indices).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..120).collect::<Vec<_>>());
    }
    assert_eq!(train_count(120), 96);
    assert_eq!(train_count(7), 6);
}

#[test]
fn splits_depend_only_on_the_seed() {
    let data = generate(&small_spec(3)).unwrap();
    assert_eq!(SplitPlan::new(&data, 0, 4).unwrap(), SplitPlan::new(&data, 0, 4).unwrap());
    assert_ne!(SplitPlan::new(&data, 0, 4).unwrap(), SplitPlan::new(&data, 0, 5).unwrap());
}

#[test]
fn one_epoch_covers_the_split_exactly_once() {
    let data = generate(&small_spec(4)).unwrap();
    let plan = SplitPlan::new(&data, 1, 0).unwrap();
    let seen: Vec<ExampleRef> = batches(&data, &plan, Split::Train, 25, 7)
        .unwrap()
        .flat_map(|b| {
            let (x, y) = data.gather(&b.refs);
            assert_eq!(x.data(), b.inputs.data());
            assert_eq!(y, b.labels);
            b.refs
        })
        .collect();
    assert_eq!(sorted(seen), sorted(plan.refs(Split::Train)));

    // An endless stream yields each epoch as a permutation of the split.
    let n = plan.refs(Split::Train).len();
    let mut stream = BatchStream::new(&data, &plan, n, 11).unwrap();
    let a = stream.next().unwrap().refs;
    let b = stream.next().unwrap().refs;
    assert_ne!(a, b);
    assert_eq!(sorted(a), sorted(b));
}

#[test]
fn csv_export_round_trips() {
    let spec = small_spec(5);
    let data = generate(&spec).unwrap();
    let bare = DomainDataset::from_csv(&data.to_csv(), Some(3)).unwrap();
    assert_eq!(bare.domains[1].name, "d1");

    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("data.csv");
    data.write_csv(&path, Some(&spec)).unwrap();
    let back = DomainDataset::read_csv(&path).unwrap();
    assert_eq!(back.domains.len(), data.domains.len());
    for (a, b) in back.domains.iter().zip(&data.domains) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.features.data(), b.features.data());
    }
    let classes: BTreeMap<usize, usize> = data.domains[0].labels.iter().fold(BTreeMap::new(), |mut m, &l| {
        *m.entry(l).or_default() += 1;
        m
    });
    assert_eq!(classes.len(), 3);
}

/// A linear probe fit on near-source rotations loses accuracy on a far
/// rotation, so the generator produces a real shift.
#[test]
fn linear_probe_degrades_under_rotation() {
    let mut gaps = Vec::new();
    for seed in 0..10 {
        let spec = GeneratorSpec {
            angles_deg: vec![0.0, 15.0, 30.0, 75.0],
            samples_per_domain: 300,
            seed,
            ..GeneratorSpec::default()
        };
        let data = generate(&spec).unwrap();
        let plan = SplitPlan::new(&data, 3, seed).unwrap();
        let arch = ArchSpec::from_widths(&[2, 3], Activation::Tanh).unwrap();
        let settings = TrainSettings {
            iterations: 800,
            eval_every: 800,
            batch_size: 64,
            adam: AdamConfig::with_learning_rate(1e-2),
            checkpoint_every: 800,
        };
        let mut store = MemoryStore::new();
        train_model(&arch, Objective::HardLabel, &data, &plan, &settings, seed, &mut store).unwrap();
        let params = store.read(800).unwrap().params;

        let (xv, yv) = data.gather(&plan.refs(Split::Val));
        let (xt, yt) = data.gather(&data.domain_refs(3));
        let source = evaluate(&arch, &params, &xv, &yv).unwrap().accuracy;
        let target = evaluate(&arch, &params, &xt, &yt).unwrap().accuracy;
        gaps.push(source - target);
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!(mean_gap > 0.02, "mean source-target gap {mean_gap}");
}
