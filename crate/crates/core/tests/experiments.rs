use std::collections::BTreeSet;
use std::fs;

use proptest::prelude::*;
use zonalseg::architectures::{ModelSpec, Variant};
use zonalseg::dataset::{InstitutionProfile, PhantomConfig};
use zonalseg::experiments::{
    enumerate_conditions, make_folds, roman, run_matrix, summarize, ConditionResult, DataSource, MatrixPlan, FOLDS,
};
use zonalseg::metrics::{Level, MetricsRow, Region};
use zonalseg::training::TrainConfig;

fn tags() -> Vec<String> {
    ["#1", "#2", "#3"].iter().map(|s| s.to_string()).collect()
}

fn plan(seed: u64) -> MatrixPlan {
    MatrixPlan {
        data: DataSource::Phantom(PhantomConfig::new(InstitutionProfile::standard(), 4, 2, seed)),
        methods: vec![Variant::Unet, Variant::EncUse],
        model: ModelSpec {
            variant: Variant::Unet,
            depth: 1,
            base_width: 4,
            se_reduction: 4,
            in_channels: 1,
        },
        train: TrainConfig {
            lr0: 0.05,
            epochs: 1,
            decay_epochs: Vec::new(),
            crop: (32, 32),
            seed,
            ..TrainConfig::default()
        },
        canvas: (36, 36),
        threshold: 0.5,
        seed,
    }
}

#[test]
fn spoke_order() {
    let conds = enumerate_conditions(&tags()).unwrap();
    assert_eq!(conds.len(), 21);
    let labels: Vec<String> = conds.iter().map(|c| format!("{} {}", c.id(), c.label())).collect();
    assert_eq!(labels[0], "I #1 -> #1");
    assert_eq!(labels[1], "II #1 -> #2");
    assert_eq!(labels[5], "VI #2 -> #3");
    assert_eq!(labels[9], "X #1/#2 -> #1");
    assert_eq!(labels[18], "XIX #1/#2/#3 -> #1");
    assert_eq!(labels[20], "XXI #1/#2/#3 -> #3");
    assert_eq!(conds.iter().filter(|c| c.tests_in_training()).count(), 3 + 6 + 3);
    assert_eq!(roman(14), "XIV");
    assert!(enumerate_conditions(&tags()[..2]).is_err());
    assert!(enumerate_conditions(&["a".into(), "a".into(), "b".into()]).is_err());
}

fn row(fold: usize, patient: &str, region: Region, dsc: f64, avgd: Option<f64>) -> MetricsRow {
    MetricsRow {
        dataset: "#1".into(),
        condition: "I".into(),
        fold,
        patient: patient.into(),
        region,
        level: Level::Patient,
        dsc,
        sen: dsc,
        spc: 100.0,
        avgd,
        maxd: avgd,
    }
}

#[test]
fn summary_means_rounds_with_sample_sd() {
    let conds = enumerate_conditions(&tags()).unwrap();
    let rows = vec![
        row(1, "P001", Region::Cg, 80.0, Some(1.0)),
        row(1, "P002", Region::Cg, 90.0, None),
        row(2, "P003", Region::Cg, 70.0, Some(3.0)),
        row(3, "P004", Region::Cg, 60.0, None),
        row(4, "P005", Region::Cg, 50.0, None),
    ];
    let results = vec![ConditionResult {
        method: Variant::Unet,
        condition: conds[0].clone(),
        rows,
    }];
    let s = summarize(&[Variant::Unet], &conds, &results, &[]).unwrap();
    let cg = s.cell(Variant::Unet, 1).unwrap().region(Region::Cg).unwrap();
    assert_eq!(cg.round_dsc, vec![85.0, 70.0, 60.0, 50.0]);
    let d = cg.dsc.unwrap();
    assert_eq!(d.mean, 66.25);
    let var = [85.0f64, 70.0, 60.0, 50.0].iter().map(|v| (v - 66.25).powi(2)).sum::<f64>() / 3.0;
    assert!((d.sd - var.sqrt()).abs() < 1e-12);
    let avgd = cg.avgd.unwrap();
    assert_eq!((avgd.mean, avgd.rounds), (2.0, 2));
    assert!(s.cell(Variant::Unet, 1).unwrap().region(Region::Pz).unwrap().dsc.is_none());
    assert!(s.stats.is_empty());
}

#[test]
fn resume_rebuilds_only_missing_conditions() {
    let p = plan(3);
    let dir = tempfile::tempdir().unwrap();
    let first = run_matrix(&p, dir.path(), 2).unwrap();
    assert!(first.failures.is_empty());
    assert_eq!(first.results.len(), 42);
    assert!(first.timings.iter().all(|t| !t.resumed));
    for f in ["matrix.json", "summary.json", "timings.json", "kiviat.svg", "kiviat_pz.svg", "cd.svg", "cd_pz.svg"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let csv = dir.path().join("results").join(Variant::EncUse.name()).join("XX.csv");
    let before = fs::read(&csv).unwrap();
    fs::remove_file(&csv).unwrap();

    let again = run_matrix(&p, dir.path(), 1).unwrap();
    assert_eq!(fs::read(&csv).unwrap(), before);
    let resumed: Vec<(Variant, &str)> = again.timings.iter().filter(|t| !t.resumed).map(|t| (t.method, t.training.as_str())).collect();
    assert_eq!(resumed, vec![(Variant::EncUse, "phantom-A/phantom-B/phantom-C")]);
    assert_eq!(again.summary, first.summary);
}

#[test]
fn bad_plans_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = plan(0);
    p.methods = vec![Variant::Unet, Variant::Unet];
    assert!(run_matrix(&p, dir.path(), 1).is_err());
    let mut p = plan(0);
    p.train.crop = (40, 40);
    assert!(run_matrix(&p, dir.path(), 1).is_err());
    let mut p = plan(0);
    p.data = DataSource::Phantom(PhantomConfig::new(InstitutionProfile::standard(), 3, 2, 0));
    assert!(run_matrix(&p, dir.path(), 1).is_err());
    let mut p = plan(0);
    p.data = DataSource::Phantom(PhantomConfig::new(vec![InstitutionProfile::phantom_a()], 4, 2, 0));
    assert!(run_matrix(&p, dir.path(), 1).is_err());
}

proptest! {
    #[test]
    fn folds_cover_patients_once(n in FOLDS..200usize) {
        let plan = make_folds(n).unwrap();
        prop_assert_eq!(plan.folds.len(), FOLDS);
        let all: Vec<usize> = plan.folds.iter().flatten().copied().collect();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        for round in 0..FOLDS {
            let test: BTreeSet<usize> = plan.test_indices(round).iter().copied().collect();
            let train: BTreeSet<usize> = plan.train_indices(round).into_iter().collect();
            prop_assert!(test.is_disjoint(&train));
            prop_assert_eq!(test.len() + train.len(), n);
            prop_assert!(!test.is_empty());
        }
        if n != 19 {
            prop_assert!(plan.folds[..3].iter().all(|f| f.len() == n / FOLDS));
        }
    }
}
