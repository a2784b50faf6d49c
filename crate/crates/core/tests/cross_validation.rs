use nfer_core::data::split_subject_kfold;
use nfer_core::harness::train::run_fold;
use nfer_core::harness::{run_cv, TrainConfig};

const TINY: &str = "epochs = 2\nbatch_size = 16\nlearning_rate = 3e-3\nfolds = 3\n[model]\nimage_size = 8\ndim = 8\ndepth = 1\nhgfe_dims = [4, 1]\n[data.synthetic]\nimage_size = 8\nsubjects = 6\nsamples_per_cell = 1\n";

#[test]
fn fold_results_do_not_depend_on_execution_order() {
    let cfg = TrainConfig::from_toml_str(TINY).unwrap();
    let dataset = cfg.data.load().unwrap();
    let report = run_cv(&cfg, &dataset).unwrap();
    assert_eq!(report.folds.len(), 3);
    assert!((0.0..=1.0).contains(&report.accuracy.0) && report.accuracy.1 >= 0.0);

    let split = split_subject_kfold(&dataset, cfg.folds, cfg.seed).unwrap();
    let mut reversed: Vec<_> = (0..cfg.folds).rev().map(|f| run_fold(&cfg, &dataset, &split, f).unwrap()).collect();
    reversed.reverse();
    assert_eq!(reversed, report.folds);
    assert_eq!(report.to_csv().lines().count(), 1 + 3 + 2);
}

#[test]
fn fewer_subjects_than_folds_is_an_error() {
    let cfg = TrainConfig::from_toml_str(&TINY.replace("subjects = 6", "subjects = 2")).unwrap();
    let dataset = cfg.data.load().unwrap();
    assert!(run_cv(&cfg, &dataset).is_err());
}
