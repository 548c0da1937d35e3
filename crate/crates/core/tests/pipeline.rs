use sembeam::dataset;
use sembeam::features::{FeatureId, FeatureSet};
use sembeam::pipeline::*;
use sembeam::predictor::{train, HeadKind};
use std::collections::BTreeSet;

fn tiny(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.dataset.scene.frame_count = 700;
    cfg.dataset.scene.seed = seed;
    cfg.dataset.raytrace.antennas = 8;
    cfg.dataset.raytrace.subcarriers = 4;
    cfg.dataset.resolution = (16, 32);
    cfg.dataset.horizons = vec![1, 4];
    cfg.dataset.sample_stride = 3;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 32;
    cfg.train.seed = seed;
    cfg.selection.epochs = 1;
    cfg.split_block_frames = 30;
    cfg
}

#[test]
fn full_run_is_deterministic_and_complete() {
    let cfg = tiny(5);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let report = run_all(&cfg, a.path()).unwrap();
    run_all(&cfg, b.path()).unwrap();
    for f in ["report.json", "metrics.csv", "selection_beam.json", "trace_beam.jsonl", "model_beam.esnn"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert!(a.path().join("timing.json").exists());
    assert_eq!(report.metrics.len(), cfg.g_list.len() * 2 + cfg.dataset.horizons.len());
    assert!(report.metrics.iter().all(|m| (0.0..=1.0).contains(&m.value)));
    assert!(report.beam.topg_accuracy.windows(2).all(|w| w[0] <= w[1]));
    assert!(report.beam_features.has_location() && report.blockage_features.has_location());

    let before = std::fs::read(a.path().join("report.json")).unwrap();
    cmd_report(a.path()).unwrap();
    assert_eq!(std::fs::read(a.path().join("report.json")).unwrap(), before);
}

#[test]
fn report_requires_every_horizon() {
    let cfg = tiny(6);
    let dir = tempfile::tempdir().unwrap();
    run_all(&cfg, dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("eval_blockage_h4.json")).unwrap();
    match cmd_report(dir.path()) {
        Err(PipelineError::MissingArtifacts(m)) => assert_eq!(m, vec!["eval_blockage_h4.json".to_string()]),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn frame_block_split_is_disjoint_and_contiguous() {
    let cfg = tiny(7);
    let ds = dataset::generate(&cfg.dataset).unwrap();
    let s = dataset_split(&ds, &cfg.train, cfg.split_block_frames).unwrap();
    let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..ds.samples.len()).collect::<Vec<_>>());
    let blocks = |idx: &[usize]| idx.iter().map(|&i| ds.samples[i].frame / cfg.split_block_frames).collect::<BTreeSet<_>>();
    let (a, b, c) = (blocks(&s.train), blocks(&s.val), blocks(&s.test));
    assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
    assert!(dataset_split(&ds, &cfg.train, 0).is_err());
}

#[test]
fn absent_concept_does_not_change_training() {
    let cfg = tiny(8);
    let ds = dataset::generate(&cfg.dataset).unwrap();
    let absent = absent_concepts(&ds);
    let sky = FeatureId::parse("sky").unwrap();
    assert!(absent.contains(&sky));
    assert!(!absent.contains(&FeatureId::parse("vehicle").unwrap()));
    let s = dataset_split(&ds, &cfg.train, cfg.split_block_frames).unwrap();
    let run = |f: FeatureSet| {
        train(&ds.samples, &ds.beam_labels(), &s.train, &s.val, &f, HeadKind::Beam { classes: 8 }, &cfg.beam_arch, &cfg.train).unwrap()
    };
    let base = run(FeatureSet::new([FeatureId::Location, FeatureId::parse("vehicle").unwrap()]));
    let with_sky = run(FeatureSet::new([FeatureId::Location, FeatureId::parse("vehicle").unwrap(), sky]));
    assert_eq!(base.val_accuracy, with_sky.val_accuracy);
    assert_eq!(base.epoch_loss, with_sky.epoch_loss);
}

#[test]
fn planted_labels_follow_the_mask() {
    let cfg = tiny(9);
    let mut ds = dataset::generate(&cfg.dataset).unwrap();
    let vehicle = sembeam::semantics::concept_index("vehicle").unwrap();
    ds.plant_beam_labels(vehicle);
    assert!(ds.channels.is_none());
    let m = ds.config.codebook_size();
    assert!(ds.samples.iter().all(|s| usize::from(s.beam_label) < m));
    let mut again = ds.clone();
    again.plant_beam_labels(vehicle);
    assert_eq!(again.beam_labels(), ds.beam_labels());
}

#[test]
fn selection_keeps_pins_and_rejects_bad_settings() {
    let mut cfg = tiny(10);
    cfg.selection.pinned = vec![FeatureId::Location, FeatureId::parse("sidewalk").unwrap()];
    cfg.selection.v_max = Some(3);
    let ds = dataset::generate(&cfg.dataset).unwrap();
    let (sel, trace) = select_features(&ds, TaskKind::Beam, &cfg).unwrap();
    assert!(sel.features.0.contains(&FeatureId::parse("sidewalk").unwrap()));
    assert!(sel.features.len() <= 3);
    assert!(!trace.is_empty());

    cfg.selection.epochs = 0;
    assert!(matches!(select_features(&ds, TaskKind::Beam, &cfg), Err(PipelineError::Validation(_))));
    let mut cfg = tiny(10);
    cfg.g_list = vec![1, 99];
    assert!(cfg.validate().is_err());
}

#[test]
fn eval_needs_stored_channels_for_rate_ratio() {
    let mut cfg = tiny(11);
    cfg.dataset.store_channels = false;
    let ds = dataset::generate(&cfg.dataset).unwrap();
    let dir = tempfile::tempdir().unwrap();
    cmd_train(&ds, &FeatureSet::location_only(), TaskKind::Beam, None, &cfg, dir.path()).unwrap();
    assert!(matches!(cmd_eval(&ds, TaskKind::Beam, None, &cfg, dir.path()), Err(PipelineError::Validation(_))));
    let b = cmd_train_eval(&ds, &FeatureSet::location_only(), TaskKind::Blockage, Some(4), &cfg, dir.path()).unwrap();
    assert_eq!(b["horizon"], 4);
    assert!(cmd_train(&ds, &FeatureSet::location_only(), TaskKind::Blockage, Some(2), &cfg, dir.path()).is_err());
}

#[test]
fn config_round_trips_through_json() {
    let cfg = tiny(12);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(PipelineConfig::load(&path).unwrap(), cfg);
    std::fs::write(&path, "{}").unwrap();
    assert_eq!(PipelineConfig::load(&path).unwrap(), PipelineConfig::default());
}
