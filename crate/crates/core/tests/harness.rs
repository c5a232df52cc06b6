mod common;

use std::path::Path;

use dualprop::harness::{
    load_mnist_idx, run_experiment, synth_blobs, ExperimentConfig, ExperimentSummary, HarnessError, CHECKPOINT_FILE,
    CONFIG_FILE, METRICS_FILE, SUMMARY_FILE,
};
use dualprop::model::load_checkpoint;
use dualprop::{Schedule, Scheme};

fn blob_config() -> ExperimentConfig {
    ExperimentConfig {
        data: "blobs:classes=3,dim=4,n=30,sep=4".into(),
        arch: "4-8-3".into(),
        epochs: 2,
        batch_size: 10,
        seed: 5,
        ..Default::default()
    }
}

fn check_csv(dir: &Path) -> (Vec<String>, usize) {
    let text = std::fs::read_to_string(dir.join(METRICS_FILE)).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(str::to_owned).collect();
    assert_eq!(&header[..6], ["epoch", "batch", "train_loss", "test_acc", "lipschitz", "diverged"]);
    let mut rows = 0;
    for line in lines {
        assert_eq!(line.split(',').count(), header.len(), "incomplete row `{line}`");
        rows += 1;
    }
    (header, rows)
}

#[test]
fn blob_run_writes_schema_complete_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&blob_config(), dir.path()).unwrap();
    let (header, rows) = check_csv(dir.path());
    assert_eq!(header.iter().filter(|h| h.starts_with("angle_layer_")).count(), 2);
    assert_eq!(rows, summary.batches);
    let json: ExperimentSummary =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(json, summary);
    let params = load_checkpoint(dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(params.depth(), 2);
    let cfg = ExperimentConfig::load(dir.path().join(CONFIG_FILE)).unwrap();
    assert_eq!(cfg, blob_config());
}

#[test]
fn diverging_run_keeps_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        scheme: Scheme::Dp,
        alpha: 0.0,
        beta: 0.5,
        schedule: Schedule::RepeatedSweeps(30),
        divergence_threshold: 1e-3,
        ..blob_config()
    };
    match run_experiment(&cfg, dir.path()) {
        Err(HarnessError::AbortedDiverged(s)) => assert!(s.diverged && s.aborted),
        other => panic!("expected an abort, got {other:?}"),
    }
    let (_, rows) = check_csv(dir.path());
    assert!(rows > 0);
}

#[test]
fn same_seed_same_bytes() {
    let cfg = ExperimentConfig {
        grad_angle_every: 1,
        lipschitz_every_epoch: true,
        ..blob_config()
    };
    let runs: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            run_experiment(&cfg, dir.path()).unwrap();
            std::fs::read(dir.path().join(METRICS_FILE)).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn config_survives_toml_round_trip() {
    let cfg = ExperimentConfig {
        scheme: Scheme::DpStabilized,
        alpha: 1.0,
        schedule: Schedule::ForwardPasses(17),
        subset: Some(500),
        ..Default::default()
    };
    assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
}

#[test]
fn idx_files_parse() {
    let dir = tempfile::tempdir().unwrap();
    let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
    images.extend([0, 255, 51, 102, 255, 0, 0, 0]);
    let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
    std::fs::write(dir.path().join("img"), images).unwrap();
    std::fs::write(dir.path().join("lbl"), labels).unwrap();
    let ds = load_mnist_idx(dir.path().join("img"), dir.path().join("lbl")).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.labels(), [7, 3]);
    assert_eq!(ds.inputs()[0].as_slice(), [0.0, 1.0, 0.2, 0.4]);
    assert_eq!(ds.classes(), 10);
}

#[test]
fn truncated_idx_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("img"), [0, 0, 8, 3, 0, 0, 0, 5, 0, 0, 0, 28, 0, 0, 0, 28, 1, 2]).unwrap();
    assert!(dualprop::harness::read_idx_images(&dir.path().join("img")).is_err());
}

#[test]
fn blobs_are_reproducible_and_labelled() {
    let a = synth_blobs(4, 3, 25, 5.0, 9).unwrap();
    let b = synth_blobs(4, 3, 25, 5.0, 9).unwrap();
    assert_eq!(a.inputs(), b.inputs());
    assert_eq!(a.len(), 100);
    assert!(a.labels().iter().all(|&l| l < 4));
    let net = common::relu_net(&[3, 6, 4], 0);
    let by_hand = common::dataset_accuracy_by_hand(&net, &a);
    assert_eq!(dualprop::learning::accuracy(&net, &a).unwrap(), by_hand);
}
