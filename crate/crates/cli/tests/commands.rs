use std::path::Path;
use std::process::Command;

use pan_cli::commands::{self, Baseline};
use pan_cli::config::DatasetKind;
use pan_cli::report::{self, HEADER};
use pan_cli::{ModelFile, RunConfig};
use pan_core::model::zoo::EncoderPreset;
use pan_core::PanError;

fn tiny(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        seed: 5,
        ..RunConfig::default()
    };
    cfg.dataset.kind = DatasetKind::Synthetic;
    cfg.dataset.train_size = 96;
    cfg.dataset.test_size = 32;
    cfg.train.epochs = 1;
    cfg.train.batch_size = 32;
    cfg.eval.attack.epochs = 1;
    cfg.eval.attack.ud_hidden = vec![vec![8]];
    cfg.eval.attack.pd_hidden = vec![vec![8]];
    cfg.output_dir = dir.to_path_buf();
    cfg
}

#[test]
fn train_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.train.lambda3 = 0.3;
    let art = commands::cmd_train(&cfg, |_| {}).unwrap();
    for f in [
        "encoder.panw",
        "ud.panw",
        "pd.panw",
        "pr.panw",
        "history.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,c_u,c_p1,c_p2,c_sum\n"));
    assert_eq!(history.lines().count(), 1 + art.history.records.len());
    let ud = ModelFile::load(&dir.path().join("ud.panw")).unwrap();
    assert_eq!(ud.tensors, art.models.ud.named_tensors());
}

#[test]
fn degenerate_lambdas_skip_the_discriminator() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.train.lambda2 = 0.0;
    cfg.train.lambda3 = 0.0;
    commands::cmd_train(&cfg, |_| {}).unwrap();
    assert!(!dir.path().join("pd.panw").exists());
    let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert!(history
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(2)
        .unwrap()
        .is_empty());
}

#[test]
fn missing_privacy_labels_with_lambda3_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.dataset.kind = DatasetKind::Mnist;
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-desk");
    cfg.dataset.images = root.join("images-idx3-ubyte");
    cfg.dataset.labels = root.join("labels-idx1-ubyte");
    cfg.train.lambda3 = 0.3;
    assert!(matches!(
        commands::cmd_train(&cfg, |_| {}),
        Err(PanError::Config(_))
    ));
}

#[test]
fn identity_encoder_evaluates_to_zero_log_p2_and_encodes_to_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.model.encoder = EncoderPreset::Identity;
    cfg.train.lambda2 = 0.0;
    commands::cmd_train(&cfg, |_| {}).unwrap();
    let enc = dir.path().join(commands::ENCODER_FILE);
    let p = commands::cmd_evaluate(&cfg, &enc).unwrap();
    assert_eq!(p.log_p2, 0.0);
    assert_eq!(p.p2, 0.0);
    let csv = std::fs::read_to_string(dir.path().join("evaluate.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(HEADER));
    assert_eq!(report::parse_csv(&csv).unwrap(), vec![p]);

    let s = commands::cmd_encode(&cfg, &enc, None).unwrap();
    let feats = ModelFile::load(&s.path).unwrap();
    let test = commands::load_dataset(&cfg).unwrap().test();
    assert_eq!(feats.tensors["features"], test.x);
    assert_eq!(s.samples, 32);
}

#[test]
fn single_point_sweep_equals_train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.train.lambda1 = 0.3;
    cfg.train.lambda2 = 0.7;
    cfg.train.lambda3 = 0.0;
    cfg.sweep.lambda1 = vec![0.3];
    let sweep = commands::cmd_sweep(&cfg, |_| {}).unwrap();
    commands::cmd_train(&cfg, |_| {}).unwrap();
    let p = commands::cmd_evaluate(&cfg, &dir.path().join(commands::ENCODER_FILE)).unwrap();
    assert_eq!(sweep.points, vec![p]);
}

#[test]
fn sweep_pareto_file_is_a_subset() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.sweep.lambda1 = vec![0.2, 0.8];
    commands::cmd_sweep(&cfg, |_| {}).unwrap();
    let all =
        report::parse_csv(&std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap()).unwrap();
    let front = report::parse_csv(&std::fs::read_to_string(dir.path().join("pareto.csv")).unwrap())
        .unwrap();
    assert_eq!(all.len(), 2);
    assert_eq!([all[0].lambda[0], all[1].lambda[0]], [0.2, 0.8]);
    assert!(!front.is_empty());
    assert!(front.iter().all(|p| all.contains(p)));
}

#[test]
fn baselines_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.baseline.dp_factors = vec![0.1, 0.5];
    cfg.baseline.hybrid_dims = vec![4];
    cfg.baseline.hybrid_factors = vec![0.5];
    let dp = commands::cmd_baseline(&cfg, Baseline::Dp, |_| {}).unwrap();
    assert_eq!(dp.len(), 2);
    assert!(dp[0].method.starts_with("dp"));
    assert_eq!(
        commands::cmd_baseline(&cfg, Baseline::Fl, |_| {})
            .unwrap()
            .len(),
        1
    );
    let a = commands::cmd_baseline(&cfg, Baseline::Dnn, |_| {}).unwrap();
    let first = std::fs::read(dir.path().join("baseline_dnn.csv")).unwrap();
    let b = commands::cmd_baseline(&cfg, Baseline::Dnn, |_| {}).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        first,
        std::fs::read(dir.path().join("baseline_dnn.csv")).unwrap()
    );
    assert_eq!(
        commands::cmd_baseline(&cfg, Baseline::Hybrid, |_| {})
            .unwrap()
            .len(),
        1
    );
}

#[test]
fn binary_reports_errors_and_gradcheck() {
    let bin = env!("CARGO_BIN_EXE_pan");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "train.lambda9 = 1\n").unwrap();
    let out = Command::new(bin)
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.lambda9"));

    let out = Command::new(bin)
        .args(["gradcheck", "--seed", "2", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("conv2d") && stdout.contains("max_rel_error"));
}
