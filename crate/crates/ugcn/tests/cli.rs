use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use ugcn::cli::{self, GlobalArgs, CHECKPOINT_FILE, EPOCH_LOG_FILE};
use ugcn::error::exit;
use ugcn::experiment::{self, Variant};
use ugcn::io::{self, checkpoint, load_sequence, save_sequence, Checkpoint, SequenceFile};
use ugcn::report::format_report;
use ugcn::{Error, ExperimentConfig};
use ugcn_core::metrics::{self, Alignment, MetricRow};
use ugcn_core::model::build_model;
use ugcn_core::{PoseSequence, SkeletonTopology};

const SMALL: [&str; 4] = [
    "train.epochs=2",
    "train.lr_milestones=[1]",
    "data.synth.actions=2",
    "data.synth.sequences_per_action=3",
];

fn ugcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ugcn")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn with_sets<'a>(mut args: Vec<&'a str>, sets: &[&'a str]) -> Vec<&'a str> {
    for s in sets {
        args.extend(["--set", s]);
    }
    args
}

fn global(preset: &str, out: &Path, overrides: &[&str]) -> GlobalArgs {
    GlobalArgs {
        preset: preset.into(),
        config: None,
        overrides: overrides.iter().map(|s| s.to_string()).collect(),
        output: Some(out.to_path_buf()),
    }
}

#[test]
fn missing_dataset_fails_before_writing_anything() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = ugcn(&[
        "train",
        "--preset",
        "toy",
        "--set",
        "data.train_dir=\"/nonexistent/dataset\"",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(i32::from(exit::CONFIG)));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/dataset"));
    assert!(!out.exists());
}

#[test]
fn bad_configuration_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let dir = out.to_str().unwrap();
    for args in [
        vec!["train", "--preset", "nope", "--output", dir],
        vec!["train", "--preset", "toy", "--set", "model.frames=30", "--output", dir],
        vec!["train", "--preset", "toy", "--set", "loss.intervals=[40]", "--output", dir],
        vec!["train", "--preset", "toy", "--set", "train.no_such_key=1", "--output", dir],
    ] {
        let o = ugcn(&args);
        assert_eq!(o.status.code(), Some(i32::from(exit::CONFIG)), "{args:?}");
        assert!(!out.exists());
    }
}

#[test]
fn toy_training_fits_the_budget_and_feeds_eval_and_infer() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("toy");
    let start = Instant::now();
    let o = ugcn(&["train", "--preset", "toy", "--output", out.to_str().unwrap()]);
    let elapsed = start.elapsed();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(elapsed < Duration::from_secs(300), "toy training took {elapsed:?}");

    let log = std::fs::read_to_string(out.join(EPOCH_LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 21);
    assert!(log.lines().skip(1).all(|l| l.split(',').all(|v| v.parse::<f64>().is_ok_and(f64::is_finite))));
    let digest = std::fs::read_to_string(out.join("checkpoint.sha256")).unwrap();
    let bytes = std::fs::read(out.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(digest.split_whitespace().next().unwrap(), checkpoint::digest_hex(&bytes));
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    for key in MetricRow::KEYS {
        assert!(report.contains(&format!("{key} = ")), "missing {key}");
    }
    assert!(out.join("config.toml").exists() && out.join("report.json").exists());

    let ckpt = out.join(CHECKPOINT_FILE);
    let eval_dir = tmp.path().join("eval");
    let o = ugcn(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--output", eval_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(eval_dir.join("report.txt")).unwrap(), report);

    let cfg = ExperimentConfig::toy();
    let topo = SkeletonTopology::h36m17();
    let (_, test) = experiment::synthetic_split(&cfg, &topo, 0.0).unwrap();
    let input = tmp.path().join("clip.2d.pose");
    save_sequence(&input, &SequenceFile::new(test[0].pose2d.clone(), 50.0, None, "h36m17")).unwrap();
    let lifted = tmp.path().join("clip.3d.pose");
    let o = ugcn(&[
        "infer",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--out",
        lifted.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let got = load_sequence(&lifted).unwrap();
    assert_eq!((got.header.frames, got.header.joints, got.header.dims), (test[0].pose2d.frames(), 17, 3));
}

#[test]
fn eval_on_a_dataset_directory_and_topology_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    cli::cmd_train(&global("toy", &run, &SMALL), None).unwrap();
    let ckpt = run.join(CHECKPOINT_FILE);

    let cfg = ExperimentConfig::load(None, ExperimentConfig::toy(), &SMALL.map(String::from)).unwrap();
    let (_, test) = experiment::synthetic_split(&cfg, &SkeletonTopology::h36m17(), 0.0).unwrap();
    let data = tmp.path().join("data");
    io::save_dataset_dir(&data, &test, 50.0, "h36m17").unwrap();
    let r = cli::cmd_eval(&global("toy", &tmp.path().join("e1"), &[]), &ckpt, Some(&data)).unwrap();
    let own = cli::cmd_eval(&global("toy", &tmp.path().join("e2"), &[]), &ckpt, None).unwrap();
    assert_eq!(r.overall, own.overall);

    let narrow = tmp.path().join("narrow.2d.pose");
    save_sequence(&narrow, &SequenceFile::new(PoseSequence::zeros(40, 5, 2), 50.0, None, "custom")).unwrap();
    let err = cli::cmd_infer(&ckpt, &narrow, &tmp.path().join("x.3d.pose")).unwrap_err();
    assert!(matches!(err, Error::TopologyMismatch(_)), "{err}");
}

#[test]
fn identity_lifter_scores_perfectly() {
    let cfg = ExperimentConfig::toy();
    let (_, test) = experiment::synthetic_split(&cfg, &SkeletonTopology::h36m17(), 0.0).unwrap();
    let pairs: Vec<_> = test.iter().map(|p| (&p.pose3d, &p.pose3d, p.action.as_deref())).collect();
    let r = metrics::evaluate(&pairs, 0, Alignment::Similarity).unwrap();
    assert_eq!(r.overall.mpjpe_mm, 0.0);
    assert!(r.overall.p_mpjpe_mm < 1e-9);
    assert_eq!(r.overall.mpjve_mm, 0.0);
    assert_eq!(r.overall.pck_at_150, 1.0);
    assert_eq!(r.overall.auc, 1.0);
    assert_eq!(r.per_action.len(), cfg.data.synth.actions);
    let text = format_report(&r);
    for key in MetricRow::KEYS {
        assert!(text.contains(&format!("{key} = ")));
    }
}

#[test]
fn interval_sweep_writes_one_row_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ablate");
    let args = with_sets(vec!["ablate", "--sweep-preset", "intervals", "--preset", "toy", "--output", out.to_str().unwrap()], &SMALL);
    let o = ugcn(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let labels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["none", "tau2", "tau12"]);
    assert!(stdout(&o).contains("tau12"));
}

#[test]
fn zero_weight_matches_empty_interval_set() {
    let cfg = ExperimentConfig::load(None, ExperimentConfig::toy(), &SMALL.map(String::from)).unwrap();
    let variants = experiment::parse_sweep("lambda0: loss.lambda=0\nempty: loss.intervals=[]\n").unwrap();
    assert_eq!(
        variants[1],
        Variant {
            label: "empty".into(),
            overrides: vec!["loss.intervals=[]".into()]
        }
    );
    let rows = experiment::ablate(&cfg, &variants, |_| {}).unwrap();
    assert_eq!(rows[0].report, rows[1].report);
    assert_eq!(rows[0].final_loss.to_bits(), rows[1].final_loss.to_bits());
}

#[test]
fn pendulum_and_gradcheck_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("pend");
    let o = ugcn(&["toy-pendulum", "--seed", "3", "--output", out.to_str().unwrap()]);
    assert!(o.status.success());
    let traces = std::fs::read_to_string(out.join("pendulum_traces.csv")).unwrap();
    assert_eq!(traces.lines().next(), Some("t,gt,a,b,c"));
    assert_eq!(traces.lines().count(), experiment::PENDULUM_FRAMES + 1);

    let o = ugcn(&["gradcheck", "--seeds", "1"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let o = ugcn(&["gradcheck", "--seeds", "1", "--inject-fault", "0.01"]);
    assert_eq!(o.status.code(), Some(i32::from(exit::NUMERIC)));
    assert!(stdout(&o).contains("FAIL"));
}

fn tiny_checkpoint() -> Checkpoint {
    let config = ExperimentConfig::toy();
    let model = build_model(config.model.clone(), &SkeletonTopology::h36m17(), 1).unwrap();
    Checkpoint {
        config,
        model,
        optimizer: None,
        epoch: 0,
        history: Vec::new(),
    }
}

#[test]
fn damaged_checkpoints_are_parse_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.ckpt");
    let ck = tiny_checkpoint();
    io::save_checkpoint(&path, &ck).unwrap();
    let back = io::load_checkpoint(&path).unwrap();
    assert_eq!(back.model, ck.model);

    let bytes = std::fs::read(&path).unwrap();
    for damage in [bytes.len() / 2, 3, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[damage] ^= 0x10;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(io::load_checkpoint(&path), Err(Error::Parse { .. })), "byte {damage}");
    }
    std::fs::write(&path, &bytes[..bytes.len() - 40]).unwrap();
    assert!(matches!(io::load_checkpoint(&path), Err(Error::Parse { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sequence_files_round_trip_exactly(
        frames in 1usize..12,
        joints in 1usize..6,
        dims in 2usize..4,
        values in proptest::collection::vec(-1e6f64..1e6, 12 * 6 * 3),
        fps in 1.0f64..240.0,
    ) {
        let tmp = tempfile::tempdir().unwrap();
        let n = frames * joints * dims;
        let pose = PoseSequence::new(frames, joints, dims, values[..n].to_vec()).unwrap();
        let file = SequenceFile::new(pose, fps, Some("walk".into()), "custom");
        let path = tmp.path().join("s.pose");
        save_sequence(&path, &file).unwrap();
        prop_assert_eq!(load_sequence(&path).unwrap(), file);
    }
}
