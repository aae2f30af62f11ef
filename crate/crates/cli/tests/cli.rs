#[path = "../../core/tests/support/oracles.rs"]
mod oracles;

use std::fs;
use std::path::Path;
use std::process::Command;

use memvo::data::{parse_kitti_poses, parse_tum_trajectory, synth_generate, SyntheticSpec};
use memvo::eval::MetricSelection;
use memvo::geometry::{integrate_relative, Pose, Trajectory};
use memvo::model::{AttentionMode, MemoryThresholds, VoModel, VoModelConfig};
use memvo::train::{DatasetSource, RunConfig};
use memvo_cli::{load_checkpoint, run_eval, run_infer, run_sweep, run_train, InferInput, InferReport, SweepAxis};

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::toy();
    cfg.model = VoModelConfig {
        channels: 6,
        hidden_channels: 6,
        fusion_channels: 4,
        height: 4,
        width: 4,
        thresholds: MemoryThresholds {
            rotation: 0.004,
            translation: 0.3,
        },
        buffer_capacity: 4,
        ..VoModelConfig::default()
    };
    cfg.sequence_length = 7;
    cfg.iterations = 6;
    cfg.eval_every = 3;
    cfg.dataset = DatasetSource::Synthetic {
        spec: SyntheticSpec {
            sequences: 6,
            ..SyntheticSpec::default()
        },
        holdout: 2,
    };
    cfg
}

fn trained(dir: &Path) -> std::path::PathBuf {
    run_train(&small_config(), &dir.join("run")).unwrap().checkpoint
}

fn synthetic(sequences: usize) -> InferInput {
    InferInput::Synthetic {
        spec: SyntheticSpec {
            seed: 99,
            sequences,
            ..SyntheticSpec::default()
        },
    }
}

fn max_pose_diff(a: &[Pose], b: &[Pose]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(p, q)| (p.to_matrix() - q.to_matrix()).abs().max())
        .fold(0.0, f64::max)
}

#[test]
fn zero_iterations_checkpoint_equals_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        iterations: 0,
        ..small_config()
    };
    let out = run_train(&cfg, tmp.path()).unwrap();
    let loaded = load_checkpoint(&out.checkpoint).unwrap();
    let fresh = VoModel::new(cfg.resolved().unwrap().model, cfg.seed).unwrap();
    assert_eq!(loaded.params(), fresh.params());
    assert_eq!(out.initial, out.last);
    let log = fs::read_to_string(tmp.path().join("train.jsonl")).unwrap();
    assert!(log.lines().all(|l| l.contains("\"validation\"")), "{log}");
}

#[test]
fn training_log_has_one_line_per_iteration() {
    let tmp = tempfile::tempdir().unwrap();
    run_train(&small_config(), tmp.path()).unwrap();
    let log = fs::read_to_string(tmp.path().join("train.jsonl")).unwrap();
    let entries: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let train: Vec<_> = entries.iter().filter(|e| e["kind"] == "train").collect();
    assert_eq!(train.len(), 6);
    for e in &train {
        let (l, g, t) = (e["l_local"].as_f64().unwrap(), e["l_global"].as_f64().unwrap(), e["l_total"].as_f64().unwrap());
        assert_eq!(t, l + g);
    }
    assert!(fs::read_to_string(tmp.path().join("config.json")).unwrap().contains("\"sequence_length\": 7"));
}

#[test]
fn training_does_not_touch_its_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("cfg.json");
    fs::write(&path, serde_json::to_string(&small_config()).unwrap()).unwrap();
    let before = fs::read(&path).unwrap();
    let cfg = memvo_cli::load_run_config(&path).unwrap();
    run_train(&cfg, &tmp.path().join("run")).unwrap();
    assert_eq!(fs::read(&path).unwrap(), before);
}

#[test]
fn none_ablation_writes_integrated_tracking() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained(tmp.path());
    let model = load_checkpoint(&ckpt).unwrap();
    let report = run_infer(&ckpt, &synthetic(2), Some(AttentionMode::None), &tmp.path().join("inf")).unwrap();
    assert_eq!(report.ablation, AttentionMode::None);
    let samples = synth_generate(&SyntheticSpec {
        seed: 99,
        sequences: 2,
        sequence_length: 7,
        channels: 6,
        height: 4,
        width: 4,
        ..SyntheticSpec::default()
    })
    .unwrap();
    for (seq, sample) in report.sequences.iter().zip(&samples) {
        let text = fs::read_to_string(tmp.path().join("inf/trajectories").join(format!("{}.kitti.txt", seq.file_stem))).unwrap();
        let written = parse_kitti_poses(&text).unwrap();
        let tracking = model.predict(&sample.inputs).unwrap().relative;
        let integrated = integrate_relative(&tracking, Pose::identity());
        assert!(max_pose_diff(written.poses(), integrated.poses()) < 1e-9);
    }
}

#[test]
fn trajectory_files_reparse_and_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained(tmp.path());
    let dir = tmp.path().join("inf");
    let report = run_infer(&ckpt, &synthetic(3), None, &dir).unwrap();
    assert_eq!(report.sequences.len(), 3);
    for seq in &report.sequences {
        for stem in [seq.file_stem.clone(), format!("{}.gt", seq.file_stem)] {
            let read = |ext: &str| fs::read_to_string(dir.join("trajectories").join(format!("{stem}.{ext}.txt"))).unwrap();
            let kitti = parse_kitti_poses(&read("kitti")).unwrap();
            let tum = parse_tum_trajectory(&read("tum")).unwrap();
            assert_eq!(kitti.len(), 7);
            assert!(max_pose_diff(kitti.poses(), tum.poses()) < 1e-9);
            assert_eq!(kitti.poses()[0], Pose::identity());
        }
    }
}

#[test]
fn diagnostics_match_memory_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained(tmp.path());
    let model = load_checkpoint(&ckpt).unwrap();
    let dir = tmp.path().join("inf");
    run_infer(&ckpt, &synthetic(4), None, &dir).unwrap();
    let report: InferReport = serde_json::from_str(&fs::read_to_string(dir.join("diagnostics.json")).unwrap()).unwrap();
    let th = model.config().thresholds;
    let samples = synth_generate(&SyntheticSpec {
        seed: 99,
        sequences: 4,
        sequence_length: 7,
        channels: 6,
        height: 4,
        width: 4,
        ..SyntheticSpec::default()
    })
    .unwrap();
    for (seq, sample) in report.sequences.iter().zip(&samples) {
        let pred = model.predict(&sample.inputs).unwrap();
        let anchors = integrate_relative(&pred.relative, Pose::identity()).poses()[1..].to_vec();
        let stored = oracles::replay(&anchors, th.rotation, th.translation);
        assert_eq!(seq.diagnostics.stored_steps, stored);
        let cap = model.config().buffer_capacity;
        assert_eq!(seq.diagnostics.buffer_steps, stored[stored.len().saturating_sub(cap)..]);
        assert_eq!(seq.diagnostics.alpha.len(), 6);
    }
}

#[test]
fn incompatible_checkpoint_fails_to_load() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained(tmp.path());
    let text = fs::read_to_string(&ckpt).unwrap();
    let broken = text.replacen("\"fusion_channels\": 4", "\"fusion_channels\": 5", 1);
    let path = tmp.path().join("broken.json");
    fs::write(&path, broken).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

fn write_tum(path: &Path, stamps: &[f64], shift: f64) {
    let poses = stamps.iter().map(|&t| Pose::from_translation([t + shift, 0.0, 0.0])).collect();
    let traj = Trajectory::with_timestamps(poses, stamps.to_vec()).unwrap();
    fs::write(path, memvo::data::write_trajectory(&traj, memvo::data::PoseFormat::Tum).unwrap()).unwrap();
}

#[test]
fn eval_associates_by_timestamp() {
    let tmp = tempfile::tempdir().unwrap();
    let gt_stamps: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
    let est_stamps: Vec<f64> = gt_stamps.iter().map(|t| t + 0.005).collect();
    let (est, gt) = (tmp.path().join("est.txt"), tmp.path().join("gt.txt"));
    write_tum(&gt, &gt_stamps, 0.0);
    write_tum(&est, &est_stamps, 0.0);
    let sel = MetricSelection {
        kitti: None,
        ..MetricSelection::default()
    };
    let json = tmp.path().join("report.json");
    let report = run_eval(&est, &gt, &sel, &json).unwrap();
    assert_eq!(report.poses, 40);
    // Paired poses differ by a constant 5 mm offset, which the alignment removes.
    assert!(report.ate_rmse.unwrap() < 1e-9);
    assert!(report.rpe_rmse.unwrap() < 1e-9);
    assert!(fs::read_to_string(json).unwrap().contains("ate_rmse"));
}

#[test]
fn eval_rejects_poorly_associated_files() {
    let tmp = tempfile::tempdir().unwrap();
    let gt_stamps: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
    let mut est_stamps = gt_stamps.clone();
    for t in est_stamps.iter_mut().skip(15) {
        *t += 0.05;
    }
    let (est, gt) = (tmp.path().join("est.txt"), tmp.path().join("gt.txt"));
    write_tum(&gt, &gt_stamps, 0.0);
    write_tum(&est, &est_stamps, 0.0);
    let err = run_eval(&est, &gt, &MetricSelection::default(), &tmp.path().join("r.json")).unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("1.55"), "{msg}");
}

#[test]
fn eval_requires_equal_lengths_without_timestamps() {
    let tmp = tempfile::tempdir().unwrap();
    let line = "1 0 0 0 0 1 0 0 0 0 1 0\n";
    let (a, b) = (tmp.path().join("a.txt"), tmp.path().join("b.txt"));
    fs::write(&a, line.repeat(5)).unwrap();
    fs::write(&b, line.repeat(6)).unwrap();
    assert!(run_eval(&a, &b, &MetricSelection::default(), &tmp.path().join("r.json")).is_err());
}

#[test]
fn ablation_sweep_includes_tracking_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        iterations: 2,
        ..small_config()
    };
    let report = run_sweep(&cfg, SweepAxis::Ablations, tmp.path()).unwrap();
    let values: Vec<&str> = report.rows.iter().map(|r| r.value.as_str()).collect();
    assert_eq!(values, ["full", "temporal_only", "none"]);
    assert_eq!(report.to_table().lines().count(), 4);
    assert!(tmp.path().join("ablations/02/checkpoint.json").exists());
}

#[test]
fn threshold_sweep_has_three_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        iterations: 1,
        ..small_config()
    };
    assert_eq!(SweepAxis::Thresholds.variants(&cfg).len(), 3);
    let report = run_sweep(&cfg, SweepAxis::Thresholds, tmp.path()).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert!(report.rows[0].value.starts_with("0.002rad"));
}

#[test]
fn binary_reports_eval_table_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let stamps: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
    let (est, gt) = (tmp.path().join("est.txt"), tmp.path().join("gt.txt"));
    write_tum(&gt, &stamps, 0.0);
    write_tum(&est, &stamps, 1.0);
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_memvo"))
            .args(args)
            .env("MEMVO_OUTPUT_ROOT", tmp.path())
            .output()
            .unwrap()
    };
    let ok = run(&["eval", "--est", est.to_str().unwrap(), "--ref", gt.to_str().unwrap(), "--ate", "--align", "none"]);
    assert!(ok.status.success());
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("1.0000"), "{stdout}");
    assert!(tmp.path().join("eval/est.txt.json").exists());

    let bad = run(&["eval", "--est", "missing.txt", "--ref", gt.to_str().unwrap()]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error:"));
}

#[test]
fn shipped_toy_config_is_the_toy_profile() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.json");
    let cfg: RunConfig = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let expected = RunConfig {
        output_dir: Some("toy".into()),
        ..RunConfig::toy()
    };
    assert_eq!(cfg, expected);
}
