//! Reproducible runs: training, inference, evaluation and parameter sweeps.
//!
//! Every command writes its outputs under a run directory. Relative
//! directories resolve against the output root, which defaults to `runs` and
//! can be moved with the `MEMVO_OUTPUT_ROOT` environment variable.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use memvo::data::{
    detect_format, parse_trajectory, synth_generate, write_trajectory, DatasetManifest, PoseFormat, SequenceSample,
    SnippetPolicy, SyntheticSpec,
};
use memvo::eval::{associate, evaluate, kitti_segment_errors, MetricReport, MetricSelection, SegmentOptions, ASSOCIATION_WINDOW};
use memvo::geometry::{Pose, Trajectory};
use memvo::model::{AttentionMode, Diagnostics, ModelCheckpoint, VoModel};
use memvo::train::{HoldoutMetrics, LogEntry, LossValues, RunConfig, Trainer};

pub use memvo;

pub const OUTPUT_ROOT_ENV: &str = "MEMVO_OUTPUT_ROOT";

/// Frame spacing assumed when a sequence carries no timestamps (a 10 Hz camera).
pub const FRAME_INTERVAL: f64 = 0.1;

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Absolute paths are kept; relative ones are placed under the output root.
pub fn resolve_dir(dir: &Path) -> PathBuf {
    if dir.is_absolute() {
        dir.to_path_buf()
    } else {
        output_root().join(dir)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    serde_json::from_str(&read(path)?).with_context(|| format!("parsing run config {}", path.display()))
}

pub fn load_checkpoint(path: &Path) -> Result<VoModel> {
    let ckpt: ModelCheckpoint =
        serde_json::from_str(&read(path)?).with_context(|| format!("parsing checkpoint {}", path.display()))?;
    VoModel::from_checkpoint(&ckpt).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn save_checkpoint(path: &Path, model: &VoModel) -> Result<()> {
    write(path, &to_json(&model.to_checkpoint())?)
}

/// Run directory for a config: its `output_dir`, or `train-<seed>-<ablation>`.
pub fn default_run_dir(config: &RunConfig) -> PathBuf {
    let dir = config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("train-{}-{}", config.seed, config.ablation)));
    resolve_dir(&dir)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub initial: HoldoutMetrics,
    pub last: HoldoutMetrics,
}

fn holdout_of(entry: &LogEntry) -> Option<HoldoutMetrics> {
    match *entry {
        LogEntry::Validation {
            l_local,
            l_global,
            l_total,
            ate_sim3,
            ..
        } => Some(HoldoutMetrics {
            losses: LossValues {
                local: l_local,
                global: l_global,
                total: l_total,
            },
            ate_sim3,
        }),
        LogEntry::Train { .. } => None,
    }
}

/// Trains from `config` into `dir`, writing `config.json` (the resolved snapshot),
/// `train.jsonl`, periodic `checkpoints/iter-*.json` and the final `checkpoint.json`.
pub fn run_train(config: &RunConfig, dir: &Path) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config)?;
    fs::create_dir_all(dir).with_context(|| format!("creating run directory {}", dir.display()))?;
    write(&dir.join("config.json"), &to_json(trainer.config())?)?;

    let log_path = dir.join("train.jsonl");
    let file = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut log = BufWriter::new(file);
    let mut validations = Vec::new();
    let mut io_error = None;
    let ckpt_dir = dir.join("checkpoints");
    let mut ckpt_error = None;
    let result = trainer.run(
        |entry| {
            if let Some(h) = holdout_of(entry) {
                validations.push(h);
            }
            let line = serde_json::to_string(entry).expect("log entry serializes");
            if let Err(e) = writeln!(log, "{line}") {
                io_error.get_or_insert(e);
            }
            Ok(())
        },
        |iteration, model| {
            if let Err(e) = save_checkpoint(&ckpt_dir.join(format!("iter-{iteration:08}.json")), model) {
                ckpt_error.get_or_insert(e);
            }
            Ok(())
        },
    );
    log.flush().with_context(|| format!("writing {}", log_path.display()))?;
    if let Some(e) = io_error {
        return Err(e).with_context(|| format!("writing {}", log_path.display()));
    }
    if let Some(e) = ckpt_error {
        return Err(e);
    }
    result.context("training aborted")?;

    let checkpoint = dir.join("checkpoint.json");
    save_checkpoint(&checkpoint, trainer.model())?;
    let initial = *validations.first().expect("initial validation is logged");
    let last = *validations.last().expect("final validation is logged");
    Ok(TrainOutcome {
        dir: dir.to_path_buf(),
        checkpoint,
        initial,
        last,
    })
}

/// Sequences to run inference on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InferInput {
    /// Generated sequences; shape and length are taken from the checkpoint.
    Synthetic { spec: SyntheticSpec },
    /// Non-overlapping windows of the manifest's pose files.
    Manifest { path: PathBuf },
}

impl InferInput {
    /// `synthetic` for the default generator, or a path to a manifest or generator spec (JSON).
    pub fn parse(arg: &str, seed: u64, sequences: usize) -> Result<Self> {
        if arg == "synthetic" {
            return Ok(InferInput::Synthetic {
                spec: SyntheticSpec {
                    seed,
                    sequences,
                    ..SyntheticSpec::default()
                },
            });
        }
        let path = PathBuf::from(arg);
        let text = read(&path)?;
        if DatasetManifest::from_json(&text).is_ok() {
            return Ok(InferInput::Manifest { path });
        }
        let spec: SyntheticSpec = serde_json::from_str(&text)
            .with_context(|| format!("{arg} is neither a dataset manifest nor a synthetic spec"))?;
        Ok(InferInput::Synthetic { spec })
    }

    fn load(&self, model: &VoModel) -> Result<Vec<SequenceSample>> {
        let cfg = model.config();
        let [channels, height, width] = cfg.input_shape();
        let shaped = |spec: &SyntheticSpec| SyntheticSpec {
            sequence_length: cfg.sequence_length,
            channels,
            height,
            width,
            ..spec.clone()
        };
        match self {
            InferInput::Synthetic { spec } => Ok(synth_generate(&shaped(spec))?),
            InferInput::Manifest { path } => {
                let (manifest, base) = DatasetManifest::load(path)?;
                let policy = SnippetPolicy::Stride {
                    stride: cfg.sequence_length,
                };
                Ok(manifest.load_samples(&base, &shaped(&SyntheticSpec::default()), policy)?)
            }
        }
    }
}

/// Diagnostics of one inferred sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceDiagnostics {
    pub id: String,
    pub file_stem: String,
    #[serde(flatten)]
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferReport {
    pub ablation: AttentionMode,
    pub sequences: Vec<SequenceDiagnostics>,
}

/// File-name-safe form of a sequence id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn stamped(poses: Vec<Pose>, timestamps: Option<&[f64]>) -> Result<Trajectory> {
    let ts = match timestamps {
        Some(ts) => ts.to_vec(),
        None => (0..poses.len()).map(|i| i as f64 * FRAME_INTERVAL).collect(),
    };
    Ok(Trajectory::with_timestamps(poses, ts)?)
}

fn write_both(dir: &Path, stem: &str, traj: &Trajectory) -> Result<()> {
    write(&dir.join(format!("{stem}.kitti.txt")), &write_trajectory(traj, PoseFormat::Kitti)?)?;
    write(&dir.join(format!("{stem}.tum.txt")), &write_trajectory(traj, PoseFormat::Tum)?)?;
    Ok(())
}

/// Runs the checkpoint on every input sequence. Writes `trajectories/<id>.{kitti,tum}.txt`,
/// the matching ground truth as `trajectories/<id>.gt.{kitti,tum}.txt`, and `diagnostics.json`.
pub fn run_infer(checkpoint: &Path, input: &InferInput, ablation: Option<AttentionMode>, dir: &Path) -> Result<InferReport> {
    let mut model = load_checkpoint(checkpoint)?;
    if let Some(mode) = ablation {
        model.set_attention(mode);
    }
    let samples = input.load(&model)?;
    if samples.is_empty() {
        bail!("input produced no sequences");
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let snapshot = serde_json::json!({
        "ablation": model.config().attention,
        "input": input,
    });
    write(&dir.join("infer.json"), &to_json(&snapshot)?)?;
    let traj_dir = dir.join("trajectories");
    let mut sequences = Vec::with_capacity(samples.len());
    for sample in &samples {
        let pred = model
            .predict(&sample.inputs)
            .with_context(|| format!("running sequence {}", sample.id))?;
        let stem = file_stem(&sample.id);
        let ts = sample.timestamps.as_deref();
        write_both(&traj_dir, &stem, &stamped(pred.trajectory().poses().to_vec(), ts)?)?;
        write_both(&traj_dir, &format!("{stem}.gt"), &stamped(sample.gt_absolute.clone(), ts)?)?;
        sequences.push(SequenceDiagnostics {
            id: sample.id.clone(),
            file_stem: stem,
            diagnostics: pred.diagnostics,
        });
    }
    let report = InferReport {
        ablation: model.config().attention,
        sequences,
    };
    write(&dir.join("diagnostics.json"), &to_json(&report)?)?;
    Ok(report)
}

/// Parses both files, pairs them by timestamp when both carry timestamps and
/// differ, and computes the selected metrics. The report is written as JSON to `json_out`.
pub fn run_eval(estimate: &Path, reference: &Path, selection: &MetricSelection, json_out: &Path) -> Result<MetricReport> {
    let load = |path: &Path| -> Result<Trajectory> {
        let text = read(path)?;
        let format = detect_format(&text).with_context(|| format!("cannot tell the pose format of {}", path.display()))?;
        parse_trajectory(&text, format).with_context(|| format!("parsing {}", path.display()))
    };
    let est = load(estimate)?;
    let gt = load(reference)?;
    let (est, gt) = match (est.timestamps(), gt.timestamps()) {
        (Some(a), Some(b)) if a != b => associate(&est, &gt, ASSOCIATION_WINDOW)?,
        _ => {
            if est.len() != gt.len() {
                bail!(
                    "estimate has {} poses and reference {}; lengths must match without timestamps",
                    est.len(),
                    gt.len()
                );
            }
            (est, gt)
        }
    };
    let report = evaluate(&est, &gt, selection)?;
    write(json_out, &to_json(&report)?)?;
    Ok(report)
}

/// Parameter varied by [`run_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// 5, 7, 9 and 11 frames.
    SequenceLength,
    /// Half, one and two times the configured memory thresholds.
    Thresholds,
    /// Every ablation mode, including tracking only.
    Ablations,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sequence_length" => Ok(SweepAxis::SequenceLength),
            "thresholds" => Ok(SweepAxis::Thresholds),
            "ablations" | "ablation" => Ok(SweepAxis::Ablations),
            other => Err(format!(
                "unknown sweep axis `{other}` (expected sequence_length, thresholds or ablations)"
            )),
        }
    }
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::SequenceLength => "sequence_length",
            SweepAxis::Thresholds => "thresholds",
            SweepAxis::Ablations => "ablations",
        }
    }

    /// `(label, config)` per axis value.
    pub fn variants(self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        match self {
            SweepAxis::SequenceLength => [5, 7, 9, 11]
                .into_iter()
                .map(|n| {
                    let mut c = base.clone();
                    c.sequence_length = n;
                    (format!("{n} frames"), c)
                })
                .collect(),
            SweepAxis::Thresholds => [0.5, 1.0, 2.0]
                .into_iter()
                .map(|f| {
                    let mut c = base.clone();
                    c.model.thresholds.rotation *= f;
                    c.model.thresholds.translation *= f;
                    let t = c.model.thresholds;
                    (format!("{}rad/{}m", t.rotation, t.translation), c)
                })
                .collect(),
            SweepAxis::Ablations => AttentionMode::ALL
                .into_iter()
                .map(|m| {
                    let mut c = base.clone();
                    c.ablation = m;
                    (m.to_string(), c)
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub l_total: f64,
    pub ate_sim3: f64,
    /// Held-out segment drift over the sweep's short segment lengths.
    pub t_rel: Option<f64>,
    pub r_rel: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub segment_lengths: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

impl SweepReport {
    pub fn to_table(&self) -> String {
        let header = [self.axis.as_str(), "L_total", "ATE sim3 (m)", "t_rel (%)", "r_rel (deg/100m)"];
        let rows: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| [r.value.clone(), format!("{:.4}", r.l_total), format!("{:.4}", r.ate_sim3), opt(r.t_rel), opt(r.r_rel)])
            .collect();
        let mut widths = header.map(str::len);
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |cells: &[&str], out: &mut String| {
            let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            out.push_str(parts.join("  ").trim_end());
            out.push('\n');
        };
        line(&header, &mut out);
        for r in &rows {
            line(&r.iter().map(String::as_str).collect::<Vec<_>>(), &mut out);
        }
        out
    }
}

/// Segment lengths (meters) for sweep drift; the toy sequences are only a few meters long.
pub const SWEEP_SEGMENT_LENGTHS: [f64; 2] = [1.0, 2.0];

fn holdout_drift(model: &VoModel, holdout: &[SequenceSample]) -> Result<(Option<f64>, Option<f64>)> {
    let opts = SegmentOptions {
        lengths: SWEEP_SEGMENT_LENGTHS.to_vec(),
        step: 1,
    };
    let (mut t, mut r, mut n) = (0.0, 0.0, 0usize);
    for s in holdout {
        let pred = model.predict(&s.inputs)?;
        let seg = kitti_segment_errors(&pred.trajectory(), &Trajectory::new(s.gt_absolute.clone()), &opts)?;
        if let (Some(a), Some(b)) = (seg.t_rel, seg.r_rel) {
            t += a;
            r += b;
            n += 1;
        }
    }
    Ok(if n == 0 { (None, None) } else { (Some(t / n as f64), Some(r / n as f64)) })
}

/// Trains one run per axis value under the base seed, each in `dir/<axis>/<index>`,
/// and writes `sweep.json` and `sweep.txt`.
pub fn run_sweep(base: &RunConfig, axis: SweepAxis, dir: &Path) -> Result<SweepReport> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let snapshot = serde_json::json!({ "axis": axis, "base": base });
    write(&dir.join("sweep_config.json"), &to_json(&snapshot)?)?;
    let mut rows = Vec::new();
    for (i, (label, cfg)) in axis.variants(base).into_iter().enumerate() {
        let run_dir = dir.join(axis.as_str()).join(format!("{i:02}"));
        let outcome = run_train(&cfg, &run_dir).with_context(|| format!("sweep value {label}"))?;
        let model = load_checkpoint(&outcome.checkpoint)?;
        let (_, holdout) = cfg.resolved()?.dataset.load()?;
        let (t_rel, r_rel) = holdout_drift(&model, &holdout)?;
        rows.push(SweepRow {
            value: label,
            l_total: outcome.last.losses.total,
            ate_sim3: outcome.last.ate_sim3,
            t_rel,
            r_rel,
        });
    }
    let report = SweepReport {
        axis,
        segment_lengths: SWEEP_SEGMENT_LENGTHS.to_vec(),
        rows,
    };
    write(&dir.join("sweep.json"), &to_json(&report)?)?;
    write(&dir.join("sweep.txt"), &report.to_table())?;
    Ok(report)
}
