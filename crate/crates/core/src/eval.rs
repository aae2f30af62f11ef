//! Trajectory error metrics: KITTI-style segment drift, absolute trajectory
//! error and relative pose error per second.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotation_matrix_angle, umeyama_align, GeometryError, Pose, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("estimate has {0} poses but reference has {1}")]
    LengthMismatch(usize, usize),
    #[error("trajectory too short: {0}")]
    TooShort(String),
    #[error("timestamps required: {0}")]
    Timestamps(String),
    #[error("{} of {total} estimate timestamps have no reference within {window} s: {}", unmatched.len(), format_list(unmatched))]
    Association {
        unmatched: Vec<f64>,
        total: usize,
        window: f64,
    },
}

fn format_list(values: &[f64]) -> String {
    const SHOWN: usize = 20;
    let mut s = values.iter().take(SHOWN).map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", ");
    if values.len() > SHOWN {
        let _ = write!(s, ", ... ({} more)", values.len() - SHOWN);
    }
    s
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

fn rigid_inverse(m: &Matrix4<f64>) -> Matrix4<f64> {
    let rt: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).transpose();
    let t: Vector3<f64> = m.fixed_view::<3, 1>(0, 3).into_owned();
    let mut out = Matrix4::identity();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
    out.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-(rt * t)));
    out
}

fn matrices(traj: &Trajectory) -> Vec<Matrix4<f64>> {
    traj.poses().iter().map(Pose::to_matrix).collect()
}

/// `inverse(a_i^-1 a_j of estimate) * (a_i^-1 a_j of reference)`.
fn segment_error(est: &[Matrix4<f64>], reference: &[Matrix4<f64>], i: usize, j: usize) -> Matrix4<f64> {
    let d_est = rigid_inverse(&est[i]) * est[j];
    let d_ref = rigid_inverse(&reference[i]) * reference[j];
    rigid_inverse(&d_est) * d_ref
}

fn translation_norm(m: &Matrix4<f64>) -> f64 {
    m.fixed_view::<3, 1>(0, 3).norm()
}

fn rotation_angle(m: &Matrix4<f64>) -> f64 {
    rotation_matrix_angle(&m.fixed_view::<3, 3>(0, 0).into_owned())
}

fn check_pair(estimate: &Trajectory, reference: &Trajectory) -> Result<()> {
    if estimate.len() != reference.len() {
        return Err(EvalError::LengthMismatch(estimate.len(), reference.len()));
    }
    Ok(())
}

/// Segment lengths in meters and start-frame spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentOptions {
    pub lengths: Vec<f64>,
    pub step: usize,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        SegmentOptions {
            lengths: (1..=8).map(|i| 100.0 * i as f64).collect(),
            step: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthError {
    pub length: f64,
    /// Percent.
    pub t_rel: f64,
    /// Degrees per 100 m.
    pub r_rel: f64,
    pub segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentErrors {
    /// Mean translational drift over all segments, percent. `None` when no segment fits.
    pub t_rel: Option<f64>,
    /// Mean rotational drift over all segments, degrees per 100 m.
    pub r_rel: Option<f64>,
    pub breakdown: Vec<LengthError>,
    pub segments: usize,
    /// Set when the reference path is shorter than the smallest segment length.
    pub insufficient: bool,
}

/// Cumulative path length of the reference positions.
pub fn path_distances(traj: &Trajectory) -> Vec<f64> {
    let mut out = Vec::with_capacity(traj.len());
    let mut total = 0.0;
    let mut prev: Option<Vector3<f64>> = None;
    for p in traj.positions() {
        if let Some(q) = prev {
            total += (p - q).norm();
        }
        out.push(total);
        prev = Some(p);
    }
    out
}

/// Drift over every segment starting at frames `0, step, 2 step, ...` whose end is the
/// first frame with cumulative reference distance at least `L` beyond the start.
pub fn kitti_segment_errors(estimate: &Trajectory, reference: &Trajectory, options: &SegmentOptions) -> Result<SegmentErrors> {
    check_pair(estimate, reference)?;
    if estimate.len() < 2 {
        return Err(EvalError::TooShort(format!("{} poses, need at least 2", estimate.len())));
    }
    if options.step == 0 || options.lengths.iter().any(|l| !(*l > 0.0)) {
        return Err(EvalError::TooShort("segment step and lengths must be positive".into()));
    }
    let est = matrices(estimate);
    let gt = matrices(reference);
    let dist = path_distances(reference);
    let n = dist.len();

    let mut per_length: Vec<(f64, f64, usize)> = vec![(0.0, 0.0, 0); options.lengths.len()];
    let mut t_sum = 0.0;
    let mut r_sum = 0.0;
    let mut count = 0;
    for first in (0..n).step_by(options.step) {
        for (k, &len) in options.lengths.iter().enumerate() {
            let target = dist[first] + len;
            let offset = dist[first..].partition_point(|&d| d < target);
            let last = first + offset;
            if last >= n {
                continue;
            }
            let e = segment_error(&est, &gt, first, last);
            let t_err = translation_norm(&e) / len;
            let r_err = rotation_angle(&e) / len;
            per_length[k].0 += t_err;
            per_length[k].1 += r_err;
            per_length[k].2 += 1;
            t_sum += t_err;
            r_sum += r_err;
            count += 1;
        }
    }

    let to_pct = 100.0;
    let to_deg100 = 100.0 * 180.0 / std::f64::consts::PI;
    let breakdown = options
        .lengths
        .iter()
        .zip(&per_length)
        .filter(|(_, acc)| acc.2 > 0)
        .map(|(&length, &(t, r, c))| LengthError {
            length,
            t_rel: t / c as f64 * to_pct,
            r_rel: r / c as f64 * to_deg100,
            segments: c,
        })
        .collect();
    let (t_rel, r_rel) = if count > 0 {
        (Some(t_sum / count as f64 * to_pct), Some(r_sum / count as f64 * to_deg100))
    } else {
        (None, None)
    };
    Ok(SegmentErrors {
        t_rel,
        r_rel,
        breakdown,
        segments: count,
        insufficient: count == 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    None,
    Se3,
    #[default]
    Sim3,
}

impl AlignMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AlignMode::None => "none",
            AlignMode::Se3 => "se3",
            AlignMode::Sim3 => "sim3",
        }
    }
}

impl std::str::FromStr for AlignMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(AlignMode::None),
            "se3" => Ok(AlignMode::Se3),
            "sim3" => Ok(AlignMode::Sim3),
            other => Err(format!("unknown alignment `{other}` (expected none, se3 or sim3)")),
        }
    }
}

/// Root-mean-square position error after the requested alignment.
pub fn ate_rmse(estimate: &Trajectory, reference: &Trajectory, align: AlignMode) -> Result<f64> {
    check_pair(estimate, reference)?;
    if estimate.is_empty() {
        return Err(GeometryError::EmptyTrajectory.into());
    }
    let aligned = match align {
        AlignMode::None => estimate.clone(),
        AlignMode::Se3 => umeyama_align(estimate, reference, false)?.aligned,
        AlignMode::Sim3 => umeyama_align(estimate, reference, true)?.aligned,
    };
    let sq: f64 = aligned
        .positions()
        .iter()
        .zip(reference.positions())
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok((sq / estimate.len() as f64).sqrt())
}

/// Slack for timestamps that fall a rounding error short of the gap.
const TIME_EPS: f64 = 1e-9;

/// Translational relative pose error over a time gap of `delta` seconds, as an RMSE
/// in meters per second. Each frame is paired with the first frame at least `delta`
/// later; timestamps come from the reference.
pub fn rpe_per_second(estimate: &Trajectory, reference: &Trajectory, delta: f64) -> Result<f64> {
    check_pair(estimate, reference)?;
    if !(delta > 0.0) {
        return Err(EvalError::Timestamps(format!("delta must be positive, got {delta}")));
    }
    let ts = reference
        .timestamps()
        .or(estimate.timestamps())
        .ok_or_else(|| EvalError::Timestamps("neither trajectory has timestamps".into()))?;
    let est = matrices(estimate);
    let gt = matrices(reference);
    let mut sq = 0.0;
    let mut pairs = 0usize;
    for i in 0..ts.len() {
        let j = i + ts[i..].partition_point(|&t| t < ts[i] + delta - TIME_EPS);
        if j >= ts.len() {
            break;
        }
        let e = segment_error(&est, &gt, i, j);
        sq += (translation_norm(&e) / delta).powi(2);
        pairs += 1;
    }
    if pairs == 0 {
        let span = ts.last().copied().unwrap_or(0.0) - ts.first().copied().unwrap_or(0.0);
        return Err(EvalError::TooShort(format!("time span {span} s is shorter than delta {delta} s")));
    }
    Ok((sq / pairs as f64).sqrt())
}

/// Matching window used when pairing timestamps.
pub const ASSOCIATION_WINDOW: f64 = 0.02;
/// Largest tolerated fraction of unmatched estimate timestamps.
pub const MAX_UNMATCHED_FRACTION: f64 = 0.1;

/// Pairs estimate and reference poses by nearest timestamp within `window` seconds.
/// Candidate pairs are taken in order of increasing time difference and each pose is
/// used at most once. Returns the matched sub-trajectories, both carrying the
/// reference timestamps.
pub fn associate(estimate: &Trajectory, reference: &Trajectory, window: f64) -> Result<(Trajectory, Trajectory)> {
    let te = estimate
        .timestamps()
        .ok_or_else(|| EvalError::Timestamps("estimate has no timestamps".into()))?;
    let tr = reference
        .timestamps()
        .ok_or_else(|| EvalError::Timestamps("reference has no timestamps".into()))?;
    let mut candidates = Vec::new();
    for (i, &t) in te.iter().enumerate() {
        let lo = tr.partition_point(|&r| r < t - window);
        for (j, &r) in tr.iter().enumerate().skip(lo) {
            if r > t + window {
                break;
            }
            candidates.push(((t - r).abs(), i, j));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut est_used = vec![None; te.len()];
    let mut ref_used = vec![false; tr.len()];
    for (_, i, j) in candidates {
        if est_used[i].is_none() && !ref_used[j] {
            est_used[i] = Some(j);
            ref_used[j] = true;
        }
    }
    let unmatched: Vec<f64> = te.iter().zip(&est_used).filter(|(_, m)| m.is_none()).map(|(t, _)| *t).collect();
    if unmatched.len() as f64 > MAX_UNMATCHED_FRACTION * te.len() as f64 || unmatched.len() == te.len() {
        return Err(EvalError::Association {
            unmatched,
            total: te.len(),
            window,
        });
    }
    let matched: Vec<(usize, usize)> = est_used.iter().enumerate().filter_map(|(i, m)| m.map(|j| (i, j))).collect();
    let stamps: Vec<f64> = matched.iter().map(|&(_, j)| tr[j]).collect();
    let est = Trajectory::with_timestamps(matched.iter().map(|&(i, _)| estimate.poses()[i]).collect(), stamps.clone())?;
    let gt = Trajectory::with_timestamps(matched.iter().map(|&(_, j)| reference.poses()[j]).collect(), stamps)?;
    Ok((est, gt))
}

/// Which metrics to compute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSelection {
    pub kitti: Option<SegmentOptions>,
    pub ate: Option<AlignMode>,
    /// RPE gap in seconds.
    pub rpe: Option<f64>,
}

impl Default for MetricSelection {
    fn default() -> Self {
        MetricSelection {
            kitti: Some(SegmentOptions::default()),
            ate: Some(AlignMode::Sim3),
            rpe: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricReport {
    pub poses: usize,
    pub t_rel: Option<f64>,
    pub r_rel: Option<f64>,
    pub segments: Option<usize>,
    pub kitti_insufficient: bool,
    pub ate_rmse: Option<f64>,
    pub ate_align: Option<AlignMode>,
    pub rpe_rmse: Option<f64>,
    pub rpe_delta: Option<f64>,
    pub breakdown: Vec<LengthError>,
}

/// Computes the selected metrics. RPE is skipped when the trajectories carry no timestamps.
pub fn evaluate(estimate: &Trajectory, reference: &Trajectory, selection: &MetricSelection) -> Result<MetricReport> {
    check_pair(estimate, reference)?;
    let mut report = MetricReport {
        poses: estimate.len(),
        ..MetricReport::default()
    };
    if let Some(opts) = &selection.kitti {
        let seg = kitti_segment_errors(estimate, reference, opts)?;
        report.t_rel = seg.t_rel;
        report.r_rel = seg.r_rel;
        report.segments = Some(seg.segments);
        report.kitti_insufficient = seg.insufficient;
        report.breakdown = seg.breakdown;
    }
    if let Some(align) = selection.ate {
        report.ate_rmse = Some(ate_rmse(estimate, reference, align)?);
        report.ate_align = Some(align);
    }
    if let Some(delta) = selection.rpe {
        if reference.timestamps().is_some() || estimate.timestamps().is_some() {
            report.rpe_rmse = Some(rpe_per_second(estimate, reference, delta)?);
            report.rpe_delta = Some(delta);
        }
    }
    Ok(report)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl MetricReport {
    pub fn is_valid(&self) -> bool {
        [self.t_rel, self.r_rel, self.ate_rmse, self.rpe_rmse]
            .iter()
            .flatten()
            .chain(self.breakdown.iter().flat_map(|b| [&b.t_rel, &b.r_rel]))
            .all(|v| v.is_finite() && *v >= 0.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text summary followed by the per-length table.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![("poses".into(), self.poses.to_string())];
        if let Some(n) = self.segments {
            rows.push(("t_rel (%)".into(), cell(self.t_rel)));
            rows.push(("r_rel (deg/100m)".into(), cell(self.r_rel)));
            let note = if self.kitti_insufficient { " (path too short)" } else { "" };
            rows.push(("segments".into(), format!("{n}{note}")));
        }
        if let Some(align) = self.ate_align {
            rows.push((format!("ate_rmse {} (m)", align.as_str()), cell(self.ate_rmse)));
        }
        if let Some(delta) = self.rpe_delta {
            rows.push((format!("rpe_rmse @{delta}s (m/s)"), cell(self.rpe_rmse)));
        }
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in &rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        if !self.breakdown.is_empty() {
            let _ = writeln!(out, "\n{:>8}  {:>10}  {:>16}  {:>8}", "length", "t_rel (%)", "r_rel (deg/100m)", "segments");
            for b in &self.breakdown {
                let _ = writeln!(out, "{:>8.0}  {:>10.4}  {:>16.4}  {:>8}", b.length, b.t_rel, b.r_rel, b.segments);
            }
        }
        out
    }
}
