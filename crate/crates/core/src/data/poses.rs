//! KITTI (12 reals per line) and TUM (`timestamp tx ty tz qx qy qz qw`) pose files.

use nalgebra::{Matrix4, UnitQuaternion, Quaternion};
use serde::{Deserialize, Serialize};

use super::{DataError, Result};
use crate::geometry::{Pose, Trajectory};

/// Rotation orthonormality tolerance accepted from KITTI files.
const KITTI_RIGID_TOLERANCE: f64 = 1e-4;
/// Quaternions further than this from unit norm are rejected, closer ones renormalized.
const QUATERNION_NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseFormat {
    Kitti,
    Tum,
}

impl std::str::FromStr for PoseFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "kitti" => Ok(PoseFormat::Kitti),
            "tum" => Ok(PoseFormat::Tum),
            other => Err(format!("unknown pose format `{other}`")),
        }
    }
}

fn parse_fields(line_no: usize, line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::Parse {
                    line: line_no,
                    msg: format!("`{tok}` is not a finite number"),
                })
        })
        .collect()
}

pub fn parse_kitti_poses(text: &str) -> Result<Trajectory> {
    let mut poses = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f = parse_fields(line_no, line)?;
        if f.len() != 12 {
            return Err(DataError::Parse {
                line: line_no,
                msg: format!("expected 12 values, found {}", f.len()),
            });
        }
        let m = Matrix4::new(
            f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8], f[9], f[10], f[11], 0.0, 0.0, 0.0, 1.0,
        );
        let pose = Pose::from_matrix(&m, KITTI_RIGID_TOLERANCE).map_err(|e| DataError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        poses.push(pose);
    }
    Ok(Trajectory::new(poses))
}

pub fn parse_tum_trajectory(text: &str) -> Result<Trajectory> {
    let mut poses = Vec::new();
    let mut stamps: Vec<f64> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let f = parse_fields(line_no, trimmed)?;
        if f.len() != 8 {
            return Err(DataError::Parse {
                line: line_no,
                msg: format!("expected 8 values, found {}", f.len()),
            });
        }
        if let Some(&prev) = stamps.last() {
            if !(f[0] > prev) {
                return Err(DataError::Parse {
                    line: line_no,
                    msg: format!("timestamp {} does not increase past {prev}", f[0]),
                });
            }
        }
        let q = Quaternion::new(f[7], f[4], f[5], f[6]);
        let norm = q.norm();
        if norm < 1e-12 || (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(DataError::Parse {
                line: line_no,
                msg: format!("quaternion norm {norm} is not unit"),
            });
        }
        let rot = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        let pose = Pose::from_rotation(rot.matrix(), [f[1], f[2], f[3]], 1e-9).map_err(|e| DataError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        stamps.push(f[0]);
        poses.push(pose);
    }
    Ok(Trajectory::with_timestamps(poses, stamps)?)
}

/// Guesses the format from the field count of the first data line.
pub fn detect_format(text: &str) -> Option<PoseFormat> {
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))?;
    match line.split_whitespace().count() {
        12 => Some(PoseFormat::Kitti),
        8 => Some(PoseFormat::Tum),
        _ => None,
    }
}

pub fn parse_trajectory(text: &str, format: PoseFormat) -> Result<Trajectory> {
    match format {
        PoseFormat::Kitti => parse_kitti_poses(text),
        PoseFormat::Tum => parse_tum_trajectory(text),
    }
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes with 17 significant digits so every value parses back exactly.
pub fn write_trajectory(traj: &Trajectory, format: PoseFormat) -> Result<String> {
    let mut out = String::new();
    match format {
        PoseFormat::Kitti => {
            for pose in traj.poses() {
                let m = pose.to_matrix();
                let row: Vec<String> = (0..3)
                    .flat_map(|r| (0..4).map(move |c| (r, c)))
                    .map(|(r, c)| fmt17(m[(r, c)]))
                    .collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        PoseFormat::Tum => {
            let stamps = traj
                .timestamps()
                .ok_or_else(|| DataError::Contract("TUM output requires timestamps".into()))?;
            out.push_str("# timestamp tx ty tz qx qy qz qw\n");
            for (pose, &t) in traj.poses().iter().zip(stamps) {
                let q = UnitQuaternion::from_matrix(&pose.rotation_matrix());
                let p = pose.translation();
                let fields = [t, p[0], p[1], p[2], q.i, q.j, q.k, q.w];
                out.push_str(&fields.map(fmt17).join(" "));
                out.push('\n');
            }
        }
    }
    Ok(out)
}
