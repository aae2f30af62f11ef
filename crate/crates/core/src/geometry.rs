//! Rigid-body poses with an Euler-angle parameterization, trajectory
//! integration, the motion distances used for memory selection, and
//! least-squares similarity alignment.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("matrix is not a rigid transform: {0}")]
    NonRigid(String),
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("trajectory lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid timestamps: {0}")]
    Timestamps(String),
    #[error("alignment failed: {0}")]
    Alignment(String),
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

/// Default orthonormality tolerance for matrix to pose conversion.
pub const RIGID_TOLERANCE: f64 = 1e-6;

/// Distance from +-pi/2 pitch below which roll is pinned to zero.
const GIMBAL_EPS: f64 = 1e-6;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// 6-DoF pose: Euler angles `(roll, pitch, yaw)` composed as `Rz(yaw) Ry(pitch) Rx(roll)`,
/// and a translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    rotation: [f64; 3],
    translation: [f64; 3],
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    /// Builds a pose, wrapping each Euler angle into `(-pi, pi]`.
    pub fn new(rotation: [f64; 3], translation: [f64; 3]) -> Self {
        Pose {
            rotation: rotation.map(wrap_angle),
            translation,
        }
    }

    pub fn identity() -> Self {
        Pose {
            rotation: [0.0; 3],
            translation: [0.0; 3],
        }
    }

    pub fn from_translation(translation: [f64; 3]) -> Self {
        Pose::new([0.0; 3], translation)
    }

    /// Splits a `[tx, ty, tz, roll, pitch, yaw]` vector.
    pub fn from_vector6(v: &[f64]) -> Self {
        assert_eq!(v.len(), 6, "pose vector must have 6 entries");
        Pose::new([v[3], v[4], v[5]], [v[0], v[1], v[2]])
    }

    /// `[tx, ty, tz, roll, pitch, yaw]`.
    pub fn to_vector6(&self) -> [f64; 6] {
        let [tx, ty, tz] = self.translation;
        let [r, p, y] = self.rotation;
        [tx, ty, tz, r, p, y]
    }

    /// `(roll, pitch, yaw)` in radians.
    pub fn rotation(&self) -> [f64; 3] {
        self.rotation
    }

    pub fn translation(&self) -> [f64; 3] {
        self.translation
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let [roll, pitch, yaw] = self.rotation;
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let (sy, cy) = yaw.sin_cos();
        Matrix3::new(
            cy * cp,
            cy * sp * sr - sy * cr,
            cy * sp * cr + sy * sr,
            sy * cp,
            sy * sp * sr + cy * cr,
            sy * sp * cr - cy * sr,
            -sp,
            cp * sr,
            cp * cr,
        )
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let r = self.rotation_matrix();
        let t = self.translation;
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m[(0, 3)] = t[0];
        m[(1, 3)] = t[1];
        m[(2, 3)] = t[2];
        m
    }

    /// Inverse of [`Pose::to_matrix`]; rejects matrices that are not rigid within `tolerance`.
    pub fn from_matrix(m: &Matrix4<f64>, tolerance: f64) -> Result<Pose> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom
            .iter()
            .zip([0.0, 0.0, 0.0, 1.0])
            .any(|(a, b)| (a - b).abs() > tolerance)
        {
            return Err(GeometryError::NonRigid(format!("bottom row {bottom:?}")));
        }
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        Pose::from_rotation(&r, [m[(0, 3)], m[(1, 3)], m[(2, 3)]], tolerance)
    }

    pub fn from_rotation(r: &Matrix3<f64>, translation: [f64; 3], tolerance: f64) -> Result<Pose> {
        check_rotation(r, tolerance)?;
        Ok(Pose::from_rotation_unchecked(r, translation))
    }

    /// Euler extraction without orthonormality checks.
    pub(crate) fn from_rotation_unchecked(r: &Matrix3<f64>, translation: [f64; 3]) -> Pose {
        let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
        let (roll, yaw) = if FRAC_PI_2 - pitch.abs() < GIMBAL_EPS {
            (0.0, (-r[(0, 1)]).atan2(r[(1, 1)]))
        } else {
            (r[(2, 1)].atan2(r[(2, 2)]), r[(1, 0)].atan2(r[(0, 0)]))
        };
        Pose::new([roll, pitch, yaw], translation)
    }

    /// `self * other` as homogeneous transforms.
    pub fn compose(&self, other: &Pose) -> Pose {
        let ra = self.rotation_matrix();
        let r = ra * other.rotation_matrix();
        let t = ra * other.translation_vector() + self.translation_vector();
        Pose::from_rotation_unchecked(&r, [t.x, t.y, t.z])
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation_matrix().transpose();
        let t = -(rt * self.translation_vector());
        Pose::from_rotation_unchecked(&rt, [t.x, t.y, t.z])
    }

    /// Rotation angle of the pose's rotation matrix, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_matrix_angle(&self.rotation_matrix())
    }
}

/// Angle of a rotation matrix from its trace.
pub fn rotation_matrix_angle(r: &Matrix3<f64>) -> f64 {
    (0.5 * (r.trace() - 1.0)).clamp(-1.0, 1.0).acos()
}

fn check_rotation(r: &Matrix3<f64>, tolerance: f64) -> Result<()> {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    if ortho > tolerance {
        return Err(GeometryError::NonRigid(format!(
            "rotation deviates from orthonormal by {ortho:e}"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > tolerance {
        return Err(GeometryError::NonRigid(format!("rotation determinant {det}")));
    }
    Ok(())
}

/// L2 norm of the per-axis shortest signed Euler-angle difference.
pub fn rotation_distance(a: &Pose, b: &Pose) -> f64 {
    a.rotation
        .iter()
        .zip(&b.rotation)
        .map(|(x, y)| wrap_angle(x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn translation_distance(a: &Pose, b: &Pose) -> f64 {
    a.translation
        .iter()
        .zip(&b.translation)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Ordered absolute poses with optional timestamps in seconds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    poses: Vec<Pose>,
    timestamps: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Self {
        Trajectory {
            poses,
            timestamps: None,
        }
    }

    /// Timestamps must match the pose count and strictly increase.
    pub fn with_timestamps(poses: Vec<Pose>, timestamps: Vec<f64>) -> Result<Self> {
        if poses.len() != timestamps.len() {
            return Err(GeometryError::Timestamps(format!(
                "{} timestamps for {} poses",
                timestamps.len(),
                poses.len()
            )));
        }
        if let Some(i) = timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(GeometryError::Timestamps(format!(
                "timestamp {} at index {} does not increase past {}",
                timestamps[i + 1],
                i + 1,
                timestamps[i]
            )));
        }
        Ok(Trajectory {
            poses,
            timestamps: Some(timestamps),
        })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn timestamps(&self) -> Option<&[f64]> {
        self.timestamps.as_deref()
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(Pose::translation_vector).collect()
    }

    /// Applies `transform` on the left of every pose.
    pub fn transformed(&self, transform: &Pose) -> Trajectory {
        Trajectory {
            poses: self.poses.iter().map(|p| transform.compose(p)).collect(),
            timestamps: self.timestamps.clone(),
        }
    }
}

/// Accumulates relative motions onto `origin`: `abs[t] = abs[t-1] * rel[t]`.
pub fn integrate_relative(relatives: &[Pose], origin: Pose) -> Trajectory {
    let mut poses = Vec::with_capacity(relatives.len() + 1);
    poses.push(origin);
    let mut current = origin;
    for rel in relatives {
        current = current.compose(rel);
        poses.push(current);
    }
    Trajectory::new(poses)
}

/// `rel[t] = abs[t-1]^-1 * abs[t]`, one fewer entry than the trajectory.
pub fn relative_from_absolute(traj: &Trajectory) -> Result<Vec<Pose>> {
    if traj.is_empty() {
        return Err(GeometryError::EmptyTrajectory);
    }
    Ok(traj
        .poses
        .windows(2)
        .map(|w| w[0].inverse().compose(&w[1]))
        .collect())
}

/// Similarity transform `x -> s R x + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    /// Moves the pose's position through the similarity and rotates its orientation.
    pub fn apply_pose(&self, pose: &Pose) -> Pose {
        let r = self.rotation * pose.rotation_matrix();
        let p = self.apply_point(&pose.translation_vector());
        Pose::from_rotation_unchecked(&r, [p.x, p.y, p.z])
    }

    pub fn apply_trajectory(&self, traj: &Trajectory) -> Trajectory {
        Trajectory {
            poses: traj.poses.iter().map(|p| self.apply_pose(p)).collect(),
            timestamps: traj.timestamps.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Alignment {
    pub transform: Similarity,
    pub aligned: Trajectory,
}

/// Closed-form least-squares alignment of `estimate` positions onto `reference`
/// positions (Umeyama). With `with_scale == false` the scale is fixed to one.
pub fn umeyama_align(estimate: &Trajectory, reference: &Trajectory, with_scale: bool) -> Result<Alignment> {
    if estimate.len() != reference.len() {
        return Err(GeometryError::LengthMismatch(estimate.len(), reference.len()));
    }
    let n = estimate.len();
    if n < 3 {
        return Err(GeometryError::Alignment(format!("need at least 3 poses, got {n}")));
    }
    let xs = estimate.positions();
    let ys = reference.positions();
    let inv_n = 1.0 / n as f64;
    let mu_x = xs.iter().sum::<Vector3<f64>>() * inv_n;
    let mu_y = ys.iter().sum::<Vector3<f64>>() * inv_n;
    let var_x = xs.iter().map(|x| (x - mu_x).norm_squared()).sum::<f64>() * inv_n;
    let mut cov = Matrix3::zeros();
    for (x, y) in xs.iter().zip(&ys) {
        cov += (y - mu_y) * (x - mu_x).transpose();
    }
    cov *= inv_n;

    let spread = var_x.max(ys.iter().map(|y| (y - mu_y).norm_squared()).sum::<f64>() * inv_n);
    if var_x <= 1e-24 || cov.abs().max() <= 1e-15 * spread.max(1e-300) {
        return Err(GeometryError::Alignment("degenerate point spread".into()));
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::Alignment("SVD did not converge".into())),
    };
    let d = svd.singular_values;
    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let scale = if with_scale {
        (d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)]) / var_x
    } else {
        1.0
    };
    if !(scale > 0.0) {
        return Err(GeometryError::Alignment(format!("non-positive scale {scale}")));
    }
    let translation = mu_y - scale * (rotation * mu_x);
    let transform = Similarity {
        scale,
        rotation,
        translation,
    };
    let aligned = transform.apply_trajectory(estimate);
    Ok(Alignment { transform, aligned })
}
