//! Reference implementations written without the library's own helpers.

#![allow(dead_code)]

use memvo::geometry::{integrate_relative, Pose, Trajectory};
use nalgebra::Matrix3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Stored steps by direct replay of the admission rule.
pub fn replay(poses: &[Pose], rot: f64, trans: f64) -> Vec<usize> {
    let ang = |a: f64| a.sin().atan2(a.cos());
    let mut stored = vec![0];
    let mut anchor = poses[0];
    for (t, p) in poses.iter().enumerate().skip(1) {
        let (ra, rb) = (p.rotation(), anchor.rotation());
        let (ta, tb) = (p.translation(), anchor.translation());
        let dr = (0..3).map(|i| ang(ra[i] - rb[i]).powi(2)).sum::<f64>().sqrt();
        let dt = (0..3).map(|i| (ta[i] - tb[i]).powi(2)).sum::<f64>().sqrt();
        if dr >= rot || dt >= trans {
            stored.push(t);
            anchor = *p;
        }
    }
    stored
}

/// Absolute poses of a forward-driving walk with small rotations, one per step.
pub fn pose_walk(rng: &mut ChaCha8Rng, steps: usize) -> Vec<Pose> {
    let rels: Vec<Pose> = (0..steps)
        .map(|_| {
            let r = [rng.random_range(-0.006..0.006), rng.random_range(-0.006..0.006), rng.random_range(-0.006..0.006)];
            Pose::new(r, [rng.random_range(-0.1..0.1), 0.0, rng.random_range(0.0..0.8)])
        })
        .collect();
    integrate_relative(&rels, Pose::identity()).poses()[1..].to_vec()
}

pub fn random_walk(rng: &mut ChaCha8Rng, n: usize, speed: f64) -> Trajectory {
    let rels: Vec<Pose> = (0..n - 1)
        .map(|_| {
            Pose::new(
                [rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.05..0.05)],
                [rng.random_range(-0.1..0.1), rng.random_range(-0.05..0.05), speed + rng.random_range(-0.2..0.2)],
            )
        })
        .collect();
    integrate_relative(&rels, Pose::identity())
}

pub fn perturb(rng: &mut ChaCha8Rng, traj: &Trajectory) -> Trajectory {
    Trajectory::new(
        traj.poses()
            .iter()
            .map(|p| {
                let d = Pose::new(
                    [rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01)],
                    [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)],
                );
                p.compose(&d)
            })
            .collect(),
    )
}

/// Segment drift by a double loop over starts and lengths: `(t_rel %, r_rel deg/100m, segments)`.
pub fn brute_force_segments(est: &Trajectory, gt: &Trajectory, lengths: &[f64], step: usize) -> (f64, f64, usize) {
    let (e, g) = (est.poses(), gt.poses());
    let mut dist = vec![0.0];
    for i in 1..g.len() {
        let (a, b) = (g[i - 1].translation(), g[i].translation());
        let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        dist.push(dist[i - 1] + d);
    }
    let (mut t, mut r, mut n) = (0.0, 0.0, 0);
    let mut first = 0;
    while first < g.len() {
        for &len in lengths {
            let Some(last) = (first..g.len()).find(|&j| dist[j] >= dist[first] + len) else { continue };
            let de = e[first].inverse().compose(&e[last]);
            let dg = g[first].inverse().compose(&g[last]);
            let err = de.inverse().compose(&dg);
            let [x, y, z] = err.translation();
            t += (x * x + y * y + z * z).sqrt() / len;
            let m = err.rotation_matrix();
            let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
            r += (((tr - 1.0) / 2.0).clamp(-1.0, 1.0)).acos() / len;
            n += 1;
        }
        first += step;
    }
    let k = 180.0 / std::f64::consts::PI;
    (t / n as f64 * 100.0, r / n as f64 * 100.0 * k, n)
}

/// Rotation from explicit axis products, independent of the pose code.
pub fn euler_zyx(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, roll.cos(), -roll.sin(), 0.0, roll.sin(), roll.cos());
    let ry = Matrix3::new(pitch.cos(), 0.0, pitch.sin(), 0.0, 1.0, 0.0, -pitch.sin(), 0.0, pitch.cos());
    let rz = Matrix3::new(yaw.cos(), -yaw.sin(), 0.0, yaw.sin(), yaw.cos(), 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}
