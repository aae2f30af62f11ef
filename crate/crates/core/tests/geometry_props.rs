#[path = "support/oracles.rs"]
mod oracles;

use std::f64::consts::PI;

use memvo::geometry::{integrate_relative, relative_from_absolute, umeyama_align, wrap_angle, Pose, Similarity, Trajectory};
use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;

use oracles::euler_zyx;

fn pose() -> impl Strategy<Value = Pose> {
    (
        -PI..PI,
        -1.4f64..1.4,
        -PI..PI,
        prop::array::uniform3(-10.0f64..10.0),
    )
        .prop_map(|(r, p, y, t)| Pose::new([r, p, y], t))
}

fn matrix_close(a: &Pose, b: &Pose, tol: f64) -> bool {
    (a.to_matrix() - b.to_matrix()).abs().max() <= tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn rotation_matches_axis_products(p in pose()) {
        let [r, pi, y] = p.rotation();
        prop_assert!((p.rotation_matrix() - euler_zyx(r, pi, y)).abs().max() < 1e-12);
    }

    #[test]
    fn group_laws(a in pose(), b in pose(), c in pose()) {
        let id = Pose::identity();
        prop_assert!(matrix_close(&a.compose(&id), &a, 1e-9));
        prop_assert!(matrix_close(&id.compose(&a), &a, 1e-9));
        prop_assert!(matrix_close(&a.compose(&a.inverse()), &id, 1e-9));
        prop_assert!(matrix_close(&a.inverse().compose(&a), &id, 1e-9));
        let left = a.compose(&b).compose(&c);
        let right = a.compose(&b.compose(&c));
        prop_assert!(matrix_close(&left, &right, 1e-9));
        let product = a.to_matrix() * b.to_matrix();
        prop_assert!((a.compose(&b).to_matrix() - product).abs().max() < 1e-9);
    }

    #[test]
    fn matrix_round_trip(a in pose()) {
        let back = Pose::from_matrix(&a.to_matrix(), 1e-9).unwrap();
        prop_assert!(matrix_close(&a, &back, 1e-9));
    }

    #[test]
    fn integrate_then_decompose(rels in prop::collection::vec(pose(), 1..20), origin in pose()) {
        let traj = integrate_relative(&rels, origin);
        prop_assert_eq!(traj.len(), rels.len() + 1);
        let back = relative_from_absolute(&traj).unwrap();
        for (r, b) in rels.iter().zip(&back) {
            prop_assert!(matrix_close(r, b, 1e-9));
        }
    }

    #[test]
    fn wrap_stays_in_half_open_interval(a in -100.0f64..100.0) {
        let w = wrap_angle(a);
        prop_assert!(w > -PI && w <= PI);
        prop_assert!(((a - w) / (2.0 * PI)).fract().abs() < 1e-9 || (1.0 - ((a - w) / (2.0 * PI)).fract().abs()) < 1e-9);
    }

    #[test]
    fn umeyama_recovers_similarity(
        n in 4usize..40,
        scale in 0.5f64..3.0,
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.0f64..3.0,
        shift in prop::array::uniform3(-5.0f64..5.0),
        seed in 0u64..10_000,
    ) {
        let axis = Vector3::from(axis);
        prop_assume!(axis.norm() > 0.1);
        let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner();
        let truth = Similarity { scale, rotation: rot, translation: Vector3::from(shift) };
        let est = Trajectory::new((0..n).map(|i| {
            let f = i as f64 + seed as f64 * 0.01;
            Pose::from_translation([f.sin() * 3.0, (1.7 * f).cos() * 2.0, 0.3 * f])
        }).collect());
        let reference = truth.apply_trajectory(&est);
        let fit = umeyama_align(&est, &reference, true).unwrap();
        prop_assert!((fit.transform.scale - scale).abs() < 1e-9);
        prop_assert!((fit.transform.rotation - rot).abs().max() < 1e-9);
        prop_assert!((fit.transform.translation - Vector3::from(shift)).abs().max() < 1e-9);
    }
}

#[test]
fn yaw_quarter_turn_matrix() {
    let p = Pose::new([0.0, 0.0, PI / 2.0], [1.0, 0.0, 0.0]);
    let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    assert!((p.rotation_matrix() - expected).abs().max() < 1e-15);
}
