use memvo::geometry::Pose;
use memvo::loss::{global_loss, global_loss_value, local_loss, local_loss_value, total_loss, LossWeights};
use memvo::tensor::{Graph, Tensor};
use proptest::prelude::*;

fn pose() -> impl Strategy<Value = Pose> {
    (prop::array::uniform3(-3.0f64..3.0), prop::array::uniform3(-5.0f64..5.0)).prop_map(|(r, t)| Pose::new(r, t))
}

proptest! {
    #[test]
    fn total_is_local_plus_global(
        pairs in prop::collection::vec((pose(), pose(), pose(), pose()), 1..12),
        k in 0.1f64..200.0,
    ) {
        let w = LossWeights::new(k).unwrap();
        let mut g = Graph::new();
        let leaf = |g: &mut Graph, p: &Pose| g.leaf(Tensor::vector(p.to_vector6().to_vec()));
        let rel: Vec<_> = pairs.iter().map(|(a, ..)| leaf(&mut g, a)).collect();
        let abs: Vec<_> = pairs.iter().map(|(_, _, c, _)| leaf(&mut g, c)).collect();
        let gt_rel: Vec<Pose> = pairs.iter().map(|(_, b, ..)| *b).collect();
        let gt_abs: Vec<Pose> = pairs.iter().map(|(.., d)| *d).collect();
        let l = local_loss(&mut g, &rel, &gt_rel, w).unwrap();
        let gl = global_loss(&mut g, &abs, &gt_abs, w).unwrap();
        let t = total_loss(&mut g, l, gl).unwrap();
        prop_assert_eq!(g.value(t).item(), g.value(l).item() + g.value(gl).item());
        prop_assert!(g.value(l).item() >= 0.0 && g.value(gl).item() >= 0.0);

        // Value helpers agree with the graph versions.
        let pr: Vec<Pose> = pairs.iter().map(|(a, ..)| *a).collect();
        let pa: Vec<Pose> = pairs.iter().map(|(_, _, c, _)| *c).collect();
        prop_assert!((local_loss_value(&pr, &gt_rel, w).unwrap() - g.value(l).item()).abs() < 1e-12);
        prop_assert!((global_loss_value(&pa, &gt_abs, w).unwrap() - g.value(gl).item()).abs() < 1e-12);
    }
}
