//! Relative (local), absolute (global) and total pose losses.
//!
//! Predictions are `[tx, ty, tz, roll, pitch, yaw]` graph nodes; targets are
//! poses. Rotation residuals are wrapped per axis to the shortest signed angle
//! before taking the norm; the wrap is a constant shift, so gradients pass
//! through unchanged.

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Pose};
use crate::tensor::{Graph, Result, Tensor, TensorError, Var};

/// Rotation-balance factor `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub k: f64,
}

impl LossWeights {
    pub const KITTI: LossWeights = LossWeights { k: 100.0 };
    pub const TUM: LossWeights = LossWeights { k: 1.0 };

    pub fn new(k: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(TensorError::invalid("loss", format!("k must be positive and finite, got {k}")));
        }
        Ok(LossWeights { k })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights::KITTI
    }
}

/// `|t_hat - t| + k |wrap(phi_hat - phi)|` for one step.
fn pose_error(graph: &mut Graph, pred: Var, target: &Pose, k: f64) -> Result<Var> {
    let shape = graph.value(pred).shape().to_vec();
    if shape != [6] {
        return Err(TensorError::invalid("loss", format!("pose prediction must be [6], got {shape:?}")));
    }
    let values = graph.value(pred).data().to_vec();
    let t = target.translation();
    let r = target.rotation();
    let trans = graph.slice_vec(pred, 0, 3)?;
    let trans_err = graph.add_const(trans, &Tensor::vector(t.iter().map(|v| -v).collect()))?;
    // Offset each rotation residual by the nearest multiple of 2 pi.
    let rot_offset: Vec<f64> = (0..3)
        .map(|i| {
            let raw = values[3 + i] - r[i];
            wrap_angle(raw) - raw - r[i]
        })
        .collect();
    let rot = graph.slice_vec(pred, 3, 3)?;
    let rot_err = graph.add_const(rot, &Tensor::vector(rot_offset))?;
    let tn = graph.norm(trans_err);
    let rn = graph.norm(rot_err);
    let rn = graph.scale(rn, k);
    graph.add(tn, rn)
}

fn check_lengths(pred: usize, target: usize) -> Result<()> {
    if pred != target {
        return Err(TensorError::invalid("loss", format!("{pred} predictions for {target} targets")));
    }
    if pred == 0 {
        return Err(TensorError::invalid("loss", "empty pose lists"));
    }
    Ok(())
}

/// Mean over steps of the per-step relative pose error.
pub fn local_loss(graph: &mut Graph, pred_rel: &[Var], gt_rel: &[Pose], weights: LossWeights) -> Result<Var> {
    check_lengths(pred_rel.len(), gt_rel.len())?;
    let terms = pred_rel
        .iter()
        .zip(gt_rel)
        .map(|(&p, t)| pose_error(graph, p, t, weights.k))
        .collect::<Result<Vec<_>>>()?;
    let total = graph.sum_scalars(&terms)?;
    Ok(graph.scale(total, 1.0 / terms.len() as f64))
}

/// Sum over steps `i = 1..` of the absolute pose error weighted by `1 / i`.
pub fn global_loss(graph: &mut Graph, pred_abs: &[Var], gt_abs: &[Pose], weights: LossWeights) -> Result<Var> {
    check_lengths(pred_abs.len(), gt_abs.len())?;
    let terms = pred_abs
        .iter()
        .zip(gt_abs)
        .enumerate()
        .map(|(i, (&p, t))| {
            let e = pose_error(graph, p, t, weights.k)?;
            Ok(graph.scale(e, 1.0 / (i + 1) as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    graph.sum_scalars(&terms)
}

pub fn total_loss(graph: &mut Graph, local: Var, global: Var) -> Result<Var> {
    graph.add(local, global)
}

fn pose_constants(graph: &mut Graph, poses: &[Pose]) -> Vec<Var> {
    poses
        .iter()
        .map(|p| graph.constant(Tensor::vector(p.to_vector6().to_vec())))
        .collect()
}

/// [`local_loss`] evaluated on plain poses.
pub fn local_loss_value(pred_rel: &[Pose], gt_rel: &[Pose], weights: LossWeights) -> Result<f64> {
    let mut g = Graph::new();
    let vars = pose_constants(&mut g, pred_rel);
    let l = local_loss(&mut g, &vars, gt_rel, weights)?;
    Ok(g.value(l).item())
}

/// [`global_loss`] evaluated on plain poses.
pub fn global_loss_value(pred_abs: &[Pose], gt_abs: &[Pose], weights: LossWeights) -> Result<f64> {
    let mut g = Graph::new();
    let vars = pose_constants(&mut g, pred_abs);
    let l = global_loss(&mut g, &vars, gt_abs, weights)?;
    Ok(g.value(l).item())
}
