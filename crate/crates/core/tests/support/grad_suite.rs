//! Finite-difference gradient cases shared by the core tests and the acceptance runner.

use memvo::geometry::Pose;
use memvo::loss::{global_loss, local_loss, total_loss, LossWeights};
use memvo::model::{
    convlstm_step, se3_layer, spatial_channel_attention, AttentionMode, ConvLstmCell, LstmState, MemoryThresholds,
    ModelError, PoseHead, VoModel, VoModelConfig,
};
use memvo::tensor::gradcheck::{check, check_params, weighted_total, GradCheckOptions, GradCheckReport};
use memvo::tensor::{Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Entries bounded away from zero, so rectifier kinks stay outside the probe step.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

struct Case {
    name: &'static str,
    inputs: Vec<Tensor>,
    build: Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>,
}

fn case(
    name: &'static str,
    inputs: Vec<Tensor>,
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
) -> Case {
    Case {
        name,
        inputs,
        build: Box::new(build),
    }
}

/// Wraps a tensor-valued op into a scalar objective with fixed random output weights.
fn reduced(
    name: &'static str,
    inputs: Vec<Tensor>,
    out_shape: &[usize],
    rng: &mut ChaCha8Rng,
    op: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
) -> Case {
    let w = rand_tensor(rng, out_shape);
    case(name, inputs, move |g, v| {
        let out = op(g, v)?;
        weighted_total(g, out, &w)
    })
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let mut r = |s: &[usize]| rand_tensor(rng, s);
    let x233 = r(&[2, 3, 3]);
    let y233 = r(&[2, 3, 3]);
    let x455 = r(&[3, 5, 5]);
    let k = r(&[4, 3, 3, 3]);
    let b = r(&[4]);
    let shift = r(&[2, 3, 3]);
    let vec5 = r(&[5]);
    let lin_w = r(&[3, 5]);
    let lin_b = r(&[3]);
    let beta = r(&[2]);
    let parts: Vec<Tensor> = (0..3).map(|_| r(&[2, 2, 2])).collect();
    let weights3 = r(&[3]);
    let scalars: Vec<Tensor> = (0..3).map(|_| Tensor::scalar(r(&[1]).data()[0])).collect();
    let guide = r(&[2, 3, 3]);

    let kink = off_kink(rng, &[2, 3, 3]);

    let mut cases = vec![
        reduced("conv2d stride 1 pad 1", vec![x455.clone(), k.clone(), b.clone()], &[4, 5, 5], rng, |g, v| {
            g.conv2d(v[0], v[1], v[2], 1, 1)
        }),
        reduced("conv2d stride 2 pad 0", vec![x455, k, b], &[4, 2, 2], rng, |g, v| g.conv2d(v[0], v[1], v[2], 2, 0)),
        reduced("sigmoid", vec![x233.clone()], &[2, 3, 3], rng, |g, v| Ok(g.sigmoid(v[0]))),
        reduced("tanh", vec![x233.clone()], &[2, 3, 3], rng, |g, v| Ok(g.tanh(v[0]))),
        reduced("relu", vec![kink.clone()], &[2, 3, 3], rng, |g, v| Ok(g.relu(v[0]))),
        reduced("leaky_relu", vec![kink], &[2, 3, 3], rng, |g, v| Ok(g.leaky_relu(v[0]))),
        reduced("add", vec![x233.clone(), y233.clone()], &[2, 3, 3], rng, |g, v| g.add(v[0], v[1])),
        reduced("sub", vec![x233.clone(), y233.clone()], &[2, 3, 3], rng, |g, v| g.sub(v[0], v[1])),
        reduced("mul", vec![x233.clone(), y233.clone()], &[2, 3, 3], rng, |g, v| g.mul(v[0], v[1])),
        reduced("add_const", vec![x233.clone()], &[2, 3, 3], rng, move |g, v| g.add_const(v[0], &shift)),
        reduced("scale", vec![x233.clone()], &[2, 3, 3], rng, |g, v| Ok(g.scale(v[0], -1.7))),
        reduced("concat_channels", vec![x233.clone(), y233.clone()], &[4, 3, 3], rng, |g, v| {
            g.concat_channels(&[v[0], v[1]])
        }),
        reduced("slice_channels", vec![y233.clone()], &[1, 3, 3], rng, |g, v| g.slice_channels(v[0], 1, 1)),
        reduced("slice_vec", vec![vec5.clone()], &[3], rng, |g, v| g.slice_vec(v[0], 1, 3)),
        reduced("global_avg_pool", vec![x233.clone()], &[2], rng, |g, v| g.global_avg_pool(v[0])),
        reduced("linear", vec![vec5.clone(), lin_w, lin_b], &[3], rng, |g, v| g.linear(v[0], v[1], v[2])),
        reduced("softmax", vec![vec5.clone()], &[5], rng, |g, v| g.softmax(v[0])),
        reduced("cosine_similarity", vec![x233.clone(), y233.clone()], &[], rng, |g, v| {
            g.cosine_similarity(v[0], v[1])
        }),
        reduced("channel_cosine", vec![x233.clone(), y233.clone()], &[2], rng, |g, v| g.channel_cosine(v[0], v[1])),
        reduced("stack", scalars.clone(), &[3], rng, |g, v| g.stack(v)),
        reduced("scale_channels", vec![x233.clone(), beta], &[2, 3, 3], rng, |g, v| g.scale_channels(v[0], v[1])),
        reduced("weighted_sum", [parts, vec![weights3]].concat(), &[2, 2, 2], rng, |g, v| {
            g.weighted_sum(&v[..3], v[3])
        }),
        case("sum", vec![x233.clone()], |g, v| Ok(g.sum(v[0]))),
        case("norm", vec![vec5], |g, v| Ok(g.norm(v[0]))),
        case("sum_scalars", scalars, |g, v| g.sum_scalars(v)),
    ];

    let ch = 2;
    let cell_w = rand_tensor(rng, &[4 * ch, 2 + ch, 3, 3]).map(|v| 0.5 * v);
    let cell_b = rand_tensor(rng, &[4 * ch]);
    let h0 = rand_tensor(rng, &[ch, 3, 3]);
    let c0 = rand_tensor(rng, &[ch, 3, 3]);
    cases.push(reduced(
        "convlstm_step",
        vec![x233.clone(), cell_w, cell_b, h0, c0],
        &[2 * ch, 3, 3],
        rng,
        move |g, v| {
            let cell = ConvLstmCell {
                weight: v[1],
                bias: v[2],
                hidden_channels: ch,
            };
            let state = LstmState { hidden: v[3], cell: v[4] };
            let (_, next) = convlstm_step(g, &cell, v[0], &state)?;
            // The cell state feeds the next step, so its gradient is probed too.
            g.concat_channels(&[next.hidden, next.cell])
        },
    ));

    let head_w = rand_tensor(rng, &[6, 2]);
    let head_b = rand_tensor(rng, &[6]);
    cases.push(reduced("se3_layer", vec![x233.clone(), head_w, head_b], &[6], rng, |g, v| {
        let head = PoseHead { weight: v[1], bias: v[2] };
        se3_layer(g, &head, v[0])
    }));

    let slots: Vec<Tensor> = (0..3).map(|_| rand_tensor(rng, &[2, 3, 3])).collect();
    for (name, mode) in [
        ("temporal_attention", AttentionMode::TemporalOnly),
        ("spatial_channel_attention", AttentionMode::Full),
    ] {
        cases.push(reduced(name, [vec![guide.clone()], slots.clone()].concat(), &[2, 3, 3], rng, move |g, v| {
            Ok(spatial_channel_attention(g, v[0], &v[1..], mode)?.memory)
        }));
    }

    let gt: Vec<Pose> = (0..3)
        .map(|_| {
            let v = rand_tensor(rng, &[6]);
            Pose::from_vector6(v.data())
        })
        .collect();
    let preds: Vec<Tensor> = (0..3).map(|_| rand_tensor(rng, &[6])).collect();
    let gt_local = gt.clone();
    cases.push(case("local_loss", preds.clone(), move |g, v| {
        local_loss(g, v, &gt_local, LossWeights::KITTI)
    }));
    cases.push(case("global_loss", preds, move |g, v| {
        let local = local_loss(g, v, &gt, LossWeights::TUM)?;
        let global = global_loss(g, v, &gt, LossWeights::TUM)?;
        total_loss(g, local, global)
    }));
    cases
}

/// Every tensor op and model building block, checked against central differences.
pub fn op_reports(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    op_cases(&mut rng)
        .into_iter()
        .map(|c| {
            let report = check(&c.inputs, GradCheckOptions::default(), |g, v| (c.build)(g, v))
                .unwrap_or_else(|e| panic!("{}: {e}", c.name));
            (c.name, report)
        })
        .collect()
}

/// Three recurrent steps with two memory slots; zero thresholds store every step, so
/// the FIFO eviction runs inside the checked graph.
pub fn model_config(mode: AttentionMode) -> VoModelConfig {
    VoModelConfig {
        channels: 4,
        height: 6,
        width: 6,
        encoder: None,
        hidden_channels: 4,
        fusion_channels: 4,
        thresholds: MemoryThresholds {
            rotation: 0.0,
            translation: 0.0,
        },
        buffer_capacity: 2,
        attention: mode,
        sequence_length: 4,
    }
}

/// Total loss of the composed model against random targets, checked over every parameter.
pub fn model_report(mode: AttentionMode, seed: u64) -> GradCheckReport {
    model_report_with(mode, seed, GradCheckOptions::default())
}

pub fn model_report_with(mode: AttentionMode, seed: u64, opts: GradCheckOptions) -> GradCheckReport {
    let cfg = model_config(mode);
    let model = VoModel::new(cfg.clone(), seed).expect("model");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let inputs: Vec<Tensor> = (0..cfg.steps()).map(|_| rand_tensor(&mut rng, &cfg.input_shape())).collect();
    let rel: Vec<Pose> = (0..cfg.steps())
        .map(|_| {
            let v = rand_tensor(&mut rng, &[6]).map(|x| 0.1 * x);
            Pose::from_vector6(v.data())
        })
        .collect();
    let abs = memvo::geometry::integrate_relative(&rel, Pose::identity()).poses()[1..].to_vec();
    check_params(model.params(), opts, |g, bound| -> std::result::Result<Var, ModelError> {
        let vars = model.resolve(bound);
        let out = model.forward_sequence(g, &vars, &inputs)?;
        let weights = LossWeights::KITTI;
        let local = local_loss(g, &out.relative, &rel, weights)?;
        match &out.absolute {
            Some(a) => {
                let global = global_loss(g, a, &abs, weights)?;
                Ok(total_loss(g, local, global)?)
            }
            None => Ok(local),
        }
    })
    .expect("model gradient check")
}
