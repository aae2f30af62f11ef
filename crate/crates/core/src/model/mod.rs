//! The odometry network: encoder, tracking ConvLSTM with a relative-pose head,
//! adaptive memory, attention-guided refining ConvLSTM with an absolute-pose head.

mod attention;
mod cell;
mod memory;

pub use attention::{channel_weights, spatial_channel_attention, temporal_attention, AttentionMode, MemoryReadout};
pub use cell::{convlstm_step, se3_layer, ConvLstmCell, LstmState, PoseHead};
pub use memory::{MemoryBuffer, MemorySlot, MemoryThresholds};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{integrate_relative, Pose, Trajectory};
use crate::tensor::{Bound, Checkpoint, Graph, ParamId, ParamStore, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub channels: usize,
    pub stride: usize,
}

/// Convolutional encoder over a channel-stacked image pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Channels of the stacked pair (twice the per-image channels).
    pub input_channels: usize,
    pub layers: Vec<EncoderLayer>,
}

impl EncoderConfig {
    pub fn cumulative_stride(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoModelConfig {
    /// Feature channels `C` entering the recurrent branches.
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// When set, inputs are image pairs and are encoded to `[C, H, W]` first.
    #[serde(default)]
    pub encoder: Option<EncoderConfig>,
    /// Hidden channels of both ConvLSTMs; equal to `channels` because channel
    /// attention pairs guidance channels with feature channels.
    pub hidden_channels: usize,
    /// Output channels of the two fusion convolutions.
    pub fusion_channels: usize,
    pub thresholds: MemoryThresholds,
    pub buffer_capacity: usize,
    pub attention: AttentionMode,
    pub sequence_length: usize,
}

impl Default for VoModelConfig {
    fn default() -> Self {
        VoModelConfig {
            channels: 8,
            height: 8,
            width: 8,
            encoder: None,
            hidden_channels: 8,
            fusion_channels: 8,
            thresholds: MemoryThresholds::KITTI,
            buffer_capacity: 11,
            attention: AttentionMode::Full,
            sequence_length: 11,
        }
    }
}

impl VoModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return err(format!(
                "feature shape {}x{}x{} must be positive",
                self.channels, self.height, self.width
            ));
        }
        if self.hidden_channels != self.channels {
            return err(format!(
                "hidden_channels ({}) must equal channels ({})",
                self.hidden_channels, self.channels
            ));
        }
        if self.fusion_channels == 0 {
            return err("fusion_channels must be positive".into());
        }
        if self.buffer_capacity == 0 {
            return err("buffer_capacity must be at least 1".into());
        }
        if self.sequence_length < 2 {
            return err(format!("sequence_length {} is below 2", self.sequence_length));
        }
        let t = self.thresholds;
        if !(t.rotation >= 0.0) || !(t.translation >= 0.0) {
            return err(format!("thresholds must be non-negative, got {t:?}"));
        }
        if let Some(enc) = &self.encoder {
            if enc.layers.is_empty() || enc.input_channels == 0 {
                return err("encoder needs input channels and at least one layer".into());
            }
            if enc.layers.iter().any(|l| l.channels == 0 || l.stride == 0) {
                return err("encoder layers need positive channels and strides".into());
            }
            if enc.layers.last().map(|l| l.channels) != Some(self.channels) {
                return err("last encoder layer must produce `channels` maps".into());
            }
        }
        Ok(())
    }

    /// Shape of one per-step input tensor.
    pub fn input_shape(&self) -> [usize; 3] {
        match &self.encoder {
            Some(enc) => {
                let s = enc.cumulative_stride();
                [enc.input_channels, self.height * s, self.width * s]
            }
            None => [self.channels, self.height, self.width],
        }
    }

    /// Number of per-step inputs in one sequence (one per consecutive frame pair).
    pub fn steps(&self) -> usize {
        self.sequence_length - 1
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Layout {
    encoder: Vec<(ConvIds, usize)>,
    tracking: ConvIds,
    tracking_head: ConvIds,
    fusion: [ConvIds; 2],
    refining: ConvIds,
    refining_head: ConvIds,
}

/// Graph handles of all parameters for one forward pass.
#[derive(Debug, Clone)]
pub struct ModelVars {
    encoder: Vec<(Var, Var, usize)>,
    pub tracking: ConvLstmCell,
    pub tracking_head: PoseHead,
    fusion: [(Var, Var); 2],
    pub refining: ConvLstmCell,
    pub refining_head: PoseHead,
}

/// Memory selection and attention traces of one sequence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Steps whose tracking state entered the memory, in order.
    pub stored_steps: Vec<usize>,
    /// Steps of the slots left in the buffer once tracking finished.
    pub buffer_steps: Vec<usize>,
    /// Temporal weights used at each refining step.
    pub alpha: Vec<Vec<f64>>,
}

/// Graph-level result of [`VoModel::forward_sequence`].
#[derive(Debug, Clone)]
pub struct SequenceOutput {
    /// `[6]` relative pose per step.
    pub relative: Vec<Var>,
    /// `[6]` absolute pose per step from the refining head; absent without refining.
    pub absolute: Option<Vec<Var>>,
    pub relative_poses: Vec<Pose>,
    /// Absolute estimates for frames `1..=steps` (origin excluded).
    pub absolute_poses: Vec<Pose>,
    pub diagnostics: Diagnostics,
}

/// Value-level prediction for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub relative: Vec<Pose>,
    pub absolute: Vec<Pose>,
    pub diagnostics: Diagnostics,
}

impl Prediction {
    /// Absolute trajectory including the identity origin.
    pub fn trajectory(&self) -> Trajectory {
        let mut poses = Vec::with_capacity(self.absolute.len() + 1);
        poses.push(Pose::identity());
        poses.extend_from_slice(&self.absolute);
        Trajectory::new(poses)
    }
}

/// Serialized model: configuration plus parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub config: VoModelConfig,
    #[serde(flatten)]
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone)]
pub struct VoModel {
    config: VoModelConfig,
    params: ParamStore,
    layout: Layout,
}

fn kaiming(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| normal.sample(rng))
}

fn register_conv(
    params: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    path: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
) -> Result<ConvIds> {
    let weight = params.register(format!("{path}.weight"), kaiming(rng, &[c_out, c_in, k, k], c_in * k * k))?;
    let bias = params.register(format!("{path}.bias"), Tensor::zeros(&[c_out]))?;
    Ok(ConvIds { weight, bias })
}

fn register_head(params: &mut ParamStore, rng: &mut ChaCha8Rng, path: &str, c_in: usize) -> Result<ConvIds> {
    let weight = params.register(format!("{path}.weight"), kaiming(rng, &[6, c_in], c_in))?;
    let bias = params.register(format!("{path}.bias"), Tensor::zeros(&[6]))?;
    Ok(ConvIds { weight, bias })
}

impl VoModel {
    /// Fan-in scaled normal initialization, deterministic per `seed`.
    pub fn new(config: VoModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut encoder = Vec::new();
        if let Some(enc) = &config.encoder {
            let mut c_in = enc.input_channels;
            for (i, layer) in enc.layers.iter().enumerate() {
                let ids = register_conv(&mut params, &mut rng, &format!("encoder.{i}"), layer.channels, c_in, 3)?;
                encoder.push((ids, layer.stride));
                c_in = layer.channels;
            }
        }
        let (c, ch, cf) = (config.channels, config.hidden_channels, config.fusion_channels);
        let tracking = register_conv(&mut params, &mut rng, "tracking.gates", 4 * ch, c + ch, 3)?;
        let tracking_head = register_head(&mut params, &mut rng, "tracking.head", ch)?;
        let fusion = [
            register_conv(&mut params, &mut rng, "refining.fusion.0", cf, ch + c, 3)?,
            register_conv(&mut params, &mut rng, "refining.fusion.1", cf, cf, 3)?,
        ];
        let refining = register_conv(&mut params, &mut rng, "refining.gates", 4 * ch, cf + ch, 3)?;
        let refining_head = register_head(&mut params, &mut rng, "refining.head", ch)?;
        Ok(VoModel {
            config,
            params,
            layout: Layout {
                encoder,
                tracking,
                tracking_head,
                fusion,
                refining,
                refining_head,
            },
        })
    }

    pub fn config(&self) -> &VoModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Changes the ablation mode; parameters are shared by all modes.
    pub fn set_attention(&mut self, mode: AttentionMode) {
        self.config.attention = mode;
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            config: self.config.clone(),
            checkpoint: Checkpoint::from_store(&self.params),
        }
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        let mut model = VoModel::new(ckpt.config.clone(), 0)?;
        ckpt.checkpoint
            .apply_to(&mut model.params)
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Ok(model)
    }

    pub fn bind(&self, graph: &mut Graph) -> (Bound, ModelVars) {
        let bound = graph.bind(&self.params);
        let vars = self.resolve(&bound);
        (bound, vars)
    }

    /// Model handles for parameters already bound into a graph.
    pub fn resolve(&self, bound: &Bound) -> ModelVars {
        let l = &self.layout;
        let cell = |ids: ConvIds| ConvLstmCell {
            weight: bound.var(ids.weight),
            bias: bound.var(ids.bias),
            hidden_channels: self.config.hidden_channels,
        };
        let head = |ids: ConvIds| PoseHead {
            weight: bound.var(ids.weight),
            bias: bound.var(ids.bias),
        };
        ModelVars {
            encoder: l
                .encoder
                .iter()
                .map(|(ids, s)| (bound.var(ids.weight), bound.var(ids.bias), *s))
                .collect(),
            tracking: cell(l.tracking),
            tracking_head: head(l.tracking_head),
            fusion: l.fusion.map(|ids| (bound.var(ids.weight), bound.var(ids.bias))),
            refining: cell(l.refining),
            refining_head: head(l.refining_head),
        }
    }

    /// Encodes a channel-stacked image pair into a `[C, H, W]` feature map.
    /// Without an encoder the input must already be a feature map.
    pub fn encoder_forward(&self, graph: &mut Graph, vars: &ModelVars, image_pair: Var) -> Result<Var> {
        let shape = graph.value(image_pair).shape().to_vec();
        let expected = self.config.input_shape();
        if let Some(enc) = &self.config.encoder {
            let s = enc.cumulative_stride();
            if shape.len() == 3 && (shape[1] % s != 0 || shape[2] % s != 0) {
                return Err(ModelError::Input(format!(
                    "input spatial size {}x{} not divisible by cumulative stride {s}",
                    shape[1], shape[2]
                )));
            }
        }
        if shape != expected {
            return Err(ModelError::Input(format!("input shape {shape:?}, expected {expected:?}")));
        }
        let mut x = image_pair;
        for &(weight, bias, stride) in &vars.encoder {
            let conv = graph.conv2d(x, weight, bias, stride, 1)?;
            x = graph.leaky_relu(conv);
        }
        Ok(x)
    }

    /// One tracking update: ConvLSTM then the relative-pose head.
    pub fn tracking_step(
        &self,
        graph: &mut Graph,
        vars: &ModelVars,
        features: Var,
        state: &LstmState,
    ) -> Result<(Var, Var, LstmState)> {
        let (output, next) = convlstm_step(graph, &vars.tracking, features, state)?;
        let pose = se3_layer(graph, &vars.tracking_head, output)?;
        Ok((pose, output, next))
    }

    /// One refining update guided by the previous refining output.
    /// Returns the absolute pose, the refining output, the new state and the memory readout.
    pub fn refine_step(
        &self,
        graph: &mut Graph,
        vars: &ModelVars,
        features: Var,
        guidance: Var,
        state: &LstmState,
        memory: &[Var],
    ) -> Result<(Var, Var, LstmState, MemoryReadout)> {
        let mode = self.config.attention;
        let readout = spatial_channel_attention(graph, guidance, memory, mode)?;
        let observed = match mode {
            AttentionMode::Full => {
                let w = channel_weights(graph, guidance, features)?;
                graph.scale_channels(features, w)?
            }
            _ => features,
        };
        let stacked = graph.concat_channels(&[readout.memory, observed])?;
        let [(w0, b0), (w1, b1)] = vars.fusion;
        let f0 = graph.conv2d(stacked, w0, b0, 1, 1)?;
        let f0 = graph.leaky_relu(f0);
        let f1 = graph.conv2d(f0, w1, b1, 1, 1)?;
        let fused = graph.leaky_relu(f1);
        let (output, next) = convlstm_step(graph, &vars.refining, fused, state)?;
        let pose = se3_layer(graph, &vars.refining_head, output)?;
        Ok((pose, output, next, readout))
    }

    /// Runs tracking over every step while filling the memory with integrated
    /// tracking poses as anchors, then refining over every step against the final memory.
    pub fn forward_sequence(&self, graph: &mut Graph, vars: &ModelVars, inputs: &[Tensor]) -> Result<SequenceOutput> {
        if inputs.is_empty() {
            return Err(ModelError::Input("empty sequence".into()));
        }
        let cfg = &self.config;
        let (ch, h, w) = (cfg.hidden_channels, cfg.height, cfg.width);

        let mut features = Vec::with_capacity(inputs.len());
        for input in inputs {
            let x = graph.constant(input.clone());
            features.push(self.encoder_forward(graph, vars, x)?);
        }

        let mut state = LstmState::zeros(graph, ch, h, w);
        let mut buffer = MemoryBuffer::new(cfg.buffer_capacity);
        let mut relative = Vec::with_capacity(features.len());
        let mut relative_poses = Vec::with_capacity(features.len());
        let mut stored_steps = Vec::new();
        let mut current = Pose::identity();
        for (step, &x) in features.iter().enumerate() {
            let (pose_var, _, next) = self.tracking_step(graph, vars, x, &state)?;
            state = next;
            let pose = Pose::from_vector6(graph.value(pose_var).data());
            current = current.compose(&pose);
            if cfg.attention != AttentionMode::None && buffer.update(state.hidden, current, step, &cfg.thresholds) {
                stored_steps.push(step);
            }
            relative.push(pose_var);
            relative_poses.push(pose);
        }

        if cfg.attention == AttentionMode::None {
            let integrated = integrate_relative(&relative_poses, Pose::identity());
            return Ok(SequenceOutput {
                relative,
                absolute: None,
                relative_poses,
                absolute_poses: integrated.poses()[1..].to_vec(),
                diagnostics: Diagnostics::default(),
            });
        }

        let memory: Vec<Var> = buffer.states().copied().collect();
        let mut refine_state = LstmState::zeros(graph, ch, h, w);
        let mut guidance = graph.constant(Tensor::zeros(&[ch, h, w]));
        let mut absolute = Vec::with_capacity(features.len());
        let mut absolute_poses = Vec::with_capacity(features.len());
        let mut alpha = Vec::with_capacity(features.len());
        for &x in &features {
            let (pose_var, output, next, readout) = self.refine_step(graph, vars, x, guidance, &refine_state, &memory)?;
            refine_state = next;
            guidance = output;
            alpha.push(graph.value(readout.alpha).data().to_vec());
            absolute_poses.push(Pose::from_vector6(graph.value(pose_var).data()));
            absolute.push(pose_var);
        }

        Ok(SequenceOutput {
            relative,
            absolute: Some(absolute),
            relative_poses,
            absolute_poses,
            diagnostics: Diagnostics {
                stored_steps,
                buffer_steps: buffer.steps(),
                alpha,
            },
        })
    }

    /// Forward pass without gradients.
    pub fn predict(&self, inputs: &[Tensor]) -> Result<Prediction> {
        let mut graph = Graph::new();
        let (_, vars) = self.bind(&mut graph);
        let out = self.forward_sequence(&mut graph, &vars, inputs)?;
        Ok(Prediction {
            relative: out.relative_poses,
            absolute: out.absolute_poses,
            diagnostics: out.diagnostics,
        })
    }
}
