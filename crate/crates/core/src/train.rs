//! Run configuration and the supervised training loop.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{synth_generate, DataError, DatasetManifest, SequenceSample, SnippetPolicy, SyntheticSpec};
use crate::eval::{ate_rmse, AlignMode, EvalError};
use crate::geometry::Trajectory;
use crate::loss::{global_loss, global_loss_value, local_loss, local_loss_value, total_loss, LossWeights};
use crate::model::{AttentionMode, ModelError, VoModel, VoModelConfig};
use crate::tensor::{Adam, AdamConfig, Graph, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("non-finite loss at iteration {iteration} on {sample}: local {local}, global {global}")]
    NonFinite {
        iteration: u64,
        sample: String,
        local: f64,
        global: f64,
    },
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// The learning rate halves after every this many iterations.
    pub halve_every: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        OptimizerConfig {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            halve_every: 60_000,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Learning rate in effect for the 0-based `iteration`.
    pub fn learning_rate(&self, iteration: u64) -> f64 {
        let halvings = (iteration / self.halve_every).min(1074) as i32;
        self.lr * 0.5f64.powi(halvings)
    }
}

/// Where sequences come from. Held-out sequences follow the training ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// `spec.sequences` training sequences, then `holdout` more from the same generator.
    Synthetic { spec: SyntheticSpec, holdout: usize },
    /// Windows cut from the manifest's pose files; inputs use `encoding` (its
    /// `sequences` field is ignored). The last `holdout` windows are held out.
    Manifest {
        path: PathBuf,
        encoding: SyntheticSpec,
        policy: SnippetPolicy,
        holdout: usize,
    },
}

impl DatasetSource {
    fn encoding_mut(&mut self) -> &mut SyntheticSpec {
        match self {
            DatasetSource::Synthetic { spec, .. } => spec,
            DatasetSource::Manifest { encoding, .. } => encoding,
        }
    }

    pub fn encoding(&self) -> &SyntheticSpec {
        match self {
            DatasetSource::Synthetic { spec, .. } => spec,
            DatasetSource::Manifest { encoding, .. } => encoding,
        }
    }

    pub fn holdout(&self) -> usize {
        match self {
            DatasetSource::Synthetic { holdout, .. } | DatasetSource::Manifest { holdout, .. } => *holdout,
        }
    }

    /// Loads `(train, holdout)` samples.
    pub fn load(&self) -> Result<(Vec<SequenceSample>, Vec<SequenceSample>)> {
        match self {
            DatasetSource::Synthetic { spec, holdout } => {
                let all = synth_generate(&SyntheticSpec {
                    sequences: spec.sequences + holdout,
                    ..spec.clone()
                })?;
                let mut train = all;
                let held = train.split_off(spec.sequences);
                Ok((train, held))
            }
            DatasetSource::Manifest {
                path,
                encoding,
                policy,
                holdout,
            } => {
                let (manifest, base) = DatasetManifest::load(path)?;
                let mut train = manifest.load_samples(&base, encoding, *policy)?;
                if *holdout >= train.len() {
                    return Err(TrainError::Config(format!(
                        "holdout of {holdout} leaves no training windows out of {}",
                        train.len()
                    )));
                }
                let held = train.split_off(train.len() - holdout);
                Ok((train, held))
            }
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: VoModelConfig,
    /// Rotation weight `k` of the losses.
    pub loss_k: f64,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    pub dataset: DatasetSource,
    /// Overrides `model.attention`.
    pub ablation: AttentionMode,
    /// Frames per sequence; overrides the model and dataset lengths.
    pub sequence_length: usize,
    /// Held-out evaluation interval in iterations; 0 evaluates only at the start and end.
    pub eval_every: u64,
    /// Periodic checkpoint interval in iterations; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    /// Run directory; relative paths resolve against the output root.
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    /// Full-scale settings: 150k iterations at batch 4, halving every 60k.
    fn default() -> Self {
        RunConfig {
            model: VoModelConfig::default(),
            loss_k: LossWeights::KITTI.k,
            optimizer: OptimizerConfig::default(),
            batch_size: 4,
            iterations: 150_000,
            seed: 0,
            dataset: DatasetSource::Synthetic {
                spec: SyntheticSpec::default(),
                holdout: 20,
            },
            ablation: AttentionMode::Full,
            sequence_length: 11,
            eval_every: 0,
            checkpoint_every: 0,
            output_dir: None,
        }
    }
}

impl RunConfig {
    /// Desk-scale profile on the default synthetic data.
    pub fn toy() -> Self {
        RunConfig {
            iterations: 2000,
            seed: 7,
            loss_k: 10.0,
            optimizer: OptimizerConfig {
                lr: 1e-3,
                ..OptimizerConfig::default()
            },
            ..RunConfig::default()
        }
    }

    /// Copies the run-level overrides into the model and dataset so the snapshot is self-consistent.
    pub fn resolved(&self) -> Result<RunConfig> {
        let mut cfg = self.clone();
        cfg.model.attention = cfg.ablation;
        cfg.model.sequence_length = cfg.sequence_length;
        let shape = cfg.model.input_shape();
        let enc = cfg.dataset.encoding_mut();
        enc.sequence_length = cfg.sequence_length;
        [enc.channels, enc.height, enc.width] = shape;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(TrainError::Config(m));
        self.model.validate()?;
        self.dataset.encoding().validate()?;
        LossWeights::new(self.loss_k)?;
        let o = &self.optimizer;
        let positive = [o.lr, o.eps, 1.0 - o.beta1, 1.0 - o.beta2, o.beta1, o.beta2];
        if positive.iter().any(|v| !(*v > 0.0)) || !(o.weight_decay >= 0.0) {
            return fail(format!("optimizer settings out of range: {o:?}"));
        }
        if o.halve_every == 0 || self.batch_size == 0 {
            return fail("halve_every and batch_size must be positive".into());
        }
        if self.sequence_length < 2 {
            return fail(format!("sequence_length {} is below 2", self.sequence_length));
        }
        if self.dataset.holdout() == 0 {
            return fail("holdout must be at least 1 sequence".into());
        }
        if self.model.attention != self.ablation || self.model.sequence_length != self.sequence_length {
            return fail("model settings disagree with run overrides; call `resolved` first".into());
        }
        if let DatasetSource::Synthetic { spec, .. } = &self.dataset {
            if spec.sequences == 0 {
                return fail("synthetic dataset needs at least one training sequence".into());
            }
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { k: self.loss_k }
    }
}

/// Loss values of one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub local: f64,
    pub global: f64,
    pub total: f64,
}

/// One JSON-lines record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    /// Batch-mean losses of the update that moved the iteration counter to `iteration`.
    Train {
        iteration: u64,
        lr: f64,
        l_local: f64,
        l_global: f64,
        l_total: f64,
    },
    /// Held-out means at `iteration` completed updates.
    Validation {
        iteration: u64,
        l_local: f64,
        l_global: f64,
        l_total: f64,
        ate_sim3: f64,
    },
}

/// Loss values and parameter gradients for one sequence. Without refining the
/// objective is the local loss; the global value is reported on integrated poses.
pub fn sequence_gradients(model: &VoModel, sample: &SequenceSample, weights: LossWeights) -> Result<(LossValues, Vec<Tensor>)> {
    let mut graph = Graph::new();
    let (bound, vars) = model.bind(&mut graph);
    let out = model.forward_sequence(&mut graph, &vars, &sample.inputs)?;
    let local = local_loss(&mut graph, &out.relative, &sample.gt_relative, weights)?;
    let targets = &sample.gt_absolute[1..];
    let (objective, global) = match &out.absolute {
        Some(abs) => {
            let global = global_loss(&mut graph, abs, targets, weights)?;
            let total = total_loss(&mut graph, local, global)?;
            (total, graph.value(global).item())
        }
        None => (local, global_loss_value(&out.absolute_poses, targets, weights)?),
    };
    let local_v = graph.value(local).item();
    let values = LossValues {
        local: local_v,
        global,
        total: local_v + global,
    };
    if !values.total.is_finite() {
        return Ok((values, Vec::new()));
    }
    let grads = graph.backward(objective)?.for_params(&graph, &bound);
    Ok((values, grads))
}

/// Held-out means of the losses and the similarity-aligned ATE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldoutMetrics {
    pub losses: LossValues,
    pub ate_sim3: f64,
}

pub fn evaluate_samples(model: &VoModel, samples: &[SequenceSample], weights: LossWeights) -> Result<HoldoutMetrics> {
    if samples.is_empty() {
        return Err(TrainError::Config("no held-out samples".into()));
    }
    let (mut local, mut global, mut ate) = (0.0, 0.0, 0.0);
    for s in samples {
        let pred = model.predict(&s.inputs)?;
        let l = local_loss_value(&pred.relative, &s.gt_relative, weights)?;
        let g = global_loss_value(&pred.absolute, &s.gt_absolute[1..], weights)?;
        let reference = Trajectory::new(s.gt_absolute.clone());
        ate += ate_rmse(&pred.trajectory(), &reference, AlignMode::Sim3)?;
        local += l;
        global += g;
    }
    let n = samples.len() as f64;
    Ok(HoldoutMetrics {
        losses: LossValues {
            local: local / n,
            global: global / n,
            total: (local + global) / n,
        },
        ate_sim3: ate / n,
    })
}

/// Stateful training run over a resolved configuration.
#[derive(Debug)]
pub struct Trainer {
    config: RunConfig,
    model: VoModel,
    adam: Adam,
    train: Vec<SequenceSample>,
    holdout: Vec<SequenceSample>,
    rng: ChaCha8Rng,
    iteration: u64,
}

impl Trainer {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let config = config.resolved()?;
        let (train, holdout) = config.dataset.load()?;
        if train.is_empty() {
            return Err(TrainError::Config("dataset produced no training sequences".into()));
        }
        let model = VoModel::new(config.model.clone(), config.seed)?;
        let adam = Adam::new(config.optimizer.adam(), model.params());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Trainer {
            config,
            model,
            adam,
            train,
            holdout,
            rng,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn model(&self) -> &VoModel {
        &self.model
    }

    pub fn into_model(self) -> VoModel {
        self.model
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn holdout(&self) -> &[SequenceSample] {
        &self.holdout
    }

    pub fn train_samples(&self) -> &[SequenceSample] {
        &self.train
    }

    /// One optimizer update on a batch drawn with replacement. Gradients are averaged over the batch.
    pub fn step(&mut self) -> Result<LogEntry> {
        let weights = self.config.weights();
        let lr = self.config.optimizer.learning_rate(self.iteration);
        self.adam.set_learning_rate(lr);
        let batch = self.config.batch_size;
        let mut sum: Option<Vec<Tensor>> = None;
        let (mut local, mut global) = (0.0, 0.0);
        for _ in 0..batch {
            let idx = self.rng.random_range(0..self.train.len());
            let sample = &self.train[idx];
            let (v, grads) = sequence_gradients(&self.model, sample, weights)?;
            if !v.total.is_finite() {
                return Err(TrainError::NonFinite {
                    iteration: self.iteration,
                    sample: sample.id.clone(),
                    local: v.local,
                    global: v.global,
                });
            }
            local += v.local;
            global += v.global;
            match sum.as_mut() {
                None => sum = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                    }
                }
            }
        }
        let mut grads = sum.expect("batch is non-empty");
        let inv = 1.0 / batch as f64;
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|x| *x *= inv);
        }
        self.adam.step(self.model.params_mut(), &grads)?;
        self.iteration += 1;
        Ok(LogEntry::Train {
            iteration: self.iteration,
            lr,
            l_local: local * inv,
            l_global: global * inv,
            l_total: (local + global) * inv,
        })
    }

    pub fn validate(&self) -> Result<LogEntry> {
        let m = evaluate_samples(&self.model, &self.holdout, self.config.weights())?;
        Ok(LogEntry::Validation {
            iteration: self.iteration,
            l_local: m.losses.local,
            l_global: m.losses.global,
            l_total: m.losses.total,
            ate_sim3: m.ate_sim3,
        })
    }

    /// Runs the remaining iterations, passing every log entry to `sink`.
    /// `on_checkpoint` is called at each periodic checkpoint iteration.
    pub fn run(
        &mut self,
        mut sink: impl FnMut(&LogEntry) -> Result<()>,
        mut on_checkpoint: impl FnMut(u64, &VoModel) -> Result<()>,
    ) -> Result<()> {
        if self.iteration == 0 {
            sink(&self.validate()?)?;
        }
        while self.iteration < self.config.iterations {
            let entry = self.step()?;
            sink(&entry)?;
            let it = self.iteration;
            let last = it == self.config.iterations;
            if !last && self.config.eval_every > 0 && it % self.config.eval_every == 0 {
                sink(&self.validate()?)?;
            }
            if !last && self.config.checkpoint_every > 0 && it % self.config.checkpoint_every == 0 {
                on_checkpoint(it, &self.model)?;
            }
        }
        if self.config.iterations > 0 {
            sink(&self.validate()?)?;
        }
        Ok(())
    }
}
