//! Monocular visual odometry with a recurrent tracking branch, distance-gated pose memory,
//! and an attention-based refining branch.

pub mod data;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

pub use data::{PoseFormat, SequenceSample, SyntheticSpec};
pub use eval::{AlignMode, MetricReport, MetricSelection};
pub use geometry::{Pose, Similarity, Trajectory};
pub use loss::LossWeights;
pub use model::{AttentionMode, MemoryThresholds, Prediction, VoModel, VoModelConfig};
pub use tensor::{Graph, ParamStore, Tensor, Var};
pub use train::{RunConfig, Trainer};
