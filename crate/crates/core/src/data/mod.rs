//! Pose files, synthetic sequences and snippet sampling.

mod manifest;
mod poses;
mod snippets;
mod synth;

pub use manifest::{DatasetManifest, ManifestSequence};
pub use poses::{detect_format, parse_kitti_poses, parse_trajectory, parse_tum_trajectory, write_trajectory, PoseFormat};
pub use snippets::{sample_snippets, SnippetPolicy};
pub use synth::{encode_motion, synth_generate, SyntheticSpec};

use thiserror::Error;

use crate::geometry::{GeometryError, Pose};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{0}")]
    Contract(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// One training or evaluation sequence. `inputs[t]` and `gt_relative[t]` describe the
/// motion from frame `t` to `t + 1`; `gt_absolute` has one more entry and starts at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub id: String,
    pub inputs: Vec<Tensor>,
    pub gt_relative: Vec<Pose>,
    pub gt_absolute: Vec<Pose>,
    /// Frame timestamps in seconds, one per entry of `gt_absolute`, when the source has them.
    pub timestamps: Option<Vec<f64>>,
}

impl SequenceSample {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }
}
