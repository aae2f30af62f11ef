//! Dataset manifests: named splits of pose files.
//!
//! Raw images are not decoded. Inputs for manifest sequences are synthesized
//! from the ground-truth relative motion with [`encode_motion`].

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{encode_motion, parse_trajectory, sample_snippets, DataError, PoseFormat, Result, SequenceSample, SnippetPolicy, SyntheticSpec};
use crate::geometry::{integrate_relative, relative_from_absolute, Pose, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSequence {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub pose_file: PathBuf,
    pub format: PoseFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub split: String,
    pub sequences: Vec<ManifestSequence>,
}

impl DatasetManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| DataError::Manifest(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_json(&text)?, base))
    }

    /// Cuts every listed trajectory into windows of `encoding.sequence_length`
    /// frames and synthesizes inputs for each window.
    pub fn load_samples(&self, base: &Path, encoding: &SyntheticSpec, policy: SnippetPolicy) -> Result<Vec<SequenceSample>> {
        encoding.validate()?;
        let mut samples = Vec::new();
        for (seq_idx, seq) in self.sequences.iter().enumerate() {
            let path = if seq.pose_file.is_absolute() {
                seq.pose_file.clone()
            } else {
                base.join(&seq.pose_file)
            };
            let text = std::fs::read_to_string(&path).map_err(|source| DataError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let traj = parse_trajectory(&text, seq.format)?;
            let windows = sample_snippets(traj.len(), encoding.sequence_length, policy, encoding.seed ^ seq_idx as u64)?;
            let mut rng = ChaCha8Rng::seed_from_u64(encoding.seed);
            rng.set_stream(seq_idx as u64);
            for w in windows {
                let window = Trajectory::new(traj.poses()[w.clone()].to_vec());
                let gt_relative = relative_from_absolute(&window)?;
                let gt_absolute = integrate_relative(&gt_relative, Pose::identity()).poses().to_vec();
                let inputs = gt_relative.iter().map(|m| encode_motion(encoding, m, &mut rng)).collect();
                samples.push(SequenceSample {
                    id: format!("{}:{}-{}", seq.id, w.start, w.end),
                    inputs,
                    gt_relative,
                    gt_absolute,
                    timestamps: traj.timestamps().map(|ts| ts[w.clone()].to_vec()),
                });
            }
        }
        Ok(samples)
    }
}
