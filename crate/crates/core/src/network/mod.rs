//! Multi-resolution face network over a mesh pyramid.
//!
//! Network levels run finest first: level 0 is the input resolution and
//! level `r` sits `r` pyramid levels below it. Stage 1 works on level 0 only;
//! every later stage adds the next coarser level, runs a parallel residual
//! block per level and fuses all levels. The head upsamples every level to
//! level 0, concatenates and classifies each face.

mod gradcheck;
mod model;
mod params;
mod tape;
mod train;

pub use tape::KinkPattern;

pub use gradcheck::{check_gradients, GradientCheck, RELATIVE_FLOOR};
pub use model::{Backprop, Mode, Network};
pub use params::{load_checkpoint, save_checkpoint, Gradients, NetParams, Tensor, CHECKPOINT_VERSION};
pub use train::{accuracy, cross_entropy, evaluate, recalibrate, metrics_csv, predict_labels, train, EpochMetrics, Sample, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ops::{FaceNeighbors, FeatureField, OpsError, Resampler};
use crate::pyramid::MeshPyramid;
use crate::scalar::Real;

/// Label value excluded from loss and accuracy.
pub const IGNORE_LABEL: usize = usize::MAX;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("network needs {needed} pyramid levels, input has {available}")]
    DepthMismatch { needed: usize, available: usize },
    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Ops(#[from] OpsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Base width; level `r` has `C * 2^r` channels.
    pub c: usize,
    pub stem_width: usize,
    /// Number of resolution levels used, at most the pyramid depth.
    pub levels: usize,
    /// Multi-resolution blocks of stages 2, 3, ...; length `levels - 1`.
    pub stage_blocks: Vec<usize>,
    pub residual_units: usize,
    pub bottlenecks: usize,
    pub num_classes: usize,
    pub input_channels: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl NetworkConfig {
    /// Four levels with 1, 4 and 3 blocks in stages 2 to 4, truncated to
    /// `levels`.
    pub fn new(c: usize, levels: usize, num_classes: usize) -> Self {
        let blocks = [1, 4, 3];
        Self {
            c,
            stem_width: 4 * c,
            levels,
            stage_blocks: blocks[..levels.saturating_sub(1).min(3)].to_vec(),
            residual_units: 4,
            bottlenecks: 4,
            num_classes,
            input_channels: crate::ops::INPUT_CHANNELS,
            bn_eps: 1e-6,
            bn_momentum: 0.1,
        }
    }

    pub fn width(&self, r: usize) -> usize {
        self.c << r
    }

    /// Channels reaching the classifier.
    pub fn head_width(&self) -> usize {
        if self.levels == 1 {
            4 * self.c
        } else {
            (0..self.levels).map(|r| self.width(r)).sum()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NetError::ShapeMismatch(m.to_string()));
        if self.c == 0 || self.stem_width == 0 || self.num_classes == 0 || self.input_channels == 0 {
            return bad("widths and class count must be positive");
        }
        if self.levels == 0 || self.stage_blocks.len() + 1 != self.levels {
            return bad("need one block count per stage after the first");
        }
        if self.stage_blocks.contains(&0) {
            return bad("every stage needs at least one block");
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("normalization constants out of range");
        }
        Ok(())
    }
}

/// Everything the network needs from one or more meshes: input features at
/// level 0, neighbour lists per level and the resamplers between levels.
#[derive(Clone, Debug)]
pub struct NetInput<T> {
    pub features: FeatureField<T>,
    pub neighbors: Vec<FaceNeighbors>,
    /// `resamplers[r]` connects level `r` to level `r + 1`.
    pub resamplers: Vec<Resampler<T>>,
}

impl<T: Real> NetInput<T> {
    /// Uses the finest `levels` levels of the pyramid.
    pub fn from_pyramid(p: &MeshPyramid<T>, levels: usize) -> Result<Self> {
        let depth = p.depth();
        if levels == 0 || levels > depth {
            return Err(NetError::DepthMismatch { needed: levels, available: depth });
        }
        let top = depth - 1;
        let features = crate::ops::input_features(&p.levels[top], 0)?;
        let neighbors = (0..levels).map(|r| FaceNeighbors::new(&p.levels[top - r])).collect::<std::result::Result<_, _>>()?;
        let resamplers = (0..levels - 1).map(|r| Resampler::from_pyramid(p, top - r - 1)).collect::<std::result::Result<_, _>>()?;
        Ok(Self { features, neighbors, resamplers })
    }

    pub fn levels(&self) -> usize {
        self.neighbors.len()
    }

    pub fn faces(&self, r: usize) -> usize {
        self.neighbors[r].len()
    }

    /// Stacks meshes into one disconnected input; normalization statistics
    /// are then taken over all of their faces.
    pub fn batch(parts: &[&NetInput<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| NetError::ShapeMismatch("empty batch".into()))?;
        let levels = first.levels();
        if parts.iter().any(|p| p.levels() != levels || p.features.channels != first.features.channels) {
            return Err(NetError::ShapeMismatch("batched inputs differ in depth or channels".into()));
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(&p.features.data);
        }
        let rows = parts.iter().map(|p| p.features.rows).sum();
        let features = FeatureField::from_vec(0, rows, first.features.channels, data)?;
        let neighbors = (0..levels).map(|r| FaceNeighbors::stack(&parts.iter().map(|p| &p.neighbors[r]).collect::<Vec<_>>())).collect();
        let resamplers = (0..levels - 1)
            .map(|r| Resampler::stack(&parts.iter().map(|p| &p.resamplers[r]).collect::<Vec<_>>()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { features, neighbors, resamplers })
    }
}
