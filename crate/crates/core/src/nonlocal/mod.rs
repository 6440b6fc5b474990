//! Non-local feature learning over correspondence sets.
//!
//! [`sc`] holds the deterministic spatial-consistency non-local baseline;
//! [`vbnet`] the variational network whose query, key and value features are
//! stochastic latents driven by per-branch recurrent hidden states.

pub mod sc;
pub mod train;
pub mod vbnet;

use crate::error::{Error, Result};
use crate::geometry::CorrespondenceSet;
use crate::numerics::Matrix;

pub use sc::{sc_nonlocal_forward, ScNonlocal};
pub use train::{inlier_accuracy, train, EpochStats, TrainConfig, TrainOutcome};
pub use vbnet::{
    extract_voter_features, vb_forward_posterior, vb_forward_prior, ElboBreakdown, GaussianField,
    LatentNoise, VBNet, VBNetState,
};

/// What each correspondence contributes as network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    /// Source and target coordinates only.
    Coordinates,
    /// Coordinates followed by a descriptor of the given width.
    WithDescriptors(usize),
}

impl InputMode {
    pub fn input_dim(self) -> usize {
        match self {
            InputMode::Coordinates => 6,
            InputMode::WithDescriptors(d) => 6 + d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VBNetConfig {
    /// Number of non-local iterations.
    pub iterations: usize,
    /// Feature width `d`.
    pub feature_dim: usize,
    /// Latent width `d̃`.
    pub latent_dim: usize,
    /// Hidden-state width `d′`.
    pub hidden_dim: usize,
    pub input_mode: InputMode,
    /// Number of copies of the scalar label fed to the posterior encoder.
    pub label_tile_k: usize,
}

impl Default for VBNetConfig {
    fn default() -> Self {
        Self {
            iterations: 12,
            feature_dim: 128,
            latent_dim: 128,
            hidden_dim: 256,
            input_mode: InputMode::Coordinates,
            label_tile_k: 16,
        }
    }
}

impl VBNetConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("iterations", self.iterations),
            ("feature_dim", self.feature_dim),
            ("latent_dim", self.latent_dim),
            ("hidden_dim", self.hidden_dim),
            ("label_tile_k", self.label_tile_k),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.input_mode == InputMode::WithDescriptors(0) {
            return Err(Error::Config("descriptor width must be at least 1".into()));
        }
        Ok(())
    }
}

/// Stacks per-correspondence inputs `[x_i, y_i (, descriptor_i)]` into an N×in matrix.
pub fn input_matrix(set: &CorrespondenceSet, mode: InputMode) -> Result<Matrix> {
    let width = mode.input_dim();
    let mut data = Vec::with_capacity(set.len() * width);
    for (i, c) in set.items.iter().enumerate() {
        data.extend(c.source.iter().chain(c.target.iter()));
        if let InputMode::WithDescriptors(d) = mode {
            match &c.descriptor {
                Some(desc) if desc.len() == d => data.extend_from_slice(desc),
                Some(desc) => {
                    return Err(Error::InvalidInput(format!(
                        "correspondence {i} has a {}-wide descriptor, the network expects {d}",
                        desc.len()
                    )))
                }
                None => {
                    return Err(Error::InvalidInput(format!(
                        "correspondence {i} has no descriptor but the network uses descriptors"
                    )))
                }
            }
        }
    }
    Matrix::from_vec(set.len(), width, data)
}
