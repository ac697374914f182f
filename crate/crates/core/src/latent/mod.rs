//! Autoencoder coordinates: reconstruction training, bottleneck dimension
//! search and joint training with sparse latent dynamics.

mod adam;
mod ae_sindy;
mod autoencoder;
mod mlp;
mod search;

pub use adam::Adam;
pub use ae_sindy::{
    ae_sindy_loss, frame_derivatives, train_ae_sindy, AeSindyFit, AeSindyHyper, LatentAssessor, LossGrad, LossTerms,
    LossWeights,
};
pub use autoencoder::{train_autoencoder, variance_explained, Architecture, Autoencoder, TrainHyper, TrainReport};
pub use mlp::{Activation, Dense, Mlp, Trace};
pub use search::{
    dimension_search, format_trials, AdvisorDimensionAdvisor, DimensionAdvisor, DimensionDecision, DimensionSearch,
    DimensionTrialRecord, ElbowAdvisor, FrameShape, ScriptedDimensionAdvisor, SearchContext,
};

use nalgebra::DMatrix;

use crate::dynamics::FrameSequence;

/// Frames as rows of a matrix, one column per channel pixel.
pub fn frames_to_matrix(frames: &FrameSequence) -> DMatrix<f64> {
    let d = frames.frame_len();
    DMatrix::from_fn(frames.len(), d, |i, j| frames.frame(i)[j] as f64)
}

pub fn frame_shape(frames: &FrameSequence) -> FrameShape {
    FrameShape {
        channels: frames.channels,
        height: frames.height,
        width: frames.width,
    }
}
