//! Variational autoencoder over rendered frames, latent-size sweeps, and
//! histogram relative entropy between encoding datasets.

mod dataset;
mod entropy;
mod fidelity;
mod model;
mod train;

use thiserror::Error;

use crate::ndmath::NdError;

pub use dataset::{DatasetIndex, FrameDataset, IndexEntry};
pub use entropy::{
    discrete_kl, relative_entropy, relative_entropy_with_bins, EncodingDataset, ReResult, Q_FLOOR,
    RESCALE_RANGE,
};
pub use fidelity::{pixel_is_water, water_agreement};
pub use model::Vae;
pub use train::{latent_sweep, reconstruction_loss, train_vae, Reconstructor, SweepRow, VaeConfig};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input shape {found:?} does not match expected {expected:?}")]
    Shape { expected: Vec<usize>, found: Vec<usize> },
    #[error("encoding dimensions differ: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("relative entropy needs at least 4 samples, got {0}")]
    TooFewSamples(usize),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Encodes every frame of `data` to its latent mean.
pub fn encode_dataset(vae: &Vae, data: &FrameDataset) -> Result<EncodingDataset, CodecError> {
    let mut values = Vec::with_capacity(data.len() * vae.latent_dim);
    let per = vae.input_shape(1).iter().product::<usize>();
    let pixels = data.channel_values(vae.channels);
    for chunk in pixels.chunks(per * 64) {
        let n = chunk.len() / per;
        let x = crate::ndmath::Tensor::new(vae.input_shape(n).to_vec(), chunk.to_vec())?;
        values.extend_from_slice(vae.encode_batch(&x)?.data());
    }
    Ok(EncodingDataset {
        dim: vae.latent_dim,
        values,
    })
}
