use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ndmath::{Adam, Tape, Tensor};
use crate::river_world::ChannelConfig;

use super::dataset::FrameDataset;
use super::model::Vae;
use super::CodecError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub channels: ChannelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            channels: ChannelConfig::RgbMask,
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            beta: 1.0,
            seed: 0,
        }
    }
}

/// Trains a VAE on `data` with loss `SSE + beta * KL` per image, averaged over the batch.
///
/// Returns the model and the mean per-image loss of every epoch.
pub fn train_vae(data: &FrameDataset, cfg: &VaeConfig) -> Result<(Vae, Vec<f64>), CodecError> {
    if data.is_empty() {
        return Err(CodecError::EmptyDataset);
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(CodecError::Config("epochs and batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut vae = Vae::new(cfg.latent_dim, cfg.channels, data.resolution, &mut rng)?;
    let mut opt = Adam::new(vae.params(), cfg.learning_rate);
    let pixels = data.channel_values(cfg.channels);
    let per_frame = vae.input_shape(1).iter().product::<usize>();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let n = chunk.len();
            let mut batch = Vec::with_capacity(n * per_frame);
            for &i in chunk {
                batch.extend_from_slice(&pixels[i * per_frame..(i + 1) * per_frame]);
            }
            let x = Tensor::new(vae.input_shape(n).to_vec(), batch)?;
            let eps = Tensor::randn(&[n, cfg.latent_dim], 1.0, &mut rng);
            let (loss, grads) = {
                let mut tape = Tape::new();
                let p = vae.bind(&mut tape);
                let xv = tape.constant(x);
                let ev = tape.constant(eps);
                let loss = vae.loss_var(&mut tape, p.vars(), xv, ev, cfg.beta)?;
                let g = tape.backward(loss)?;
                let grads: Vec<Tensor> = p.vars().iter().map(|&v| g.wrt(v)).collect();
                (tape.value(loss).item(), grads)
            };
            opt.step(vae.params_mut(), &grads)?;
            total += loss * n as f64;
        }
        curve.push(total / data.len() as f64);
    }
    Ok((vae, curve))
}

/// Anything that maps an input batch to a same-shaped reconstruction.
pub trait Reconstructor {
    fn channels(&self) -> ChannelConfig;
    fn reconstruct(&self, x: &Tensor) -> Result<Tensor, CodecError>;
}

impl Reconstructor for Vae {
    fn channels(&self) -> ChannelConfig {
        self.channels
    }

    /// Decodes the latent mean.
    fn reconstruct(&self, x: &Tensor) -> Result<Tensor, CodecError> {
        let mu = self.encode_batch(x)?;
        self.decode_batch(&mu)
    }
}

const EVAL_CHUNK: usize = 64;

/// Mean squared error per element between inputs and reconstructions.
pub fn reconstruction_loss<M: Reconstructor>(model: &M, data: &FrameDataset) -> Result<f64, CodecError> {
    if data.is_empty() {
        return Err(CodecError::EmptyDataset);
    }
    let cfg = model.channels();
    let c = cfg.count();
    let r = data.resolution;
    let per_frame = r * r * c;
    let pixels = data.channel_values(cfg);
    let mut sse = 0.0;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let n = EVAL_CHUNK.min(data.len() - start);
        let x = Tensor::new(
            vec![n, r, r, c],
            pixels[start * per_frame..(start + n) * per_frame].to_vec(),
        )?;
        let y = model.reconstruct(&x)?;
        x.same_shape(&y, "reconstruction")?;
        sse += x
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(sse / pixels.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub latent_dim: usize,
    pub reconstruction_loss: f64,
    pub final_train_loss: f64,
}

/// Trains one VAE per latent size with the same seed and reports reconstruction losses on `eval`.
pub fn latent_sweep(
    train: &FrameDataset,
    eval: &FrameDataset,
    dims: &[usize],
    base: &VaeConfig,
) -> Result<Vec<SweepRow>, CodecError> {
    if dims.is_empty() {
        return Err(CodecError::Config("latent sweep needs at least one dimension".into()));
    }
    dims.iter()
        .map(|&d| {
            let cfg = VaeConfig {
                latent_dim: d,
                ..base.clone()
            };
            let (vae, curve) = train_vae(train, &cfg)?;
            Ok(SweepRow {
                latent_dim: d,
                reconstruction_loss: reconstruction_loss(&vae, eval)?,
                final_train_loss: *curve.last().unwrap(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::river_world::{Frame, Pose};

    struct Identity(ChannelConfig);

    impl Reconstructor for Identity {
        fn channels(&self) -> ChannelConfig {
            self.0
        }
        fn reconstruct(&self, x: &Tensor) -> Result<Tensor, CodecError> {
            Ok(x.clone())
        }
    }

    struct Gray;

    impl Reconstructor for Gray {
        fn channels(&self) -> ChannelConfig {
            ChannelConfig::Rgb
        }
        fn reconstruct(&self, x: &Tensor) -> Result<Tensor, CodecError> {
            Ok(x.map(|_| 0.5))
        }
    }

    fn toy(n: usize) -> FrameDataset {
        let frames = (0..n)
            .map(|i| {
                let data = (0..8 * 8 * 4).map(|j| ((i * 31 + j * 7) % 11) as f64 / 10.0).collect();
                Frame::from_data(8, 8, data)
            })
            .collect();
        FrameDataset::new(8, frames, vec![Pose::new(0.0, 0.0, 0.0, 0.0); n])
    }

    #[test]
    fn identity_reconstruction_is_lossless() {
        let d = toy(70);
        for cfg in ChannelConfig::ALL {
            assert_eq!(reconstruction_loss(&Identity(cfg), &d).unwrap(), 0.0);
        }
    }

    #[test]
    fn loss_ignores_dataset_order() {
        let d = toy(70);
        let mut rev = d.clone();
        rev.frames.reverse();
        let a = reconstruction_loss(&Gray, &d).unwrap();
        let b = reconstruction_loss(&Gray, &rev).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(a > 0.0);
    }

    #[test]
    fn empty_dataset_rejected() {
        let d = FrameDataset::new(8, vec![], vec![]);
        assert!(matches!(train_vae(&d, &VaeConfig::default()), Err(CodecError::EmptyDataset)));
    }

    #[test]
    fn training_is_deterministic_and_descends() {
        let d = toy(24);
        let cfg = VaeConfig {
            latent_dim: 4,
            epochs: 6,
            batch_size: 8,
            channels: ChannelConfig::Mask,
            ..VaeConfig::default()
        };
        let (a, ca) = train_vae(&d, &cfg).unwrap();
        let (b, cb) = train_vae(&d, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert!(ca.last().unwrap() < &ca[0]);
    }
}
