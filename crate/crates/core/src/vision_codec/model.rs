use rand::Rng;

use crate::ndmath::{Checkpoint, Linear, NdError, Tape, Tensor, Var};
use crate::river_world::ChannelConfig;

use super::CodecError;

const ENC_CHANNELS: [usize; 3] = [8, 16, 32];
const DEC_CHANNELS: [usize; 2] = [16, 8];
const HIDDEN: usize = 256;

/// Convolutional VAE over NHWC frames.
///
/// Encoder: three 4x4 stride-2 convolutions, a dense hidden layer, and
/// separate mu / logvar heads. Decoder mirrors it with dense layers followed
/// by three (upsample x2, 3x3 conv) stages and a sigmoid output.
#[derive(Clone, Debug, PartialEq)]
pub struct Vae {
    pub latent_dim: usize,
    pub channels: ChannelConfig,
    pub resolution: usize,
    layers: Vec<Linear>,
}

// Layer indices into `Vae::layers`.
const ENC0: usize = 0;
const ENC_DENSE: usize = 3;
const MU: usize = 4;
const LOGVAR: usize = 5;
const DEC_DENSE: usize = 6;
const DEC_PROJ: usize = 7;
const DEC0: usize = 8;

pub(crate) struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub(crate) fn vars(&self) -> &[Var] {
        &self.vars
    }
    fn w(&self, layer: usize) -> Var {
        self.vars[2 * layer]
    }
    fn b(&self, layer: usize) -> Var {
        self.vars[2 * layer + 1]
    }
}

/// `(fan_in, fan_out)` of every layer, convolutions as `(k*k*c_in, c_out)`.
fn layer_shapes(latent_dim: usize, channels: ChannelConfig, resolution: usize) -> Vec<(usize, usize)> {
    let c = channels.count();
    let flat = (resolution / 8).pow(2) * ENC_CHANNELS[2];
    let mut shapes = Vec::new();
    let mut cin = c;
    for &co in &ENC_CHANNELS {
        shapes.push((16 * cin, co));
        cin = co;
    }
    shapes.extend([
        (flat, HIDDEN),
        (HIDDEN, latent_dim),
        (HIDDEN, latent_dim),
        (latent_dim, HIDDEN),
        (HIDDEN, flat),
    ]);
    let mut cin = ENC_CHANNELS[2];
    for &co in DEC_CHANNELS.iter().chain(std::iter::once(&c)) {
        shapes.push((9 * cin, co));
        cin = co;
    }
    shapes
}

impl Vae {
    pub fn new<R: Rng + ?Sized>(
        latent_dim: usize,
        channels: ChannelConfig,
        resolution: usize,
        rng: &mut R,
    ) -> Result<Self, CodecError> {
        if latent_dim == 0 {
            return Err(CodecError::Config("latent_dim must be positive".into()));
        }
        if resolution < 8 || resolution % 8 != 0 {
            return Err(CodecError::Config(format!(
                "resolution {resolution} must be a positive multiple of 8"
            )));
        }
        let layers = layer_shapes(latent_dim, channels, resolution)
            .into_iter()
            .enumerate()
            .map(|(i, (fan_in, fan_out))| {
                let gain = match i {
                    MU => 1.0,
                    LOGVAR => 0.1,
                    _ => 2f64.sqrt(),
                };
                Linear::new(fan_in, fan_out, gain, rng)
            })
            .collect();
        Ok(Self {
            latent_dim,
            channels,
            resolution,
            layers,
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub(crate) fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Bound {
        Bound {
            vars: self.params().into_iter().map(|t| tape.param(t)).collect(),
        }
    }

    fn bind_const<'a>(&'a self, tape: &mut Tape<'a>) -> Bound {
        Bound {
            vars: self
                .params()
                .into_iter()
                .map(|t| tape.constant_ref(t))
                .collect(),
        }
    }

    /// Expected NHWC input extents for a batch of `n`.
    pub fn input_shape(&self, n: usize) -> [usize; 4] {
        [n, self.resolution, self.resolution, self.channels.count()]
    }

    fn check_input(&self, x: &Tensor) -> Result<usize, CodecError> {
        let s = x.shape();
        if s.len() != 4 || s[1..] != self.input_shape(1)[1..] {
            return Err(CodecError::Shape {
                expected: self.input_shape(1).to_vec(),
                found: s.to_vec(),
            });
        }
        Ok(s[0])
    }

    pub(crate) fn encode_vars(
        &self,
        tape: &mut Tape<'_>,
        p: &Bound,
        x: Var,
    ) -> Result<(Var, Var), NdError> {
        let mut h = x;
        for i in 0..3 {
            h = tape.conv2d(h, p.w(ENC0 + i), 4, 2, 1)?;
            h = tape.add_bias(h, p.b(ENC0 + i))?;
            h = tape.relu(h);
        }
        let n = tape.value(h).shape()[0];
        let flat = tape.value(h).len() / n;
        h = tape.reshape(h, &[n, flat])?;
        h = Linear::forward(tape, p.w(ENC_DENSE), p.b(ENC_DENSE), h)?;
        h = tape.relu(h);
        let mu = Linear::forward(tape, p.w(MU), p.b(MU), h)?;
        let logvar = Linear::forward(tape, p.w(LOGVAR), p.b(LOGVAR), h)?;
        Ok((mu, logvar))
    }

    pub(crate) fn decode_vars(&self, tape: &mut Tape<'_>, p: &Bound, z: Var) -> Result<Var, NdError> {
        let n = tape.value(z).shape()[0];
        let mut h = Linear::forward(tape, p.w(DEC_DENSE), p.b(DEC_DENSE), z)?;
        h = tape.relu(h);
        h = Linear::forward(tape, p.w(DEC_PROJ), p.b(DEC_PROJ), h)?;
        h = tape.relu(h);
        let side = self.resolution / 8;
        h = tape.reshape(h, &[n, side, side, ENC_CHANNELS[2]])?;
        for i in 0..3 {
            h = tape.upsample2(h)?;
            h = tape.conv2d(h, p.w(DEC0 + i), 3, 1, 1)?;
            h = tape.add_bias(h, p.b(DEC0 + i))?;
            h = if i < 2 { tape.relu(h) } else { tape.sigmoid(h) };
        }
        Ok(h)
    }

    /// Batch-mean training objective `SSE + beta * KL(q(z|x) || N(0, I))`.
    ///
    /// `params` are variables bound in [`Vae::params`] order; `eps` is the
    /// `[n, D]` reparameterization noise.
    pub fn loss_var(&self, tape: &mut Tape<'_>, params: &[Var], x: Var, eps: Var, beta: f64) -> Result<Var, NdError> {
        let p = Bound { vars: params.to_vec() };
        let n = tape.value(x).shape()[0];
        let (mu, lv) = self.encode_vars(tape, &p, x)?;
        let half = tape.scale(lv, 0.5);
        let std = tape.exp(half);
        let noise = tape.mul(std, eps)?;
        let z = tape.add(mu, noise)?;
        let y = self.decode_vars(tape, &p, z)?;
        let diff = tape.sub(y, x)?;
        let sq = tape.square(diff);
        let sse = tape.sum(sq);
        // KL(N(mu, e^lv) || N(0, 1)) = 0.5 * sum(mu^2 + e^lv - 1 - lv)
        let mu2 = tape.square(mu);
        let elv = tape.exp(lv);
        let t = tape.add(mu2, elv)?;
        let t = tape.sub(t, lv)?;
        let t = tape.add_scalar(t, -1.0);
        let kl = tape.sum(t);
        let kl = tape.scale(kl, 0.5 * beta);
        let total = tape.add(sse, kl)?;
        Ok(tape.scale(total, 1.0 / n as f64))
    }

    /// Latent means for a batch `[n, r, r, c]` -> `[n, D]`.
    pub fn encode_batch(&self, x: &Tensor) -> Result<Tensor, CodecError> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let p = self.bind_const(&mut tape);
        let xv = tape.constant_ref(x);
        let (mu, _) = self.encode_vars(&mut tape, &p, xv)?;
        Ok(tape.value(mu).clone())
    }

    /// Latent mean of a single frame given as interleaved channel values.
    pub fn encode(&self, pixels: &[f64]) -> Result<Vec<f64>, CodecError> {
        let shape = self.input_shape(1);
        if pixels.len() != shape.iter().product::<usize>() {
            return Err(CodecError::Shape {
                expected: shape.to_vec(),
                found: vec![pixels.len()],
            });
        }
        let x = Tensor::new(shape.to_vec(), pixels.to_vec())?;
        Ok(self.encode_batch(&x)?.into_data())
    }

    pub fn decode_batch(&self, z: &Tensor) -> Result<Tensor, CodecError> {
        if z.shape().len() != 2 || z.shape()[1] != self.latent_dim {
            return Err(CodecError::Shape {
                expected: vec![0, self.latent_dim],
                found: z.shape().to_vec(),
            });
        }
        let mut tape = Tape::new();
        let p = self.bind_const(&mut tape);
        let zv = tape.constant_ref(z);
        let y = self.decode_vars(&mut tape, &p, zv)?;
        Ok(tape.value(y).clone())
    }

    pub fn save(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push(
            "vae.meta",
            Tensor::from_vec(vec![
                self.latent_dim as f64,
                self.channels.count() as f64,
                self.resolution as f64,
            ]),
        );
        for (i, l) in self.layers.iter().enumerate() {
            ck.push(format!("vae.{i}.weight"), l.weight.clone());
            ck.push(format!("vae.{i}.bias"), l.bias.clone());
        }
        ck
    }

    pub fn load(ck: &Checkpoint) -> Result<Self, CodecError> {
        let meta = ck.require("vae.meta")?.data().to_vec();
        if meta.len() != 3 {
            return Err(CodecError::Config("malformed vae.meta".into()));
        }
        let channels = match meta[1] as usize {
            3 => ChannelConfig::Rgb,
            1 => ChannelConfig::Mask,
            4 => ChannelConfig::RgbMask,
            n => return Err(CodecError::Config(format!("unsupported channel count {n}"))),
        };
        let mut layers = Vec::new();
        while let Some(w) = ck.get(&format!("vae.{}.weight", layers.len())) {
            let b = ck.require(&format!("vae.{}.bias", layers.len()))?;
            layers.push(Linear {
                weight: w.clone(),
                bias: b.clone(),
            });
        }
        let vae = Self {
            latent_dim: meta[0] as usize,
            channels,
            resolution: meta[2] as usize,
            layers,
        };
        let expected = layer_shapes(vae.latent_dim, vae.channels, vae.resolution);
        let shapes_match = expected.len() == vae.layers.len()
            && expected
                .iter()
                .zip(&vae.layers)
                .all(|(&(i, o), l)| l.weight.shape() == [i, o] && l.bias.shape() == [o]);
        if !shapes_match {
            return Err(CodecError::Config("checkpoint layer shapes do not match vae.meta".into()));
        }
        Ok(vae)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_follow_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for cfg in ChannelConfig::ALL {
            let vae = Vae::new(16, cfg, 32, &mut rng).unwrap();
            let x = Tensor::uniform(&vae.input_shape(2), 1.0, &mut rng).map(f64::abs);
            let z = vae.encode_batch(&x).unwrap();
            assert_eq!(z.shape(), &[2, 16]);
            let y = vae.decode_batch(&z).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let vae = Vae::new(8, ChannelConfig::Rgb, 32, &mut rng).unwrap();
        assert!(vae.encode(&vec![0.0; 32 * 32 * 4]).is_err());
        assert!(vae.encode(&vec![0.0; 32 * 32 * 3]).is_ok());
        assert!(Vae::new(8, ChannelConfig::Rgb, 20, &mut rng).is_err());
    }

    #[test]
    fn encode_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vae = Vae::new(16, ChannelConfig::RgbMask, 32, &mut rng).unwrap();
        let px: Vec<f64> = (0..32 * 32 * 4).map(|i| (i % 7) as f64 / 7.0).collect();
        assert_eq!(vae.encode(&px).unwrap(), vae.encode(&px).unwrap());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vae = Vae::new(16, ChannelConfig::Mask, 32, &mut rng).unwrap();
        let ck = Checkpoint::from_bytes(&vae.save().to_bytes()).unwrap();
        assert_eq!(Vae::load(&ck).unwrap(), vae);
    }

    #[test]
    fn full_network_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vae = Vae::new(3, ChannelConfig::Mask, 8, &mut rng).unwrap();
        let x = Tensor::uniform(&vae.input_shape(1), 1.0, &mut rng).map(f64::abs);
        let mut inputs: Vec<Tensor> = vae.params().into_iter().cloned().collect();
        inputs.push(x);
        let report = check_gradients(&inputs, 1e-6, |tape, vars| {
            let p = Bound {
                vars: vars[..vars.len() - 1].to_vec(),
            };
            let xv = *vars.last().unwrap();
            let (mu, lv) = vae.encode_vars(tape, &p, xv).unwrap();
            let s = tape.add(mu, lv).unwrap();
            let y = vae.decode_vars(tape, &p, s).unwrap();
            let d = tape.sub(y, xv).unwrap();
            let sq = tape.square(d);
            tape.sum(sq)
        });
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
