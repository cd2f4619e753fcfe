use rand::Rng;

use super::checkpoint::Checkpoint;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::NdError;

/// Dense layer `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Gaussian init with std `gain / sqrt(fan_in)`, zero bias.
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, gain: f64, rng: &mut R) -> Self {
        Self {
            weight: Tensor::randn(&[fan_in, fan_out], gain / (fan_in as f64).sqrt(), rng),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn forward(tape: &mut Tape<'_>, w: Var, b: Var, x: Var) -> Result<Var, NdError> {
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }
}

/// Multilayer perceptron with tanh hidden activations and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], out_gain: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { out_gain } else { 1.0 };
                Linear::new(sizes[i], sizes[i + 1], gain, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.shape()[1]
    }

    /// Registers all parameters on `tape` as `[w0, b0, w1, b1, ...]`.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Vec<Var> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .map(|t| tape.param(t))
            .collect()
    }

    pub fn forward(&self, tape: &mut Tape<'_>, vars: &[Var], x: Var) -> Result<Var, NdError> {
        let n = self.layers.len();
        let mut h = x;
        for i in 0..n {
            h = Linear::forward(tape, vars[2 * i], vars[2 * i + 1], h)?;
            if i + 1 < n {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    /// Forward pass without gradient bookkeeping; `x` is `[batch, in]`.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor, NdError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .map(|t| tape.constant_ref(t))
            .collect();
        let xv = tape.constant_ref(x);
        let y = self.forward(&mut tape, &vars, xv)?;
        Ok(tape.value(y).clone())
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

    pub fn save_into(&self, ckpt: &mut Checkpoint, prefix: &str) {
        for (i, l) in self.layers.iter().enumerate() {
            ckpt.push(format!("{prefix}.{i}.weight"), l.weight.clone());
            ckpt.push(format!("{prefix}.{i}.bias"), l.bias.clone());
        }
    }

    pub fn load_from(ckpt: &Checkpoint, prefix: &str) -> Result<Self, NdError> {
        let mut layers = Vec::new();
        while let Some(w) = ckpt.get(&format!("{prefix}.{}.weight", layers.len())) {
            let b = ckpt.require(&format!("{prefix}.{}.bias", layers.len()))?;
            layers.push(Linear {
                weight: w.clone(),
                bias: b.clone(),
            });
        }
        if layers.is_empty() {
            return Err(NdError::Format(format!("no layers under `{prefix}`")));
        }
        Ok(Self { layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_layer_tanh_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[8, 6, 1], 1.0, &mut rng);
        let x = Tensor::randn(&[4, 8], 1.0, &mut rng);
        let mut inputs: Vec<Tensor> = net.params().into_iter().cloned().collect();
        inputs.push(x);
        let report = check_gradients(&inputs, 1e-5, |tape, v| {
            let h = tape.matmul(v[4], v[0]).unwrap();
            let h = tape.add_bias(h, v[1]).unwrap();
            let h = tape.tanh(h);
            let y = tape.matmul(h, v[2]).unwrap();
            let y = tape.add_bias(y, v[3]).unwrap();
            tape.sum(y)
        });
        assert!(report.max_rel_err <= 1e-4, "{report:?}");
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[3, 4, 2], 0.01, &mut rng);
        let mut c = Checkpoint::new();
        net.save_into(&mut c, "pi");
        assert_eq!(Mlp::load_from(&c, "pi").unwrap(), net);
        assert!(Mlp::load_from(&c, "vf").is_err());
    }
}
