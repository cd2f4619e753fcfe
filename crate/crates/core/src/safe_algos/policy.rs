use rand::Rng;

use crate::ndmath::{log_softmax, softmax, Checkpoint, Mlp, NdError, Tape, Tensor, Var};

/// Independent categorical heads over a shared tanh MLP trunk.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalPolicy {
    pub net: Mlp,
    pub heads: usize,
    pub choices: usize,
}

impl CategoricalPolicy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], heads: usize, choices: usize, rng: &mut R) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(heads * choices);
        Self {
            net: Mlp::new(&sizes, 0.01, rng),
            heads,
            choices,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Raw logits `[n, heads * choices]`.
    pub fn logits(&self, obs: &Tensor) -> Result<Tensor, NdError> {
        self.net.eval(obs)
    }

    /// Log-probability of a joint action: the sum of branch log-probabilities.
    pub fn log_prob(&self, logits: &[f64], action: &[usize]) -> f64 {
        logits
            .chunks(self.choices)
            .zip(action)
            .map(|(l, &a)| log_softmax(l)[a])
            .sum()
    }

    /// Samples one action per head from a single row of logits.
    pub fn sample<R: Rng + ?Sized>(&self, logits: &[f64], rng: &mut R) -> Vec<usize> {
        logits
            .chunks(self.choices)
            .map(|l| {
                let p = softmax(l);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        return i;
                    }
                }
                p.len() - 1
            })
            .collect()
    }

    /// Argmax per head; ties go to the lowest index.
    pub fn greedy(&self, logits: &[f64]) -> Vec<usize> {
        logits
            .chunks(self.choices)
            .map(|l| {
                let mut best = 0;
                for i in 1..l.len() {
                    if l[i] > l[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// Joint log-probabilities `[n]` of `actions` on the tape.
    pub fn log_prob_vars(
        &self,
        tape: &mut Tape<'_>,
        logits: Var,
        actions: &[Vec<usize>],
    ) -> Result<(Var, Var), NdError> {
        let n = actions.len();
        let width = self.heads * self.choices;
        let lp = tape.log_softmax(logits, self.choices)?;
        let mut onehot = vec![0.0; n * width];
        for (i, a) in actions.iter().enumerate() {
            for (h, &c) in a.iter().enumerate() {
                onehot[i * width + h * self.choices + c] = 1.0;
            }
        }
        let mask = tape.constant(Tensor::matrix(n, width, onehot));
        let picked = tape.mul(lp, mask)?;
        Ok((tape.row_sum(picked), lp))
    }

    pub fn save_into(&self, ck: &mut Checkpoint, prefix: &str) {
        self.net.save_into(ck, prefix);
        ck.push(
            format!("{prefix}.heads"),
            Tensor::from_vec(vec![self.heads as f64, self.choices as f64]),
        );
    }

    pub fn load_from(ck: &Checkpoint, prefix: &str) -> Result<Self, NdError> {
        let net = Mlp::load_from(ck, prefix)?;
        let meta = ck.require(&format!("{prefix}.heads"))?.data();
        let (heads, choices) = (meta[0] as usize, meta[1] as usize);
        if heads * choices != net.output_dim() {
            return Err(NdError::Format("policy head layout does not match network".into()));
        }
        Ok(Self { net, heads, choices })
    }
}

/// Mean over rows of `KL(p || q)` for factorized categoricals, summed over heads.
pub fn mean_joint_kl(p_logits: &Tensor, q_logits: &Tensor, choices: usize) -> f64 {
    let rows = p_logits.rows();
    let total: f64 = (0..rows).map(|i| joint_kl(p_logits.row(i), q_logits.row(i), choices)).sum();
    total / rows as f64
}

pub fn joint_kl(p: &[f64], q: &[f64], choices: usize) -> f64 {
    p.chunks(choices)
        .zip(q.chunks(choices))
        .map(|(a, b)| crate::ndmath::categorical_kl(a, b).expect("equal head widths"))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn joint_log_prob_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pol = CategoricalPolicy::new(5, &[8], 4, 3, &mut rng);
        pol.net.layers.last_mut().unwrap().weight = Tensor::randn(&[8, 12], 1.0, &mut rng);
        for _ in 0..20 {
            let obs = Tensor::randn(&[1, 5], 1.0, &mut rng);
            let logits = pol.logits(&obs).unwrap().into_data();
            let mut total = 0.0;
            for a in 0..81 {
                let act = [a / 27, (a / 9) % 3, (a / 3) % 3, a % 3];
                let direct: f64 = (0..4)
                    .map(|h| softmax(&logits[3 * h..3 * h + 3])[act[h]])
                    .product();
                let lp = pol.log_prob(&logits, &act);
                assert!((lp.exp() - direct).abs() < 1e-12);
                total += direct;
            }
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_log_prob_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pol = CategoricalPolicy::new(3, &[6], 2, 3, &mut rng);
        let obs = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let logits = pol.logits(&obs).unwrap();
        let actions: Vec<Vec<usize>> = (0..4).map(|i| vec![i % 3, (i + 1) % 3]).collect();
        let mut tape = Tape::new();
        let lv = tape.constant(logits.clone());
        let (lp, _) = pol.log_prob_vars(&mut tape, lv, &actions).unwrap();
        for (i, a) in actions.iter().enumerate() {
            let want = pol.log_prob(logits.row(i), a);
            assert!((tape.value(lp).data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_and_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pol = CategoricalPolicy::new(1, &[2], 2, 3, &mut rng);
        assert_eq!(pol.greedy(&[0.0, 5.0, 1.0, 2.0, 2.0, -1.0]), vec![1, 0]);
        let a = pol.sample(&[0.0, 50.0, 0.0, -50.0, -50.0, 50.0], &mut rng);
        assert_eq!(a, vec![1, 2]);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pol = CategoricalPolicy::new(16, &[64, 64], 4, 3, &mut rng);
        let mut ck = Checkpoint::new();
        pol.save_into(&mut ck, "policy");
        assert_eq!(CategoricalPolicy::load_from(&ck, "policy").unwrap(), pol);
    }
}
