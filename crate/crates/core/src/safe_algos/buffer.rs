use rand::Rng;

use crate::cmdp_env::Outcome;
use crate::ndmath::{Mlp, NdError, Tensor};

use super::policy::CategoricalPolicy;
use super::{EnvStep, Environment};

/// A finished episode as seen by the collector.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub episode_return: f64,
    pub episode_cost: f64,
    pub discounted_cost: f64,
    pub length: usize,
    pub outcome: Outcome,
    /// Global step count at which the episode ended (1-based).
    pub end_step: usize,
}

/// One on-policy batch. Per-step vectors all have length `T`.
#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<usize>>,
    pub logp: Vec<f64>,
    pub logits: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
    pub values_r: Vec<f64>,
    pub values_c: Vec<f64>,
    pub dones: Vec<bool>,
    pub outcomes: Vec<Outcome>,
    pub bootstrap_r: f64,
    pub bootstrap_c: f64,
    pub episodes: Vec<EpisodeRecord>,
    pub adv_r: Vec<f64>,
    pub adv_c: Vec<f64>,
    pub ret_r: Vec<f64>,
    pub ret_c: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn obs_tensor(&self, idx: &[usize]) -> Tensor {
        let d = self.obs[0].len();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&self.obs[i]);
        }
        Tensor::matrix(idx.len(), d, data)
    }

    /// Mean discounted cost over episodes completed in this buffer.
    pub fn cost_estimate(&self) -> Option<f64> {
        if self.episodes.is_empty() {
            return None;
        }
        Some(self.episodes.iter().map(|e| e.discounted_cost).sum::<f64>() / self.episodes.len() as f64)
    }

    /// Fills advantages and returns for both streams.
    pub fn finish(&mut self, gamma: f64, lam: f64) {
        let (a, r) = gae(&self.rewards, &self.values_r, self.bootstrap_r, &self.dones, gamma, lam);
        self.adv_r = a;
        self.ret_r = r;
        let (a, r) = gae(&self.costs, &self.values_c, self.bootstrap_c, &self.dones, gamma, lam);
        self.adv_c = a;
        self.ret_c = r;
    }
}

/// Generalized advantage estimation. `dones[t]` stops bootstrapping past step `t`.
/// Returns `(advantages, value targets)`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    dones: &[bool],
    gamma: f64,
    lam: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lam * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Per-episode bookkeeping carried across rollouts.
#[derive(Clone, Debug, Default)]
struct EpisodeAccum {
    ret: f64,
    cost: f64,
    disc_cost: f64,
    len: usize,
}

/// Drives an environment with auto-reset, producing rollout buffers.
pub struct Runner<E: Environment> {
    pub env: E,
    obs: Vec<f64>,
    acc: EpisodeAccum,
    seed: u64,
    episode_index: u64,
    pub global_step: usize,
    gamma: f64,
}

/// Reset seed for the `i`-th episode of a run.
pub fn episode_seed(run_seed: u64, i: u64) -> u64 {
    run_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(i.wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

impl<E: Environment> Runner<E> {
    pub fn new(mut env: E, seed: u64, gamma: f64) -> Self {
        let obs = env.reset(episode_seed(seed, 0));
        Self {
            env,
            obs,
            acc: EpisodeAccum::default(),
            seed,
            episode_index: 0,
            global_step: 0,
            gamma,
        }
    }

    pub fn episodes_started(&self) -> u64 {
        self.episode_index + 1
    }

    /// Collects exactly `horizon` steps with actions sampled from `policy`.
    pub fn collect<R: Rng + ?Sized>(
        &mut self,
        policy: &CategoricalPolicy,
        value_r: &Mlp,
        value_c: &Mlp,
        horizon: usize,
        rng: &mut R,
    ) -> Result<RolloutBuffer, NdError> {
        let mut buf = RolloutBuffer::default();
        for _ in 0..horizon {
            let x = Tensor::matrix(1, self.obs.len(), self.obs.clone());
            let logits = policy.logits(&x)?.into_data();
            let action = policy.sample(&logits, rng);
            let logp = policy.log_prob(&logits, &action);
            let vr = value_r.eval(&x)?.item();
            let vc = value_c.eval(&x)?.item();
            let EnvStep {
                obs,
                reward,
                cost,
                done,
                outcome,
            } = self.env.step(&action);

            self.acc.disc_cost += self.gamma.powi(self.acc.len as i32) * cost;
            self.acc.ret += reward;
            self.acc.cost += cost;
            self.acc.len += 1;
            self.global_step += 1;

            buf.obs.push(std::mem::replace(&mut self.obs, obs));
            buf.actions.push(action);
            buf.logp.push(logp);
            buf.logits.push(logits);
            buf.rewards.push(reward);
            buf.costs.push(cost);
            buf.values_r.push(vr);
            buf.values_c.push(vc);
            buf.dones.push(done);
            buf.outcomes.push(outcome);

            if done {
                buf.episodes.push(EpisodeRecord {
                    episode_return: self.acc.ret,
                    episode_cost: self.acc.cost,
                    discounted_cost: self.acc.disc_cost,
                    length: self.acc.len,
                    outcome,
                    end_step: self.global_step,
                });
                self.acc = EpisodeAccum::default();
                self.episode_index += 1;
                self.obs = self.env.reset(episode_seed(self.seed, self.episode_index));
            }
        }
        let x = Tensor::matrix(1, self.obs.len(), self.obs.clone());
        buf.bootstrap_r = value_r.eval(&x)?.item();
        buf.bootstrap_c = value_c.eval(&x)?.item();
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct evaluation of `A_t = sum_l (gamma lam)^l delta_{t+l}` within an episode.
    fn brute_force(r: &[f64], v: &[f64], boot: f64, d: &[bool], g: f64, l: f64) -> Vec<f64> {
        let n = r.len();
        let next_v = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
        let delta: Vec<f64> = (0..n)
            .map(|t| r[t] + if d[t] { 0.0 } else { g * next_v(t) } - v[t])
            .collect();
        (0..n)
            .map(|t| {
                let mut s = 0.0;
                let mut w = 1.0;
                for k in t..n {
                    s += w * delta[k];
                    if d[k] {
                        break;
                    }
                    w *= g * l;
                }
                s
            })
            .collect()
    }

    #[test]
    fn gae_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let r: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d: Vec<bool> = (0..10).map(|_| rng.gen_bool(0.2)).collect();
            let boot = rng.gen_range(-1.0..1.0);
            let (a, ret) = gae(&r, &v, boot, &d, 0.99, 0.95);
            let want = brute_force(&r, &v, boot, &d, 0.99, 0.95);
            for t in 0..10 {
                assert!((a[t] - want[t]).abs() < 1e-12);
                assert!((ret[t] - a[t] - v[t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gae_undiscounted_is_return_to_go_minus_value() {
        let r = [1.0, 2.0, 3.0, 4.0];
        let v = [0.5, -1.0, 2.0, 0.0];
        let d = [false, false, false, true];
        let (a, _) = gae(&r, &v, 123.0, &d, 1.0, 1.0);
        let togo = [10.0, 9.0, 7.0, 4.0];
        for t in 0..4 {
            assert!((a[t] - (togo[t] - v[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_zero_stream() {
        let (a, r) = gae(&[0.0; 6], &[0.0; 6], 0.0, &[false; 6], 0.99, 0.95);
        assert!(a.iter().chain(&r).all(|&x| x == 0.0));
    }
}
