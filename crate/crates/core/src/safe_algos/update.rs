use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ndmath::{log_softmax, Adam, Checkpoint, Mlp, NdError, Tape, Tensor, Var};

use super::buffer::RolloutBuffer;
use super::policy::{joint_kl, mean_joint_kl, CategoricalPolicy};
use super::{AlgoConfig, Algorithm};

/// Projected dual ascent on the Lagrange multiplier, clipped to `[0, lambda_max]`.
pub fn lagrange_update(lambda: f64, lr: f64, cost_estimate: f64, budget: f64, lambda_max: f64) -> f64 {
    (lambda + lr * (cost_estimate - budget)).clamp(0.0, lambda_max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrpoBranch {
    Reward,
    Cost,
}

/// Reward step when `J^C <= d + eta` (inclusive), cost step otherwise.
pub fn crpo_branch(cost_estimate: f64, budget: f64, eta: f64) -> CrpoBranch {
    if cost_estimate <= budget + eta {
        CrpoBranch::Reward
    } else {
        CrpoBranch::Cost
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// `KL(pi_k || pi_{k+1})` averaged over the buffer after the update.
    pub mean_kl: f64,
    pub clip_frac: f64,
    pub policy_loss: f64,
    pub value_loss_r: f64,
    pub value_loss_c: f64,
    pub minibatches: usize,
    pub early_stopped: bool,
    pub lambda: f64,
    pub nu: f64,
    pub cost_estimate: f64,
    pub crpo_branch: Option<CrpoBranch>,
    pub hinge_active: bool,
}

enum Surrogate {
    Clipped { adv: Vec<f64> },
    P3o { adv: Vec<f64>, cost_adv: Vec<f64>, offset: f64 },
    Focops { adv: Vec<f64> },
}

/// Policy, value heads, optimizers and constraint multipliers for one run.
pub struct Agent {
    pub algorithm: Algorithm,
    pub config: AlgoConfig,
    pub policy: CategoricalPolicy,
    pub value_r: Mlp,
    pub value_c: Mlp,
    opt_pi: Adam,
    opt_vr: Adam,
    opt_vc: Adam,
    pub lambda: f64,
    pub nu: f64,
    pub cost_estimate: f64,
    pub rng: ChaCha8Rng,
}

fn normalize(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    xs.iter().map(|x| (x - mean) / sd).collect()
}

impl Agent {
    pub fn new(algorithm: Algorithm, config: AlgoConfig, obs_dim: usize, heads: usize, choices: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = CategoricalPolicy::new(obs_dim, &config.policy_hidden, heads, choices, &mut rng);
        let mut vsizes = vec![obs_dim];
        vsizes.extend_from_slice(&config.value_hidden);
        vsizes.push(1);
        let value_r = Mlp::new(&vsizes, 1.0, &mut rng);
        let value_c = Mlp::new(&vsizes, 1.0, &mut rng);
        let opt_pi = Adam::new(policy.net.params(), config.policy_lr);
        let opt_vr = Adam::new(value_r.params(), config.value_lr);
        let opt_vc = Adam::new(value_c.params(), config.value_lr);
        Self {
            algorithm,
            lambda: config.lambda_init,
            nu: 0.0,
            cost_estimate: 0.0,
            config,
            policy,
            value_r,
            value_c,
            opt_pi,
            opt_vr,
            opt_vc,
            rng,
        }
    }

    pub fn eta(&self) -> f64 {
        self.config.eta.unwrap_or(0.05 * self.config.cost_budget)
    }

    /// One update cycle on a freshly collected buffer.
    pub fn update(&mut self, buf: &mut RolloutBuffer) -> Result<UpdateStats, NdError> {
        let cfg = self.config.clone();
        buf.finish(cfg.gamma, cfg.gae_lambda);
        if let Some(jc) = buf.cost_estimate() {
            self.cost_estimate = jc;
        }
        let jc = self.cost_estimate;
        let d = cfg.cost_budget;
        let adv_r = normalize(&buf.adv_r);
        let adv_c = if cfg.standardize_cost_advantages {
            normalize(&buf.adv_c)
        } else {
            buf.adv_c.clone()
        };
        let mut stats = UpdateStats::default();

        let surrogate = match self.algorithm {
            Algorithm::Ppo => Surrogate::Clipped { adv: adv_r },
            Algorithm::PpoLag => {
                self.lambda = lagrange_update(self.lambda, cfg.lambda_lr, jc, d, cfg.lambda_max);
                let l = self.lambda;
                Surrogate::Clipped {
                    adv: adv_r
                        .iter()
                        .zip(&adv_c)
                        .map(|(a, c)| (a - l * c) / (1.0 + l))
                        .collect(),
                }
            }
            Algorithm::Focops => {
                self.nu = (self.nu + cfg.nu_lr * (jc - d)).clamp(0.0, cfg.nu_max);
                let nu = self.nu;
                Surrogate::Focops {
                    adv: adv_r.iter().zip(&adv_c).map(|(a, c)| a - nu * c).collect(),
                }
            }
            Algorithm::P3o => Surrogate::P3o {
                adv: adv_r,
                cost_adv: adv_c,
                offset: jc - d,
            },
            Algorithm::OnCrpo => {
                let branch = crpo_branch(jc, d, self.eta());
                stats.crpo_branch = Some(branch);
                match branch {
                    CrpoBranch::Reward => Surrogate::Clipped { adv: adv_r },
                    CrpoBranch::Cost => Surrogate::Clipped {
                        adv: adv_c.iter().map(|c| -c).collect(),
                    },
                }
            }
        };

        let n = buf.len();
        let mb = cfg.minibatch_size.min(n).max(1);
        let mut order: Vec<usize> = (0..n).collect();
        let (mut clip_count, mut seen) = (0usize, 0usize);
        let (mut pl_sum, mut vr_sum, mut vc_sum) = (0.0, 0.0, 0.0);
        'epochs: for _ in 0..cfg.epochs {
            order.shuffle(&mut self.rng);
            for idx in order.chunks(mb) {
                let obs = buf.obs_tensor(idx);
                let step = self.policy_step(&surrogate, buf, idx, &obs, &cfg)?;
                if step.kl > 1.5 * cfg.target_kl {
                    stats.early_stopped = true;
                    break 'epochs;
                }
                self.opt_pi.step(self.policy.net.params_mut(), &step.grads)?;
                stats.hinge_active |= step.hinge_active;
                clip_count += step.clipped;
                seen += idx.len();
                pl_sum += step.loss;
                let ret_r: Vec<f64> = idx.iter().map(|&i| buf.ret_r[i]).collect();
                let ret_c: Vec<f64> = idx.iter().map(|&i| buf.ret_c[i]).collect();
                vr_sum += value_step(&mut self.value_r, &mut self.opt_vr, &obs, &ret_r)?;
                vc_sum += value_step(&mut self.value_c, &mut self.opt_vc, &obs, &ret_c)?;
                stats.minibatches += 1;
            }
        }
        let all: Vec<usize> = (0..n).collect();
        let new_logits = self.policy.logits(&buf.obs_tensor(&all))?;
        let old_logits = Tensor::matrix(n, new_logits.row_len(), buf.logits.concat());
        stats.mean_kl = mean_joint_kl(&old_logits, &new_logits, self.policy.choices);
        let k = stats.minibatches.max(1) as f64;
        stats.clip_frac = if seen > 0 { clip_count as f64 / seen as f64 } else { 0.0 };
        stats.policy_loss = pl_sum / k;
        stats.value_loss_r = vr_sum / k;
        stats.value_loss_c = vc_sum / k;
        stats.lambda = self.lambda;
        stats.nu = self.nu;
        stats.cost_estimate = jc;
        Ok(stats)
    }

    fn policy_step(
        &self,
        surrogate: &Surrogate,
        buf: &RolloutBuffer,
        idx: &[usize],
        obs: &Tensor,
        cfg: &AlgoConfig,
    ) -> Result<PolicyStep, NdError> {
        let m = idx.len();
        let pick = |v: &[f64]| -> Tensor { Tensor::from_vec(idx.iter().map(|&i| v[i]).collect()) };
        let actions: Vec<Vec<usize>> = idx.iter().map(|&i| buf.actions[i].clone()).collect();
        let mut tape = Tape::new();
        let vars = self.policy.net.bind(&mut tape);
        let x = tape.constant_ref(obs);
        let logits = self.policy.net.forward(&mut tape, &vars, x)?;
        let (logp, lp) = self.policy.log_prob_vars(&mut tape, logits, &actions)?;

        let old_rows: Vec<&[f64]> = idx.iter().map(|&i| buf.logits[i].as_slice()).collect();
        let cur = tape.value(logits);
        let kl = old_rows
            .iter()
            .enumerate()
            .map(|(r, old)| joint_kl(old, cur.row(r), self.policy.choices))
            .sum::<f64>()
            / m as f64;

        let old_logp = tape.constant(pick(&buf.logp));
        let diff = tape.sub(logp, old_logp)?;
        let ratio = tape.exp(diff);
        let (lo, hi) = (1.0 - cfg.clip, 1.0 + cfg.clip);
        let clipped = tape
            .value(ratio)
            .data()
            .iter()
            .filter(|&&r| r < lo || r > hi)
            .count();

        let mut hinge_active = false;
        let loss = match surrogate {
            Surrogate::Clipped { adv } => clipped_objective(&mut tape, ratio, pick(adv), lo, hi)?,
            Surrogate::P3o { adv, cost_adv, offset } => {
                let reward = clipped_objective(&mut tape, ratio, pick(adv), lo, hi)?;
                // Pessimistic cost surrogate: max(r A_c, clip(r) A_c) = -min(-r A_c, -clip(r) A_c).
                let neg_ac = tape.constant(pick(cost_adv).map(|v| -v));
                let s1 = tape.mul(ratio, neg_ac)?;
                let rc = tape.clamp(ratio, lo, hi);
                let s2 = tape.mul(rc, neg_ac)?;
                let mn = tape.minimum(s1, s2)?;
                let neg_mean = tape.mean(mn);
                let j_surr = -tape.value(neg_mean).item();
                if j_surr + offset > 0.0 {
                    hinge_active = true;
                    // d/dθ [κ (J_surr + offset)] with J_surr = -neg_mean.
                    let pen = tape.scale(neg_mean, -cfg.kappa);
                    let pen = tape.add_scalar(pen, cfg.kappa * offset);
                    tape.add(reward, pen)?
                } else {
                    reward
                }
            }
            Surrogate::Focops { adv } => {
                let width = self.policy.heads * self.policy.choices;
                let old_lp: Vec<f64> = old_rows
                    .iter()
                    .flat_map(|row| row.chunks(self.policy.choices).flat_map(log_softmax))
                    .collect();
                let old_lp = tape.constant(Tensor::matrix(m, width, old_lp));
                let p = tape.exp(lp);
                let dl = tape.sub(lp, old_lp)?;
                let terms = tape.mul(p, dl)?;
                let kl_s = tape.row_sum(terms);
                let keep: Vec<f64> = tape
                    .value(kl_s)
                    .data()
                    .iter()
                    .map(|&k| if k <= cfg.target_kl { 1.0 } else { 0.0 })
                    .collect();
                let a = tape.constant(pick(adv));
                let ra = tape.mul(ratio, a)?;
                let ra = tape.scale(ra, -1.0 / cfg.focops_temperature);
                let per = tape.add(kl_s, ra)?;
                let keep = tape.constant(Tensor::from_vec(keep));
                let per = tape.mul(per, keep)?;
                tape.mean(per)
            }
        };
        let g = tape.backward(loss)?;
        Ok(PolicyStep {
            grads: vars.iter().map(|&v| g.wrt(v)).collect(),
            loss: tape.value(loss).item(),
            kl,
            clipped,
            hinge_active,
        })
    }

    pub fn save(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        self.policy.save_into(&mut ck, "policy");
        self.value_r.save_into(&mut ck, "value_r");
        self.value_c.save_into(&mut ck, "value_c");
        ck.push("multipliers", Tensor::from_vec(vec![self.lambda, self.nu, self.cost_estimate]));
        ck
    }
}

struct PolicyStep {
    grads: Vec<Tensor>,
    loss: f64,
    kl: f64,
    clipped: usize,
    hinge_active: bool,
}

/// `-mean(min(r A, clip(r) A))`.
fn clipped_objective(tape: &mut Tape<'_>, ratio: Var, adv: Tensor, lo: f64, hi: f64) -> Result<Var, NdError> {
    let a = tape.constant(adv);
    let s1 = tape.mul(ratio, a)?;
    let rc = tape.clamp(ratio, lo, hi);
    let s2 = tape.mul(rc, a)?;
    let mn = tape.minimum(s1, s2)?;
    let m = tape.mean(mn);
    Ok(tape.neg(m))
}

fn value_step(net: &mut Mlp, opt: &mut Adam, obs: &Tensor, targets: &[f64]) -> Result<f64, NdError> {
    let (loss, grads) = {
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let x = tape.constant_ref(obs);
        let v = net.forward(&mut tape, &vars, x)?;
        let t = tape.constant(Tensor::matrix(targets.len(), 1, targets.to_vec()));
        let d = tape.sub(v, t)?;
        let sq = tape.square(d);
        let loss = tape.mean(sq);
        let g = tape.backward(loss)?;
        (tape.value(loss).item(), vars.iter().map(|&v| g.wrt(v)).collect::<Vec<_>>())
    };
    opt.step(net.params_mut(), &grads)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lagrange_examples() {
        assert!((lagrange_update(0.5, 0.05, 0.8, 0.2, 10.0) - 0.53).abs() < 1e-12);
        assert_eq!(lagrange_update(0.5, 0.05, 0.2, 0.2, 10.0), 0.5);
        assert_eq!(lagrange_update(0.01, 0.05, 0.0, 0.2, 10.0), 0.0);
        assert_eq!(lagrange_update(9.99, 0.05, 5.0, 0.2, 10.0), 10.0);
    }

    #[test]
    fn crpo_switch() {
        assert_eq!(crpo_branch(0.0, 0.1, 0.005), CrpoBranch::Reward);
        assert_eq!(crpo_branch(0.5, 0.1, 0.05), CrpoBranch::Cost);
        assert_eq!(crpo_branch(0.15, 0.1, 0.05), CrpoBranch::Reward);
        let (d, eta) = (0.1, 0.05);
        assert_eq!(crpo_branch(d + eta, d, eta), CrpoBranch::Reward);
    }

    #[test]
    fn normalization_zero_mean_unit_variance() {
        let z = normalize(&[1.0, 2.0, 3.0, 10.0]);
        let mean: f64 = z.iter().sum::<f64>() / 4.0;
        let var: f64 = z.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
        assert!(normalize(&[0.0; 5]).iter().all(|&v| v == 0.0));
    }
}
