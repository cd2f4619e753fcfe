//! On-policy constrained policy optimization over multi-discrete actions.
//!
//! All five algorithms share rollout collection, dual-stream GAE and the
//! clipped minibatch loop; they differ only in the per-sample surrogate and
//! in how the cost signal enters it.

mod buffer;
mod policy;
mod update;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cmdp_env::Outcome;

pub use buffer::{episode_seed, gae, EpisodeRecord, RolloutBuffer, Runner};
pub use policy::{joint_kl, mean_joint_kl, CategoricalPolicy};
pub use update::{crpo_branch, lagrange_update, Agent, CrpoBranch, UpdateStats};

/// Result of one environment step as seen by the learner.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub done: bool,
    pub outcome: Outcome,
}

/// Episodic CMDP with a vector observation and equally sized categorical action branches.
pub trait Environment {
    fn obs_dim(&self) -> usize;
    /// `(branches, choices per branch)`.
    fn action_layout(&self) -> (usize, usize);
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[usize]) -> EnvStep;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    Ppo,
    PpoLag,
    Focops,
    P3o,
    OnCrpo,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Ppo,
        Algorithm::PpoLag,
        Algorithm::Focops,
        Algorithm::P3o,
        Algorithm::OnCrpo,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Algorithm::Ppo => "ppo",
            Algorithm::PpoLag => "ppolag",
            Algorithm::Focops => "focops",
            Algorithm::P3o => "p3o",
            Algorithm::OnCrpo => "oncrpo",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Algorithm::Ppo => "PPO",
            Algorithm::PpoLag => "PPOLag",
            Algorithm::Focops => "FOCOPS",
            Algorithm::P3o => "P3O",
            Algorithm::OnCrpo => "OnCRPO",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.id() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected ppo, ppolag, focops, p3o or oncrpo)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub horizon: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub clip: f64,
    /// KL target: FOCOPS trust region and the early-stop threshold (stop above 1.5x).
    pub target_kl: f64,
    pub cost_budget: f64,
    pub lambda_init: f64,
    pub lambda_lr: f64,
    pub lambda_max: f64,
    pub focops_temperature: f64,
    pub nu_lr: f64,
    pub nu_max: f64,
    pub kappa: f64,
    /// Standardize cost advantages like reward advantages. When off, cost
    /// advantages keep their raw scale.
    pub standardize_cost_advantages: bool,
    /// OnCRPO tolerance; `None` means `0.05 * cost_budget`.
    pub eta: Option<f64>,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            horizon: 4096,
            epochs: 4,
            minibatch_size: 256,
            policy_lr: 3e-4,
            value_lr: 1e-3,
            policy_hidden: vec![64, 64],
            value_hidden: vec![64],
            clip: 0.2,
            target_kl: 0.02,
            cost_budget: 0.1,
            lambda_init: 0.0,
            lambda_lr: 0.05,
            lambda_max: 10.0,
            focops_temperature: 1.5,
            nu_lr: 0.05,
            nu_max: 2.0,
            kappa: 2.0,
            standardize_cost_advantages: true,
            eta: None,
        }
    }
}
