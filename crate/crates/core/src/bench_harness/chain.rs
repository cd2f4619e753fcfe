use serde::{Deserialize, Serialize};

use crate::cmdp_env::Outcome;
use crate::safe_algos::{AlgoConfig, EnvStep, Environment};

use super::HarnessError;

/// Largest chain accepted by the enumerator.
pub const MAX_STATES: usize = 8;
pub const MAX_ACTIONS: usize = 3;

/// Small tabular CMDP with deterministic transitions, starting in state 0.
/// `next[s][a] == None` ends the episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainCmdpSpec {
    pub n: usize,
    pub rewards: Vec<Vec<f64>>,
    pub costs: Vec<Vec<f64>>,
    pub next: Vec<Vec<Option<usize>>>,
    pub gamma: f64,
    pub budget: f64,
}

impl ChainCmdpSpec {
    /// Five states advanced one per step; action 0 is "safe" (r 0.1, c 0),
    /// action 1 is "risky" (r 1.0, c 0.3).
    pub fn reference() -> Self {
        Self::uniform(5, &[0.1, 1.0], &[0.0, 0.3], 0.99, 0.15)
    }

    /// Linear chain where every state shares the same per-action tables.
    pub fn uniform(n: usize, rewards: &[f64], costs: &[f64], gamma: f64, budget: f64) -> Self {
        let a = rewards.len();
        Self {
            n,
            rewards: vec![rewards.to_vec(); n],
            costs: vec![costs.to_vec(); n],
            next: (0..n)
                .map(|s| vec![if s + 1 < n { Some(s + 1) } else { None }; a])
                .collect(),
            gamma,
            budget,
        }
    }

    /// Learner settings for this chain: the defaults with the chain's budget and
    /// a rollout sized to its five-step episodes.
    pub fn algo_config(&self) -> AlgoConfig {
        AlgoConfig {
            cost_budget: self.budget,
            gamma: self.gamma,
            horizon: 512,
            minibatch_size: 64,
            ..AlgoConfig::default()
        }
    }

    pub fn actions(&self) -> usize {
        self.rewards.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let a = self.actions();
        if self.n == 0 || self.n > MAX_STATES || a == 0 || a > MAX_ACTIONS {
            return Err(HarnessError::Config(format!(
                "chain must have 1..={MAX_STATES} states and 1..={MAX_ACTIONS} actions, got {} x {a}",
                self.n
            )));
        }
        let tables_ok = [self.rewards.len(), self.costs.len(), self.next.len()] == [self.n; 3]
            && self.rewards.iter().chain(&self.costs).all(|r| r.len() == a)
            && self.next.iter().all(|r| r.len() == a && r.iter().flatten().all(|&s| s < self.n));
        if !tables_ok {
            return Err(HarnessError::Config("chain tables are inconsistent".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(HarnessError::Config("chain discount must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Exact discounted `(J^R, J^C)` from state 0 of a stochastic policy
    /// `probs[s][a]`, by fixed-point iteration of the Bellman recurrence.
    pub fn evaluate(&self, probs: &[Vec<f64>]) -> (f64, f64) {
        let mut vr = vec![0.0; self.n];
        let mut vc = vec![0.0; self.n];
        for _ in 0..100_000 {
            let mut delta: f64 = 0.0;
            for s in 0..self.n {
                let (mut r, mut c) = (0.0, 0.0);
                for (a, &p) in probs[s].iter().enumerate() {
                    let (nr, nc) = match self.next[s][a] {
                        Some(t) => (vr[t], vc[t]),
                        None => (0.0, 0.0),
                    };
                    r += p * (self.rewards[s][a] + self.gamma * nr);
                    c += p * (self.costs[s][a] + self.gamma * nc);
                }
                delta = delta.max((r - vr[s]).abs()).max((c - vc[s]).abs());
                vr[s] = r;
                vc[s] = c;
            }
            if delta == 0.0 {
                break;
            }
        }
        (vr[0], vc[0])
    }

    /// Exact values of a deterministic policy `actions[s]`.
    pub fn evaluate_deterministic(&self, actions: &[usize]) -> (f64, f64) {
        let probs: Vec<Vec<f64>> = actions
            .iter()
            .map(|&a| (0..self.actions()).map(|i| if i == a { 1.0 } else { 0.0 }).collect())
            .collect();
        self.evaluate(&probs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyValue {
    pub actions: Vec<usize>,
    pub reward: f64,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub feasible: PolicyValue,
    pub unconstrained: PolicyValue,
}

/// Enumerates every deterministic stationary policy and returns the best one
/// with `J^C <= d` alongside the unconstrained best. Ties keep the first policy
/// in lexicographic order.
pub fn oracle_solve_chain_cmdp(spec: &ChainCmdpSpec) -> Result<OracleSolution, HarnessError> {
    spec.validate()?;
    let a = spec.actions();
    let total = a.pow(spec.n as u32);
    let mut feasible: Option<PolicyValue> = None;
    let mut unconstrained: Option<PolicyValue> = None;
    let mut best_cost = f64::INFINITY;
    for code in 0..total {
        let mut rest = code;
        let mut actions = vec![0; spec.n];
        for s in (0..spec.n).rev() {
            actions[s] = rest % a;
            rest /= a;
        }
        let (reward, cost) = spec.evaluate_deterministic(&actions);
        best_cost = best_cost.min(cost);
        let pv = PolicyValue { actions, reward, cost };
        if unconstrained.as_ref().map_or(true, |u| reward > u.reward) {
            unconstrained = Some(pv.clone());
        }
        if cost <= spec.budget && feasible.as_ref().map_or(true, |f| reward > f.reward) {
            feasible = Some(pv);
        }
    }
    let unconstrained = unconstrained.expect("at least one policy");
    match feasible {
        Some(feasible) => Ok(OracleSolution { feasible, unconstrained }),
        None => Err(HarnessError::Infeasible { best_cost }),
    }
}

/// The chain as a learning environment: one-hot state observation and a
/// single categorical branch.
#[derive(Clone, Debug)]
pub struct ChainEnv {
    spec: ChainCmdpSpec,
    state: usize,
    steps: usize,
    /// Safety cap for specs whose policies can cycle.
    pub max_steps: usize,
}

impl ChainEnv {
    pub fn new(spec: ChainCmdpSpec) -> Result<Self, HarnessError> {
        spec.validate()?;
        Ok(Self {
            spec,
            state: 0,
            steps: 0,
            max_steps: 1000,
        })
    }

    pub fn spec(&self) -> &ChainCmdpSpec {
        &self.spec
    }

    fn obs(&self) -> Vec<f64> {
        one_hot(self.spec.n, self.state)
    }
}

pub fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

impl Environment for ChainEnv {
    fn obs_dim(&self) -> usize {
        self.spec.n
    }

    fn action_layout(&self) -> (usize, usize) {
        (1, self.spec.actions())
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.state = 0;
        self.steps = 0;
        self.obs()
    }

    fn step(&mut self, action: &[usize]) -> EnvStep {
        let a = action[0];
        let reward = self.spec.rewards[self.state][a];
        let cost = self.spec.costs[self.state][a];
        self.steps += 1;
        let (done, outcome) = match self.spec.next[self.state][a] {
            None => (true, Outcome::Success),
            Some(_) if self.steps >= self.max_steps => (true, Outcome::MaxStepReached),
            Some(t) => {
                self.state = t;
                (false, Outcome::Running)
            }
        };
        EnvStep {
            obs: self.obs(),
            reward,
            cost,
            done,
            outcome,
        }
    }
}
