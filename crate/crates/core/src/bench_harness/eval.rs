use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cmdp_env::{Outcome, OutcomeClass};
use crate::ndmath::Tensor;
use crate::safe_algos::{episode_seed, CategoricalPolicy, Environment};

use super::HarnessError;

/// Base of the reset-seed stream shared by every evaluated policy, so all
/// checkpoints face the same start poses.
pub const EVAL_SEED: u64 = 0x5EED_E7A1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEval {
    /// Training seed of the evaluated checkpoint.
    pub seed: u64,
    pub episode: usize,
    pub episode_return: f64,
    pub episode_cost: f64,
    pub length: usize,
    pub outcome: Outcome,
}

/// Outcome counts over an evaluation batch, zero entries included.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureHistogram {
    pub counts: BTreeMap<Outcome, usize>,
}

impl FailureHistogram {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn get(&self, outcome: Outcome) -> usize {
        self.counts.get(&outcome).copied().unwrap_or(0)
    }

    pub fn failures(&self) -> usize {
        self.total() - self.get(Outcome::Success)
    }
}

pub fn failure_histogram(outcomes: &[Outcome]) -> FailureHistogram {
    let mut counts: BTreeMap<Outcome, usize> = Outcome::TERMINAL.iter().map(|&o| (o, 0)).collect();
    for &o in outcomes {
        *counts.entry(o).or_insert(0) += 1;
    }
    FailureHistogram { counts }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub level: String,
    pub episode_return: MeanStd,
    pub episode_cost: MeanStd,
    /// Violation terminations per evaluation step.
    pub cost_rate: f64,
    pub histogram: FailureHistogram,
    pub episodes: Vec<EpisodeEval>,
}

impl EvalReport {
    pub fn from_episodes(label: &str, level: &str, episodes: Vec<EpisodeEval>) -> Self {
        let returns: Vec<f64> = episodes.iter().map(|e| e.episode_return).collect();
        let costs: Vec<f64> = episodes.iter().map(|e| e.episode_cost).collect();
        let steps: usize = episodes.iter().map(|e| e.length).sum();
        let violations = episodes
            .iter()
            .filter(|e| matches!(e.outcome.class(), OutcomeClass::Tight | OutcomeClass::Loose))
            .count();
        let outcomes: Vec<Outcome> = episodes.iter().map(|e| e.outcome).collect();
        Self {
            label: label.to_string(),
            level: level.to_string(),
            episode_return: MeanStd::of(&returns),
            episode_cost: MeanStd::of(&costs),
            cost_rate: if steps > 0 { violations as f64 / steps as f64 } else { 0.0 },
            histogram: failure_histogram(&outcomes),
            episodes,
        }
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Runs `episodes` greedy episodes of `policy` on `env`.
pub fn evaluate_policy<E: Environment>(
    env: &mut E,
    policy: &CategoricalPolicy,
    seed: u64,
    episodes: usize,
) -> Result<Vec<EpisodeEval>, HarnessError> {
    let mut out = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut obs = env.reset(episode_seed(EVAL_SEED, i as u64));
        let (mut ret, mut cost, mut len) = (0.0, 0.0, 0usize);
        loop {
            let logits = policy.logits(&Tensor::matrix(1, obs.len(), obs))?.into_data();
            let st = env.step(&policy.greedy(&logits));
            ret += st.reward;
            cost += st.cost;
            len += 1;
            obs = st.obs;
            if st.done {
                out.push(EpisodeEval {
                    seed,
                    episode: i,
                    episode_return: ret,
                    episode_cost: cost,
                    length: len,
                    outcome: st.outcome,
                });
                break;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_formatting() {
        let m = MeanStd { mean: 6.3, std: 4.41 };
        assert_eq!(m.to_string(), "6.30 ± 4.41");
        let c = MeanStd::of(&[0.2; 60]);
        assert_eq!(c.to_string(), "0.20 ± 0.00");
    }

    #[test]
    fn population_std() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
    }

    #[test]
    fn histogram_counts() {
        let h = failure_histogram(&[Outcome::Success; 60]);
        assert_eq!(h.total(), 60);
        assert_eq!(h.failures(), 0);
        assert_eq!(h.counts.len(), Outcome::TERMINAL.len());
        let mixed = [Outcome::Idle, Outcome::Collision, Outcome::Idle, Outcome::Success];
        let h = failure_histogram(&mixed);
        assert_eq!(h.total(), 4);
        assert_eq!(h.get(Outcome::Idle), 2);
        assert_eq!(h.get(Outcome::MaxStepReached), 0);
    }

    #[test]
    fn report_json_roundtrip() {
        let eps = vec![
            EpisodeEval { seed: 0, episode: 0, episode_return: 10.0, episode_cost: 0.0, length: 300, outcome: Outcome::Success },
            EpisodeEval { seed: 0, episode: 1, episode_return: 2.0, episode_cost: 1.0, length: 100, outcome: Outcome::Collision },
        ];
        let r = EvalReport::from_episodes("PPO", "easy", eps);
        assert!((r.cost_rate - 1.0 / 400.0).abs() < 1e-15);
        let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
