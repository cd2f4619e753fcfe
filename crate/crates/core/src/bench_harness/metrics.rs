use std::collections::VecDeque;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::cmdp_env::{Outcome, OutcomeClass};

pub const MA_WINDOW: usize = 50;

pub const CSV_HEADER: &str = "step,ep_ret_ma50,cost_rate_total,cost_rate_tight,cost_rate_loose,lambda,mean_kl,clip_frac";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostRates {
    pub total: f64,
    pub tight: f64,
    pub loose: f64,
}

/// Violation resets per training step, split by severity. Successful resets
/// and non-terminal records do not count.
pub fn cost_rate(reset_events: &[(usize, Outcome)], current_step: usize) -> CostRates {
    assert!(current_step >= 1, "cost rate needs at least one step");
    let (mut tight, mut loose) = (0usize, 0usize);
    for &(step, outcome) in reset_events {
        if step > current_step {
            continue;
        }
        match outcome.class() {
            OutcomeClass::Tight => tight += 1,
            OutcomeClass::Loose => loose += 1,
            _ => {}
        }
    }
    let n = current_step as f64;
    CostRates {
        total: (tight + loose) as f64 / n,
        tight: tight as f64 / n,
        loose: loose as f64 / n,
    }
}

/// Running counters equivalent to [`cost_rate`] without storing events.
#[derive(Clone, Debug, Default)]
pub struct CostCounter {
    pub tight: usize,
    pub loose: usize,
}

impl CostCounter {
    pub fn record(&mut self, outcome: Outcome) {
        match outcome.class() {
            OutcomeClass::Tight => self.tight += 1,
            OutcomeClass::Loose => self.loose += 1,
            _ => {}
        }
    }

    pub fn rates(&self, current_step: usize) -> CostRates {
        let n = current_step.max(1) as f64;
        CostRates {
            total: (self.tight + self.loose) as f64 / n,
            tight: self.tight as f64 / n,
            loose: self.loose as f64 / n,
        }
    }
}

/// Mean of the last `window` values pushed.
#[derive(Clone, Debug)]
pub struct MovingAverage {
    window: usize,
    values: VecDeque<f64>,
}

impl MovingAverage {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            values: VecDeque::new(),
        }
    }

    pub fn push(&mut self, v: f64) {
        if self.values.len() == self.window {
            self.values.pop_front();
        }
        self.values.push_back(v);
    }

    /// `None` until at least one value has been pushed.
    pub fn mean(&self) -> Option<f64> {
        if self.values.is_empty() {
            None
        } else {
            Some(self.values.iter().sum::<f64>() / self.values.len() as f64)
        }
    }
}

/// One logged line per rollout cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    /// `None` before the first episode completes.
    pub ep_ret_ma50: Option<f64>,
    pub cost_rate: CostRates,
    /// Lagrange multiplier for PPOLag, the FOCOPS multiplier for FOCOPS.
    pub lambda: Option<f64>,
    pub mean_kl: f64,
    pub clip_frac: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            opt(self.ep_ret_ma50),
            self.cost_rate.total,
            self.cost_rate.tight,
            self.cost_rate.loose,
            opt(self.lambda),
            self.mean_kl,
            self.clip_frac
        )
    }

    pub fn from_csv(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return Err(format!("expected 8 columns, found {}", f.len()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("bad number `{s}`: {e}"));
        let opt_num = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        Ok(Self {
            step: f[0].parse().map_err(|e| format!("bad step `{}`: {e}", f[0]))?,
            ep_ret_ma50: opt_num(f[1])?,
            cost_rate: CostRates {
                total: num(f[2])?,
                tight: num(f[3])?,
                loose: num(f[4])?,
            },
            lambda: opt_num(f[5])?,
            mean_kl: num(f[6])?,
            clip_frac: num(f[7])?,
        })
    }
}

pub fn write_metrics<W: Write>(mut w: W, rows: &[MetricsRow]) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.to_csv())?;
    }
    Ok(())
}

pub fn read_metrics(text: &str) -> Result<Vec<MetricsRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err("missing metrics header".into()),
    }
    lines.filter(|l| !l.trim().is_empty()).map(MetricsRow::from_csv).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cost_rate_arithmetic() {
        let ev = [
            (100, Outcome::Collision),
            (400, Outcome::OutOfVolumeVertically),
            (700, Outcome::Idle),
            (900, Outcome::Success),
        ];
        let r = cost_rate(&ev, 1000);
        assert!((r.total - 0.003).abs() < 1e-15);
        assert!((r.tight - 0.002).abs() < 1e-15);
        assert!((r.loose - 0.001).abs() < 1e-15);
        assert_eq!(cost_rate(&[], 10), CostRates::default());
        assert_eq!(cost_rate(&[(5, Outcome::Success); 3], 10), CostRates::default());
    }

    #[test]
    fn moving_average_window() {
        let mut ma = MovingAverage::new(3);
        assert_eq!(ma.mean(), None);
        for v in [1.0, 2.0, 3.0, 4.0] {
            ma.push(v);
        }
        assert_eq!(ma.mean(), Some(3.0));
    }

    #[test]
    fn csv_roundtrip() {
        let rows = vec![
            MetricsRow {
                step: 4096,
                ep_ret_ma50: None,
                cost_rate: CostRates { total: 0.01, tight: 0.004, loose: 0.006 },
                lambda: Some(0.25),
                mean_kl: 0.0123,
                clip_frac: 0.1,
            },
            MetricsRow {
                step: 8192,
                ep_ret_ma50: Some(3.5),
                cost_rate: CostRates::default(),
                lambda: None,
                mean_kl: 0.0,
                clip_frac: 0.0,
            },
        ];
        let mut out = Vec::new();
        write_metrics(&mut out, &rows).unwrap();
        let back = read_metrics(std::str::from_utf8(&out).unwrap()).unwrap();
        assert_eq!(back, rows);
    }

    fn outcome() -> impl Strategy<Value = Outcome> {
        proptest::sample::select(Outcome::TERMINAL.to_vec())
    }

    proptest! {
        #[test]
        fn rates_decompose_and_stay_in_unit_interval(
            outcomes in proptest::collection::vec(outcome(), 0..200),
            extra in 0usize..5000,
        ) {
            let events: Vec<(usize, Outcome)> =
                outcomes.iter().enumerate().map(|(i, &o)| (i + 1, o)).collect();
            let step = outcomes.len().max(1) + extra;
            let r = cost_rate(&events, step);
            prop_assert!((r.tight + r.loose - r.total).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&r.total));
            let mut c = CostCounter::default();
            outcomes.iter().for_each(|&o| c.record(o));
            prop_assert_eq!(c.rates(step), r);
        }
    }
}
