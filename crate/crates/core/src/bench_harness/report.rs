use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::eval::EvalReport;
use super::metrics::{read_metrics, MetricsRow};
use super::run::RunManifest;
use super::HarnessError;

/// A training run found on disk: one metrics table per seed.
#[derive(Clone, Debug)]
pub struct RunCurves {
    pub label: String,
    pub seeds: Vec<(u64, Vec<MetricsRow>)>,
}

#[derive(Clone, Debug, Default)]
pub struct ReportInputs {
    pub runs: Vec<RunCurves>,
    pub evals: Vec<EvalReport>,
}

fn seed_of(name: &str) -> Option<u64> {
    name.strip_prefix("metrics_seed")?.strip_suffix(".csv")?.parse().ok()
}

fn scan_dir(dir: &Path, inputs: &mut ReportInputs) -> Result<(), HarnessError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    let mut seeds = Vec::new();
    for p in &entries {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(seed) = seed_of(name) {
            let text = fs::read_to_string(p)?;
            let rows = read_metrics(&text).map_err(|e| HarnessError::Format(format!("{}: {e}", p.display())))?;
            seeds.push((seed, rows));
        } else if name.starts_with("eval") && name.ends_with(".json") {
            let text = fs::read_to_string(p)?;
            inputs.evals.push(serde_json::from_str(&text)?);
        }
    }
    if !seeds.is_empty() {
        let label = match RunManifest::load(dir) {
            Ok(m) => m.config.algorithm.display_name().to_string(),
            Err(_) => dir.file_name().and_then(|n| n.to_str()).unwrap_or("run").to_string(),
        };
        inputs.runs.push(RunCurves { label, seeds });
    }
    Ok(())
}

/// Collects metrics and evaluation files from `dir` and its immediate subdirectories.
pub fn collect_inputs(dir: &Path) -> Result<ReportInputs, HarnessError> {
    if !dir.is_dir() {
        return Err(HarnessError::Missing(dir.display().to_string()));
    }
    let mut inputs = ReportInputs::default();
    scan_dir(dir, &mut inputs)?;
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for sub in subdirs {
        scan_dir(&sub, &mut inputs)?;
    }
    Ok(inputs)
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// Seed-averaged curves: `step return total tight loose`, truncated to the
/// shortest seed. Return cells average only seeds that have a value.
pub fn curve_data(run: &RunCurves) -> String {
    let len = run.seeds.iter().map(|(_, r)| r.len()).min().unwrap_or(0);
    let mut out = String::from("# step ep_ret_ma50 cost_rate_total cost_rate_tight cost_rate_loose\n");
    let k = run.seeds.len() as f64;
    for i in 0..len {
        let rows: Vec<&MetricsRow> = run.seeds.iter().map(|(_, r)| &r[i]).collect();
        let rets: Vec<f64> = rows.iter().filter_map(|r| r.ep_ret_ma50).collect();
        let ret = if rets.is_empty() {
            "NaN".to_string()
        } else {
            (rets.iter().sum::<f64>() / rets.len() as f64).to_string()
        };
        let avg = |f: fn(&MetricsRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / k;
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            rows[0].step,
            ret,
            avg(|r| r.cost_rate.total),
            avg(|r| r.cost_rate.tight),
            avg(|r| r.cost_rate.loose)
        );
    }
    out
}

fn gnuplot_script(stems: &[(String, String)]) -> String {
    let mut s = String::from(
        "set terminal pngcairo size 1200,450\nset output 'curves.png'\nset multiplot layout 1,2\nset xlabel 'step'\n",
    );
    let plots = |col: usize| {
        stems
            .iter()
            .map(|(stem, label)| format!("'{stem}.dat' using 1:{col} with lines title '{label}'"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let _ = writeln!(s, "set ylabel 'episodic return (MA50)'\nplot {}", plots(2));
    let _ = writeln!(s, "set ylabel 'cost rate'\nplot {}", plots(3));
    s.push_str("unset multiplot\n");
    s
}

/// Evaluation results in the layout of a per-algorithm, per-level table.
pub fn summary_table(evals: &[EvalReport]) -> String {
    let mut labels: Vec<&str> = Vec::new();
    let mut levels: Vec<&str> = Vec::new();
    for e in evals {
        if !labels.contains(&e.label.as_str()) {
            labels.push(&e.label);
        }
        if !levels.contains(&e.level.as_str()) {
            levels.push(&e.level);
        }
    }
    let mut out = String::new();
    let _ = write!(out, "{:<10}", "Algorithm");
    for lv in &levels {
        let _ = write!(out, " | {:<13} {:<13}", format!("{lv} EpR"), format!("{lv} EpC"));
    }
    out.push('\n');
    for label in &labels {
        let _ = write!(out, "{label:<10}");
        for lv in &levels {
            match evals.iter().find(|e| e.label == *label && e.level == *lv) {
                Some(e) => {
                    let _ = write!(out, " | {:<13} {:<13}", e.episode_return.to_string(), e.episode_cost.to_string());
                }
                None => {
                    let _ = write!(out, " | {:<13} {:<13}", "-", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Files written by [`report`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReportOutput {
    pub files: Vec<PathBuf>,
}

/// Renders curves and the evaluation table from `input` into `out`. Fails
/// before writing anything when `input` holds no metrics or evaluations.
pub fn report(input: &Path, out: &Path) -> Result<ReportOutput, HarnessError> {
    let inputs = collect_inputs(input)?;
    if inputs.runs.is_empty() && inputs.evals.is_empty() {
        return Err(HarnessError::Missing(format!(
            "no metrics_seed*.csv or eval*.json under {}",
            input.display()
        )));
    }
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    let mut stems = Vec::new();
    for run in &inputs.runs {
        let mut stem = file_stem(&run.label);
        while stems.iter().any(|(s, _)| *s == stem) {
            stem.push('_');
        }
        let p = out.join(format!("{stem}.dat"));
        fs::write(&p, curve_data(run))?;
        files.push(p);
        stems.push((stem, run.label.clone()));
    }
    if !stems.is_empty() {
        let p = out.join("curves.gp");
        fs::write(&p, gnuplot_script(&stems))?;
        files.push(p);
    }
    let mut summary = summary_table(&inputs.evals);
    for e in &inputs.evals {
        let _ = writeln!(summary, "\n{} on {}: failures by outcome", e.label, e.level);
        for (o, n) in &e.histogram.counts {
            let _ = writeln!(summary, "  {o:<24} {n}");
        }
    }
    let p = out.join("summary.txt");
    fs::write(&p, summary)?;
    files.push(p);
    Ok(ReportOutput { files })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench_harness::eval::{EpisodeEval, EvalReport};
    use crate::bench_harness::metrics::{write_metrics, CostRates};
    use crate::cmdp_env::Outcome;

    fn row(step: usize, ret: Option<f64>) -> MetricsRow {
        MetricsRow {
            step,
            ep_ret_ma50: ret,
            cost_rate: CostRates { total: 0.01, tight: 0.004, loose: 0.006 },
            lambda: None,
            mean_kl: 0.0,
            clip_frac: 0.0,
        }
    }

    #[test]
    fn empty_dir_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        assert!(matches!(report(dir.path(), &out), Err(HarnessError::Missing(_))));
        assert!(!out.exists());
    }

    #[test]
    fn renders_curves_and_table() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("ppo");
        fs::create_dir_all(&run).unwrap();
        for seed in 0..2 {
            let rows = vec![row(100, None), row(200, Some(seed as f64 + 1.0))];
            write_metrics(fs::File::create(run.join(format!("metrics_seed{seed}.csv"))).unwrap(), &rows).unwrap();
        }
        let eps = vec![EpisodeEval {
            seed: 0,
            episode: 0,
            episode_return: 6.3,
            episode_cost: 0.2,
            length: 120,
            outcome: Outcome::Idle,
        }];
        let ev = EvalReport::from_episodes("PPO", "easy", eps);
        fs::write(run.join("eval_easy.json"), ev.to_json().unwrap()).unwrap();

        let out = dir.path().join("report");
        let res = report(dir.path(), &out).unwrap();
        assert_eq!(res.files.len(), 3);
        let dat = fs::read_to_string(out.join("ppo.dat")).unwrap();
        let lines: Vec<&str> = dat.lines().skip(1).collect();
        assert_eq!(lines[0], "100 NaN 0.01 0.004 0.006");
        assert!(lines[1].starts_with("200 1.5 "));
        let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
        assert!(summary.contains("6.30 ± 0.00"));
        assert!(summary.contains("0.20 ± 0.00"));
    }
}
