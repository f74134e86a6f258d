use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::run::{SummaryRow, SUMMARY_HEADER, TIMING_HEADER};
use crate::error::{Error, Result};

/// Files of one finished run directory.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub summary: Vec<SummaryRow>,
    /// Mean wall-clock seconds per training episode, by policy.
    pub seconds_per_episode: BTreeMap<String, f64>,
}

pub fn load_run(dir: &Path) -> Result<RunArtifacts> {
    let config = ExperimentConfig::load(&dir.join("config.toml"))?;
    let summary_text = fs::read_to_string(dir.join("summary.csv"))?;
    let mut lines = summary_text.lines();
    if lines.next() != Some(SUMMARY_HEADER) {
        return Err(Error::Comparability(format!("{}: unexpected summary header", dir.display())));
    }
    let summary = lines
        .filter(|l| !l.is_empty())
        .map(SummaryRow::parse)
        .collect::<Result<Vec<_>>>()?;
    let mut seconds_per_episode = BTreeMap::new();
    let timing_path = dir.join("timing.csv");
    if timing_path.exists() {
        let text = fs::read_to_string(&timing_path)?;
        let mut lines = text.lines();
        if lines.next() != Some(TIMING_HEADER) {
            return Err(Error::Comparability(format!("{}: unexpected timing header", dir.display())));
        }
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let secs: f64 = f
                .get(3)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Comparability(format!("malformed timing line `{line}`")))?;
            let e = acc.entry(f[1].to_string()).or_default();
            e.0 += secs;
            e.1 += 1;
        }
        seconds_per_episode = acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
    }
    Ok(RunArtifacts {
        dir: dir.to_path_buf(),
        config,
        summary,
        seconds_per_episode,
    })
}

/// Mean and sample standard deviation; `None` without data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            std,
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub policy: String,
    pub runs: usize,
    pub seconds_per_episode: Option<Stat>,
    pub nec: Option<Stat>,
    pub final_avg_cost: Option<Stat>,
    pub eval_avg_cost: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

type Entry<'a> = (&'a SummaryRow, Option<f64>);

/// Aggregates runs of one configuration (differing only in seed) into one
/// row per policy, in first-seen order.
pub fn compare_report(runs: &[RunArtifacts]) -> Result<ComparisonTable> {
    if runs.len() < 2 {
        return Err(Error::Comparability("need at least two runs".into()));
    }
    let reference = runs[0].config.fingerprint();
    for r in &runs[1..] {
        if r.config.fingerprint() != reference {
            return Err(Error::Comparability(format!(
                "{} and {} were produced by different configurations",
                runs[0].dir.display(),
                r.dir.display()
            )));
        }
    }
    let mut order: Vec<String> = Vec::new();
    // summary row and mean seconds per episode, by policy
    let mut groups: BTreeMap<String, Vec<Entry>> = BTreeMap::new();
    for run in runs {
        for row in &run.summary {
            if !groups.contains_key(&row.policy) {
                order.push(row.policy.clone());
            }
            groups
                .entry(row.policy.clone())
                .or_default()
                .push((row, run.seconds_per_episode.get(&row.policy).copied()));
        }
    }
    let rows = order
        .into_iter()
        .map(|policy| {
            let g = &groups[&policy];
            let collect = |f: &dyn Fn(&Entry) -> Option<f64>| -> Vec<f64> {
                g.iter().filter_map(f).collect()
            };
            ComparisonRow {
                runs: g.len(),
                seconds_per_episode: Stat::of(&collect(&|x| x.1)),
                nec: Stat::of(&collect(&|x| x.0.nec.map(|n| n as f64))),
                final_avg_cost: Stat::of(&collect(&|x| x.0.final_avg_cost)),
                eval_avg_cost: Stat::of(&collect(&|x| Some(x.0.eval_avg_cost))),
                policy,
            }
        })
        .collect();
    Ok(ComparisonTable { rows })
}

fn cell(s: Option<Stat>) -> String {
    match s {
        Some(s) => format!("{:.4} ± {:.4}", s.mean, s.std),
        None => "-".into(),
    }
}

fn csv_pair(s: Option<Stat>) -> String {
    match s {
        Some(s) => format!("{},{}", s.mean, s.std),
        None => ",".into(),
    }
}

impl ComparisonTable {
    pub fn row(&self, policy: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "policy,runs,seconds_per_episode_mean,seconds_per_episode_std,nec_mean,nec_std,final_avg_cost_mean,final_avg_cost_std,eval_avg_cost_mean,eval_avg_cost_std\n",
        );
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.policy,
                r.runs,
                csv_pair(r.seconds_per_episode),
                csv_pair(r.nec),
                csv_pair(r.final_avg_cost),
                csv_pair(r.eval_avg_cost)
            )
            .expect("writing to a String");
        }
        out
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let header = ["policy", "runs", "s/episode", "NEC", "final avg cost", "eval avg cost"];
        let body: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.policy.clone(),
                    r.runs.to_string(),
                    cell(r.seconds_per_episode),
                    cell(r.nec),
                    cell(r.final_avg_cost),
                    cell(r.eval_avg_cost),
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |cells: Vec<&str>, out: &mut String| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c:<w$}"))
                .collect();
            writeln!(out, "{}", parts.join("  ").trim_end()).expect("writing to a String");
        };
        line(header.to_vec(), &mut out);
        for row in &body {
            line(row.iter().map(|s| s.as_str()).collect(), &mut out);
        }
        out
    }
}
