use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::RunSummary;
use crate::error::{Error, Result};

/// Location and spread of one score across seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (0 for a single run).
    pub std: f64,
    pub median: f64,
}

pub fn summarize(values: &[f64]) -> Stat {
    let n = values.len();
    if n == 0 {
        return Stat {
            mean: f64::NAN,
            std: f64::NAN,
            median: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    Stat { mean, std, median }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub runs: usize,
    pub global_test: Stat,
    pub local_test: Stat,
    pub personalization: Stat,
    pub generalization: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    /// Columns follow the global test, local test, personalization,
    /// generalization order, each as mean and standard deviation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,runs,global_test,global_test_std,local_test,local_test_std,\
             personalization,personalization_std,generalization,generalization_std\n",
        );
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.method, r.runs);
            for s in [r.global_test, r.local_test, r.personalization, r.generalization] {
                let _ = write!(out, ",{},{}", s.mean, s.std);
            }
            out.push('\n');
        }
        out
    }
}

fn federation_key(summary: &RunSummary) -> String {
    summary
        .config
        .get("data")
        .map(|d| d.to_string())
        .unwrap_or_default()
}

/// Groups runs by label (first-appearance order) and reports mean ± std of
/// each score. Every group must cover the same multiset of federations.
pub fn compare_runs(runs: &[RunSummary]) -> Result<ComparisonTable> {
    if runs.is_empty() {
        return Err(Error::Usage("nothing to compare".into()));
    }
    let mut groups: Vec<(String, Vec<&RunSummary>)> = Vec::new();
    for run in runs {
        match groups.iter_mut().find(|(label, _)| *label == run.label) {
            Some((_, members)) => members.push(run),
            None => groups.push((run.label.clone(), vec![run])),
        }
    }
    let keys = |members: &[&RunSummary]| {
        let mut k: Vec<String> = members.iter().map(|r| federation_key(r)).collect();
        k.sort();
        k
    };
    let reference = keys(&groups[0].1);
    for (label, members) in &groups[1..] {
        if keys(members) != reference {
            return Err(Error::Data(format!(
                "mismatched federations: runs of `{label}` do not use the same data as `{}`",
                groups[0].0
            )));
        }
    }
    let rows = groups
        .into_iter()
        .map(|(method, members)| {
            let col = |f: fn(&RunSummary) -> f64| summarize(&members.iter().map(|r| f(r)).collect::<Vec<_>>());
            ComparisonRow {
                runs: members.len(),
                global_test: col(|r| r.t_g),
                local_test: col(|r| r.t_l),
                personalization: col(|r| r.t_p),
                generalization: col(|r| r.t_r),
                method,
            }
        })
        .collect();
    Ok(ComparisonTable { rows })
}
