use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::compare::{summarize, Stat};
use super::{run_experiment, ExperimentConfig};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Beta,
    Q0,
    EtaQ,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(SweepParam::Beta),
            "q0" | "q" => Ok(SweepParam::Q0),
            "eta_q" | "eta-q" => Ok(SweepParam::EtaQ),
            other => Err(Error::Config(format!("cannot sweep `{other}`; use beta, q0 or eta_q"))),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::Q0 => "q0",
            SweepParam::EtaQ => "eta_q",
        }
    }

    pub fn apply(self, config: &mut ExperimentConfig, value: f64) {
        match self {
            SweepParam::Beta => config.strategy.beta = value,
            SweepParam::Q0 => config.strategy.q0 = value,
            SweepParam::EtaQ => config.strategy.eta_q = value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub global_test: Stat,
    pub personalization: Stat,
    pub generalization: Stat,
    pub local_test: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub param: SweepParam,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// One row per swept value with mean, std and median of each score.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}", self.param.name());
        for score in ["t_g", "t_p", "t_r", "t_l"] {
            let _ = write!(out, ",{score}_mean,{score}_std,{score}_median");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{}", r.value);
            for s in [r.global_test, r.personalization, r.generalization, r.local_test] {
                let _ = write!(out, ",{},{},{}", s.mean, s.std, s.median);
            }
            out.push('\n');
        }
        out
    }
}

/// Runs `base` for every value × seed replicate (see
/// [`ExperimentConfig::replicate`]) and tabulates the test scores.
pub fn sweep(base: &ExperimentConfig, param: SweepParam, values: &[f64], seeds: &[u64]) -> Result<SweepTable> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one value and one seed".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut scores = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        for &seed in seeds {
            let mut cfg = base.replicate(seed);
            param.apply(&mut cfg, value);
            let eval = run_experiment(&cfg, None)?.final_eval;
            for (slot, v) in scores.iter_mut().zip([eval.t_g, eval.t_p, eval.t_r, eval.t_l]) {
                slot.push(v);
            }
        }
        rows.push(SweepRow {
            value,
            global_test: summarize(&scores[0]),
            personalization: summarize(&scores[1]),
            generalization: summarize(&scores[2]),
            local_test: summarize(&scores[3]),
        });
    }
    Ok(SweepTable {
        param,
        seeds: seeds.to_vec(),
        rows,
    })
}
