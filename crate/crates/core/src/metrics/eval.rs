use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::confusion::{macro_f1, ConfusionMatrix};
use super::curves::CurveTable;
use crate::data::{Federation, Samples};
use crate::error::Result;
use crate::fl::{Simulation, StrategyKind};

pub const EVAL_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientScores {
    pub client_id: usize,
    /// Macro-F1 of the client's serving model on its own test split.
    pub personalization: f64,
    /// Macro-F1 of the same model on the pooled test set.
    pub generalization: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalScores {
    pub t_p: f64,
    pub t_r: f64,
    pub t_l: f64,
    pub clients: Vec<ClientScores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub strategy: StrategyKind,
    /// Completed rounds at evaluation time.
    pub round: usize,
    pub t_g: f64,
    pub t_p: f64,
    pub t_r: f64,
    pub t_l: f64,
    pub clients: Vec<ClientScores>,
    pub curves: CurveTable,
}

/// `2·a·b / (a + b)`, or 0 when both are 0.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

fn score(sim: &Simulation, samples: &Samples, owner: Option<usize>) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let predicted = sim.infer(&samples.features, owner)?;
    let cm = ConfusionMatrix::from_predictions(sim.n_classes, &samples.labels, &predicted)?;
    Ok(macro_f1(&cm))
}

/// Macro-F1 of the global model over the pooled test set.
pub fn eval_global(sim: &Simulation, global_test: &Samples) -> Result<f64> {
    score(sim, global_test, None)
}

/// Personalization (own test split) and generalization (pooled test set)
/// scores of each client's serving model, averaged unweighted over clients
/// that have a test split. Strategies without local models are scored with the
/// global model.
pub fn eval_local(sim: &Simulation, federation: &Federation) -> Result<LocalScores> {
    let mut clients = Vec::with_capacity(federation.num_clients());
    for (m, data) in federation.clients.iter().enumerate() {
        if data.test.is_empty() {
            continue;
        }
        clients.push(ClientScores {
            client_id: m,
            personalization: score(sim, &data.test, Some(m))?,
            generalization: score(sim, &federation.global_test, Some(m))?,
        });
    }
    let n = clients.len().max(1) as f64;
    let t_p = clients.iter().map(|c| c.personalization).sum::<f64>() / n;
    let t_r = clients.iter().map(|c| c.generalization).sum::<f64>() / n;
    Ok(LocalScores {
        t_p,
        t_r,
        t_l: harmonic_mean(t_p, t_r),
        clients,
    })
}

pub fn evaluate(sim: &Simulation, federation: &Federation, curves: CurveTable) -> Result<EvalReport> {
    let t_g = eval_global(sim, &federation.global_test)?;
    let local = eval_local(sim, federation)?;
    Ok(EvalReport {
        schema_version: EVAL_SCHEMA_VERSION,
        strategy: sim.kind(),
        round: sim.round(),
        t_g,
        t_p: local.t_p,
        t_r: local.t_r,
        t_l: local.t_l,
        clients: local.clients,
        curves,
    })
}

impl EvalReport {
    /// `scope,client_id,t_g,t_p,t_r,t_l`: one overall row, then one row per
    /// client with its personalization and generalization scores.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scope,client_id,t_g,t_p,t_r,t_l\n");
        let _ = writeln!(
            out,
            "overall,,{},{},{},{}",
            self.t_g, self.t_p, self.t_r, self.t_l
        );
        for c in &self.clients {
            let _ = writeln!(
                out,
                "client,{},,{},{},{}",
                c.client_id,
                c.personalization,
                c.generalization,
                harmonic_mean(c.personalization, c.generalization)
            );
        }
        out
    }
}
