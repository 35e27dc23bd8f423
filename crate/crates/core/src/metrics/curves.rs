use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fl::RoundReport;

pub const CURVE_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub round: usize,
    pub mean_loss: f64,
    pub max_loss: f64,
    pub loss_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_max: Option<f64>,
}

/// Per-round loss dispersion and aggregation statistics, ready for plotting.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveTable {
    pub schema_version: u32,
    pub rows: Vec<CurveRow>,
}

impl CurveTable {
    pub fn new() -> Self {
        CurveTable {
            schema_version: CURVE_SCHEMA_VERSION,
            rows: Vec::new(),
        }
    }

    /// Appends a report; rounds must strictly increase.
    pub fn push(&mut self, report: &RoundReport) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if report.round <= last.round {
                return Err(Error::Usage(format!(
                    "round {} reported after round {}",
                    report.round, last.round
                )));
            }
        }
        let lambdas = report.lambdas.as_deref();
        self.rows.push(CurveRow {
            round: report.round,
            mean_loss: report.mean_loss,
            max_loss: report.max_loss,
            loss_std: report.loss_std,
            q: report.q,
            lambda_min: lambdas.map(|l| l.iter().copied().fold(f64::INFINITY, f64::min)),
            lambda_max: lambdas.map(|l| l.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        });
        Ok(())
    }

    /// `round,mean_loss,max_loss,loss_std,q,lambda_min,lambda_max`; absent
    /// values are empty cells.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("round,mean_loss,max_loss,loss_std,q,lambda_min,lambda_max\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.round,
                r.mean_loss,
                r.max_loss,
                r.loss_std,
                opt(r.q),
                opt(r.lambda_min),
                opt(r.lambda_max)
            );
        }
        out
    }
}

pub fn record_curves<'a, I>(reports: I) -> Result<CurveTable>
where
    I: IntoIterator<Item = &'a RoundReport>,
{
    let mut table = CurveTable::new();
    for report in reports {
        table.push(report)?;
    }
    Ok(table)
}
