use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    /// Adaptive-q loss-powered aggregation plus discriminator-regularized
    /// local extractors.
    #[serde(rename = "grp-fed", alias = "grpfed", alias = "GRP-FED")]
    GrpFed,
    /// Uniform parameter averaging over the selected clients.
    #[serde(rename = "fedavg", alias = "FedAvg")]
    FedAvg,
    /// Loss-powered aggregation with a fixed power `q0`.
    #[serde(rename = "qffl", alias = "q-FFL", alias = "qFFL")]
    QFfl,
    /// Each client trains its own extractor and classifier; no aggregation.
    #[serde(rename = "local", alias = "LocalOnly", alias = "local-only")]
    LocalOnly,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::GrpFed => "grp-fed",
            StrategyKind::FedAvg => "fedavg",
            StrategyKind::QFfl => "qffl",
            StrategyKind::LocalOnly => "local",
        }
    }

    /// Whether clients keep personalized models that serve their own data.
    pub fn has_local_models(self) -> bool {
        matches!(self, StrategyKind::GrpFed | StrategyKind::LocalOnly)
    }

    pub fn aggregates(self) -> bool {
        self != StrategyKind::LocalOnly
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "grp-fed" | "grpfed" => Ok(StrategyKind::GrpFed),
            "fedavg" => Ok(StrategyKind::FedAvg),
            "qffl" | "q-ffl" => Ok(StrategyKind::QFfl),
            "local" | "localonly" | "local-only" => Ok(StrategyKind::LocalOnly),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Layer widths. The extractor is `input → hidden → hidden → feature_dim`;
/// classifier and discriminator are two-layer heads of width `head_hidden`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "defaults::hidden")]
    pub hidden: usize,
    #[serde(default = "defaults::feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "defaults::head_hidden")]
    pub head_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: defaults::hidden(),
            feature_dim: defaults::feature_dim(),
            head_hidden: defaults::head_hidden(),
        }
    }
}

impl ModelConfig {
    pub fn extractor_dims(&self, input_dim: usize) -> Vec<usize> {
        vec![input_dim, self.hidden, self.hidden, self.feature_dim]
    }

    pub fn classifier_dims(&self, n_classes: usize) -> Vec<usize> {
        vec![self.feature_dim, self.head_hidden, n_classes]
    }

    pub fn discriminator_dims(&self) -> Vec<usize> {
        vec![self.feature_dim, self.head_hidden, 1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Initial loss power.
    #[serde(default = "defaults::q0")]
    pub q0: f64,
    /// Adjustment rate of the loss power.
    #[serde(default = "defaults::eta_q")]
    pub eta_q: f64,
    /// Weight of the local classification loss against the regularizer.
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    #[serde(default = "defaults::local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::client_fraction")]
    pub client_fraction: f64,
    #[serde(default = "defaults::rounds")]
    pub rounds: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    /// Train and apply the per-client discriminator (GRP-FED only).
    #[serde(default = "defaults::discriminator")]
    pub discriminator: bool,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn q0() -> f64 {
        10.0
    }
    pub fn eta_q() -> f64 {
        0.5
    }
    pub fn beta() -> f64 {
        0.5
    }
    pub fn local_epochs() -> usize {
        5
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn client_fraction() -> f64 {
        0.5
    }
    pub fn rounds() -> usize {
        100
    }
    pub fn lr() -> f64 {
        5e-3
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn discriminator() -> bool {
        true
    }
    pub fn hidden() -> usize {
        64
    }
    pub fn feature_dim() -> usize {
        32
    }
    pub fn head_hidden() -> usize {
        32
    }
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        StrategyConfig {
            kind,
            q0: defaults::q0(),
            eta_q: defaults::eta_q(),
            beta: defaults::beta(),
            local_epochs: defaults::local_epochs(),
            batch_size: defaults::batch_size(),
            client_fraction: defaults::client_fraction(),
            rounds: defaults::rounds(),
            lr: defaults::lr(),
            momentum: defaults::momentum(),
            discriminator: defaults::discriminator(),
            model: ModelConfig::default(),
            seed: 0,
        }
    }

    /// Applies the per-strategy reductions: q-FFL never adapts `q`; FedAvg and
    /// LocalOnly carry no loss power at all.
    pub fn resolved(mut self) -> Self {
        match self.kind {
            StrategyKind::GrpFed => {}
            StrategyKind::QFfl => self.eta_q = 0.0,
            StrategyKind::FedAvg | StrategyKind::LocalOnly => {
                self.q0 = 0.0;
                self.eta_q = 0.0;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.q0.is_finite() && self.q0 >= 0.0) {
            return fail(format!("q0 must be finite and >= 0, got {}", self.q0));
        }
        if !(self.eta_q.is_finite() && self.eta_q >= 0.0) {
            return fail(format!("eta_q must be finite and >= 0, got {}", self.eta_q));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return fail(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if self.local_epochs == 0 || self.batch_size == 0 {
            return fail("local_epochs and batch_size must be positive".into());
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return fail(format!("client_fraction must lie in (0, 1], got {}", self.client_fraction));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        let m = &self.model;
        if m.hidden == 0 || m.feature_dim == 0 || m.head_hidden == 0 {
            return fail("layer widths must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_pins_reductions() {
        let q = StrategyConfig::new(StrategyKind::QFfl).resolved();
        assert_eq!(q.eta_q, 0.0);
        assert_eq!(q.q0, 10.0);
        let f = StrategyConfig::new(StrategyKind::FedAvg).resolved();
        assert_eq!((f.q0, f.eta_q), (0.0, 0.0));
        let g = StrategyConfig::new(StrategyKind::GrpFed).resolved();
        assert_eq!((g.q0, g.eta_q, g.beta), (10.0, 0.5, 0.5));
    }

    #[test]
    fn parses_names() {
        assert_eq!("GRP-FED".parse::<StrategyKind>().unwrap(), StrategyKind::GrpFed);
        assert_eq!("q-ffl".parse::<StrategyKind>().unwrap(), StrategyKind::QFfl);
        assert!("afl".parse::<StrategyKind>().is_err());
        let cfg: StrategyConfig = serde_json::from_str(r#"{"kind":"fedavg","rounds":3}"#).unwrap();
        assert_eq!(cfg.kind, StrategyKind::FedAvg);
        assert_eq!(cfg.batch_size, 64);
    }
}
