use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::client::{client_update, ClientState, ClientUpdate};
use super::config::{StrategyConfig, StrategyKind};
use super::server::{adapt_q, aggregate, aggregation_weights, select_clients, ServerState};
use crate::data::{population_std, Federation};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, softmax, Matrix, ModelParams, OptimizerState, Role};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Outcome of one communication round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 1-based index of the completed round.
    pub round: usize,
    pub selected: Vec<usize>,
    /// Final-epoch global training loss of each selected client.
    pub losses: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    /// Loss power used for this round's aggregation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    pub mean_loss: f64,
    pub max_loss: f64,
    pub loss_std: f64,
    /// Sum over selected clients of the global, personalization and
    /// discriminator losses; reported, never optimized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_loss: Option<f64>,
}

/// Derives an independent seed for `(stream, a, b)` with the splitmix64 finalizer.
pub fn derive_seed(seed: u64, stream: u64, a: u64, b: u64) -> u64 {
    let mut z = seed;
    for v in [stream, a, b] {
        z = z.wrapping_add(v.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const STREAM_INIT: u64 = 1;
const STREAM_SELECT: u64 = 2;
const STREAM_CLIENT: u64 = 3;

/// Full simulation state; serializing it yields a bit-exact checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub schema_version: u32,
    pub config: StrategyConfig,
    pub n_classes: usize,
    pub input_dim: usize,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    selection_rng: ChaCha8Rng,
}

impl Simulation {
    /// Seeds every model from `config.seed`: the global extractor and
    /// classifier, then each client's local extractor and discriminator.
    pub fn new(config: StrategyConfig, input_dim: usize, n_classes: usize, n_clients: usize) -> Result<Self> {
        let config = config.resolved();
        config.validate()?;
        if n_clients == 0 {
            return Err(Error::Config("simulation needs at least one client".into()));
        }
        let m = &config.model;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_INIT, 0, 0));
        let extractor = ModelParams::init(Role::Extractor, &m.extractor_dims(input_dim), &mut rng)?;
        let classifier = ModelParams::init(Role::Classifier, &m.classifier_dims(n_classes), &mut rng)?;
        let mut clients = Vec::with_capacity(n_clients);
        for client_id in 0..n_clients {
            let local_extractor =
                ModelParams::init(Role::Extractor, &m.extractor_dims(input_dim), &mut rng)?;
            let discriminator =
                ModelParams::init(Role::Discriminator, &m.discriminator_dims(), &mut rng)?;
            clients.push(ClientState {
                client_id,
                local_opt: OptimizerState::new(&local_extractor, config.lr, config.momentum)?,
                disc_opt: OptimizerState::new(&discriminator, config.lr, config.momentum)?,
                local_extractor,
                discriminator,
                local_classifier: None,
                local_classifier_opt: None,
                last_global_loss: None,
            });
        }
        let server = ServerState {
            extractor,
            classifier,
            q: config.q0,
            prev_loss_std: None,
            round: 0,
        };
        Ok(Simulation {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            selection_rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_SELECT, 0, 0)),
            config,
            n_classes,
            input_dim,
            server,
            clients,
        })
    }

    pub fn for_federation(config: StrategyConfig, federation: &Federation) -> Result<Self> {
        Simulation::new(
            config,
            federation.feature_dim,
            federation.n_classes,
            federation.num_clients(),
        )
    }

    pub fn kind(&self) -> StrategyKind {
        self.config.kind
    }

    pub fn round(&self) -> usize {
        self.server.round
    }

    pub fn is_finished(&self) -> bool {
        self.server.round >= self.config.rounds
    }

    /// Selects clients, trains them (in parallel, each on private copies),
    /// updates `q` and aggregates. On any client failure the simulation is left
    /// exactly as it was before the call.
    pub fn run_round(&mut self, federation: &Federation) -> Result<RoundReport> {
        if federation.num_clients() != self.clients.len()
            || federation.n_classes != self.n_classes
            || federation.feature_dim != self.input_dim
        {
            return Err(Error::Config("federation does not match the simulation's dimensions".into()));
        }
        let mut selection_rng = self.selection_rng.clone();
        let selected = select_clients(self.clients.len(), self.config.client_fraction, &mut selection_rng);
        let round = self.server.round;
        let updates: Vec<ClientUpdate> = selected
            .par_iter()
            .map(|&m| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    self.config.seed,
                    STREAM_CLIENT,
                    round as u64,
                    m as u64,
                ));
                client_update(
                    &self.clients[m],
                    &self.server.extractor,
                    &self.server.classifier,
                    &federation.clients[m],
                    self.n_classes,
                    &self.config,
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;

        let losses: Vec<f64> = updates.iter().map(|u| u.global_loss).collect();
        if log::log_enabled!(log::Level::Debug) {
            let mean = |f: fn(&ClientUpdate) -> Option<f64>| {
                let v: Vec<f64> = updates.iter().filter_map(f).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            };
            log::debug!(
                "round {}: local {:?} reg {:?} disc {:?}",
                round + 1,
                mean(|u| u.local_loss),
                mean(|u| u.reg_loss),
                mean(|u| u.disc_loss)
            );
        }
        let loss_std = population_std(&losses);
        let mut server = self.server.clone();
        let (lambdas, q) = match self.config.kind {
            StrategyKind::LocalOnly => (None, None),
            kind => {
                let q = match kind {
                    StrategyKind::GrpFed => match server.prev_loss_std {
                        Some(prev) => adapt_q(server.q, prev, loss_std, self.config.eta_q),
                        None => server.q,
                    },
                    StrategyKind::QFfl => self.config.q0,
                    _ => 0.0,
                };
                let weights = aggregation_weights(&losses, q)?;
                let extractors: Vec<&ModelParams> = updates.iter().map(|u| &u.extractor).collect();
                let classifiers: Vec<&ModelParams> = updates.iter().map(|u| &u.classifier).collect();
                let (f, c) = aggregate(&extractors, &classifiers, &weights)?;
                if !(f.is_finite() && c.is_finite()) {
                    return Err(Error::Numerical(format!("round {}: aggregated model is not finite", round + 1)));
                }
                server.extractor = f;
                server.classifier = c;
                server.q = q;
                server.prev_loss_std = Some(loss_std);
                (Some(weights), (kind != StrategyKind::FedAvg).then_some(q))
            }
        };
        server.round += 1;

        let total_loss = (self.config.kind == StrategyKind::GrpFed).then(|| {
            updates
                .iter()
                .map(|u| {
                    let personal = match (u.local_loss, u.reg_loss) {
                        (Some(l), Some(r)) if self.config.discriminator => {
                            self.config.beta * l + (1.0 - self.config.beta) * r
                        }
                        (Some(l), _) => l,
                        _ => 0.0,
                    };
                    u.global_loss + personal + u.disc_loss.unwrap_or(0.0)
                })
                .sum()
        });
        let report = RoundReport {
            round: server.round,
            mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            max_loss: losses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            loss_std,
            selected: selected.clone(),
            losses,
            lambdas,
            q,
            total_loss,
        };

        for (update, &m) in updates.into_iter().zip(&selected) {
            self.clients[m] = update.state;
        }
        self.server = server;
        self.selection_rng = selection_rng;
        Ok(report)
    }

    /// Class logits for `inputs`. With an owner, strategies that keep local
    /// models use that client's extractor (and private classifier for
    /// LocalOnly); otherwise the global model answers. LocalOnly without an
    /// owner averages the softmax outputs of all local models.
    pub fn scores(&self, inputs: &Matrix, owner: Option<usize>) -> Result<Matrix> {
        if let Some(m) = owner {
            if m >= self.clients.len() {
                return Err(Error::Usage(format!(
                    "unknown client id {m}; federation has {} clients",
                    self.clients.len()
                )));
            }
        }
        match (self.config.kind, owner) {
            (StrategyKind::GrpFed, Some(m)) => self
                .server
                .classifier
                .forward(&self.clients[m].local_extractor.forward(inputs)?),
            (StrategyKind::LocalOnly, Some(m)) => self.local_only_logits(m, inputs),
            (StrategyKind::LocalOnly, None) => {
                let mut mean = Matrix::zeros(inputs.rows(), self.n_classes);
                let share = 1.0 / self.clients.len() as f64;
                for m in 0..self.clients.len() {
                    mean.add_scaled(&softmax(&self.local_only_logits(m, inputs)?), share);
                }
                Ok(mean)
            }
            _ => self
                .server
                .classifier
                .forward(&self.server.extractor.forward(inputs)?),
        }
    }

    fn local_only_logits(&self, m: usize, inputs: &Matrix) -> Result<Matrix> {
        let client = &self.clients[m];
        let head = client.local_classifier.as_ref().unwrap_or(&self.server.classifier);
        head.forward(&client.local_extractor.forward(inputs)?)
    }

    /// Predicted classes, ties broken toward the lowest index.
    pub fn infer(&self, inputs: &Matrix, owner: Option<usize>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.scores(inputs, owner)?))
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, json)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let sim: Simulation = serde_json::from_slice(&std::fs::read(path)?)?;
        if sim.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "checkpoint schema {} is not supported",
                sim.schema_version
            )));
        }
        sim.server.extractor.validate()?;
        sim.server.classifier.validate()?;
        Ok(sim)
    }
}
