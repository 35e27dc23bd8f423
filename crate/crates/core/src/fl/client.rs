use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{StrategyConfig, StrategyKind};
use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::nn::objective::{disc_objective, global_objective, local_objective};
use crate::nn::{cross_entropy, sgd_step, ModelParams, OptimizerState};

/// Per-client persistent state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientState {
    pub client_id: usize,
    pub local_extractor: ModelParams,
    pub discriminator: ModelParams,
    /// Private classifier, used only by the local-only baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_classifier: Option<ModelParams>,
    pub local_opt: OptimizerState,
    pub disc_opt: OptimizerState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_classifier_opt: Option<OptimizerState>,
    pub last_global_loss: Option<f64>,
}

/// Everything a client sends back after one round plus its own new state.
#[derive(Clone, Debug)]
pub struct ClientUpdate {
    pub extractor: ModelParams,
    pub classifier: ModelParams,
    /// Final-epoch mean of the global-model training loss.
    pub global_loss: f64,
    /// Final-epoch means of the personalization losses, when trained.
    pub local_loss: Option<f64>,
    pub reg_loss: Option<f64>,
    pub disc_loss: Option<f64>,
    pub state: ClientState,
}

#[derive(Default)]
struct EpochMeans {
    n: usize,
    global: f64,
    local: f64,
    reg: f64,
    disc: f64,
    has_local: bool,
    has_reg: bool,
    has_disc: bool,
}

impl EpochMeans {
    fn mean(&self, total: f64, present: bool) -> Option<f64> {
        present.then(|| total / self.n as f64)
    }
}

fn finite(value: f64, what: &str, client: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!("client {client}: non-finite {what} loss")))
    }
}

/// Runs `R` epochs of shuffled mini-batches. For GRP-FED each batch takes, in
/// order, a global-model step on the client's copies of the received extractor
/// and classifier, a local-extractor step on `β·L^l + (1-β)·L_R` with the
/// received classifier and the discriminator frozen, and a discriminator step
/// on `L_D` with global features from the received extractor. FedAvg and q-FFL
/// run only the global step; LocalOnly trains a private extractor and
/// classifier and leaves the received models untouched.
pub fn client_update<R: Rng + ?Sized>(
    client: &ClientState,
    global_extractor: &ModelParams,
    classifier: &ModelParams,
    data: &ClientDataset,
    n_classes: usize,
    config: &StrategyConfig,
    rng: &mut R,
) -> Result<ClientUpdate> {
    if data.train.is_empty() {
        return Err(Error::Data(format!("client {} has no training data", client.client_id)));
    }
    if config.kind == StrategyKind::LocalOnly {
        return local_only_update(client, global_extractor, classifier, data, n_classes, config, rng);
    }
    let id = client.client_id;
    let personalize = config.kind == StrategyKind::GrpFed;
    let use_disc = personalize && config.discriminator;

    let mut extractor = global_extractor.clone();
    let mut head = classifier.clone();
    let mut extractor_opt = OptimizerState::new(&extractor, config.lr, config.momentum)?;
    let mut head_opt = OptimizerState::new(&head, config.lr, config.momentum)?;
    let mut state = client.clone();

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut last = EpochMeans::default();
    for _ in 0..config.local_epochs {
        order.shuffle(rng);
        let mut acc = EpochMeans::default();
        for chunk in order.chunks(config.batch_size) {
            let batch = data.train.batch(chunk, n_classes)?;
            let nb = batch.len() as f64;
            acc.n += batch.len();

            let step = global_objective(&extractor, &head, &batch)?;
            acc.global += nb * finite(step.loss, "global", id)?;
            sgd_step(&mut extractor, &step.extractor, &mut extractor_opt)?;
            sgd_step(&mut head, &step.classifier, &mut head_opt)?;

            if !personalize {
                continue;
            }
            let disc = use_disc.then_some(&state.discriminator);
            let local = local_objective(&state.local_extractor, classifier, disc, &batch, config.beta)?;
            acc.local += nb * finite(local.local_loss, "local", id)?;
            acc.has_local = true;
            if let Some(r) = local.reg_loss {
                acc.reg += nb * finite(r, "regularizer", id)?;
                acc.has_reg = true;
            }
            sgd_step(&mut state.local_extractor, &local.extractor, &mut state.local_opt)?;

            if use_disc {
                let f_global = global_extractor.forward(&batch.inputs)?;
                let f_local = state.local_extractor.forward(&batch.inputs)?;
                let d = disc_objective(&state.discriminator, &f_global, &f_local)?;
                acc.disc += nb * finite(d.loss, "discriminator", id)?;
                acc.has_disc = true;
                sgd_step(&mut state.discriminator, &d.grads, &mut state.disc_opt)?;
            }
        }
        last = acc;
    }

    let global_loss = last.global / last.n as f64;
    state.last_global_loss = Some(global_loss);
    Ok(ClientUpdate {
        extractor,
        classifier: head,
        global_loss,
        local_loss: last.mean(last.local, last.has_local),
        reg_loss: last.mean(last.reg, last.has_reg),
        disc_loss: last.mean(last.disc, last.has_disc),
        state,
    })
}

fn local_only_update<R: Rng + ?Sized>(
    client: &ClientState,
    global_extractor: &ModelParams,
    classifier: &ModelParams,
    data: &ClientDataset,
    n_classes: usize,
    config: &StrategyConfig,
    rng: &mut R,
) -> Result<ClientUpdate> {
    let id = client.client_id;
    let mut state = client.clone();
    let mut head = state.local_classifier.take().unwrap_or_else(|| classifier.clone());
    let mut head_opt = match state.local_classifier_opt.take() {
        Some(opt) => opt,
        None => OptimizerState::new(&head, config.lr, config.momentum)?,
    };

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut last_total = 0.0;
    for _ in 0..config.local_epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = data.train.batch(chunk, n_classes)?;
            let step = global_objective(&state.local_extractor, &head, &batch)?;
            total += batch.len() as f64 * finite(step.loss, "local", id)?;
            sgd_step(&mut state.local_extractor, &step.extractor, &mut state.local_opt)?;
            sgd_step(&mut head, &step.classifier, &mut head_opt)?;
        }
        last_total = total;
    }
    let loss = last_total / data.train.len() as f64;
    state.local_classifier = Some(head);
    state.local_classifier_opt = Some(head_opt);
    state.last_global_loss = Some(loss);
    Ok(ClientUpdate {
        extractor: global_extractor.clone(),
        classifier: classifier.clone(),
        global_loss: loss,
        local_loss: Some(loss),
        reg_loss: None,
        disc_loss: None,
        state,
    })
}

/// Mean cross-entropy of `extractor ∘ classifier` over a client's train split.
pub fn training_loss(
    extractor: &ModelParams,
    classifier: &ModelParams,
    data: &ClientDataset,
    n_classes: usize,
) -> Result<f64> {
    let batch = data.train.as_batch(n_classes)?;
    let logits = classifier.forward(&extractor.forward(&batch.inputs)?)?;
    Ok(cross_entropy(&logits, &batch.labels)?.0)
}
