//! Loss-and-gradient compositions for the three per-batch training phases.

use super::loss::{cross_entropy, disc_loss, reg_loss};
use super::matrix::Matrix;
use super::model::{discriminate_cached, Batch, Gradients, ModelParams, Role};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GlobalStep {
    pub loss: f64,
    pub extractor: Gradients,
    pub classifier: Gradients,
}

/// `J(C(F(x)), y)` with gradients for both the extractor and the classifier.
pub fn global_objective(
    extractor: &ModelParams,
    classifier: &ModelParams,
    batch: &Batch,
) -> Result<GlobalStep> {
    check_pair(extractor, classifier)?;
    let (features, f_cache) = extractor.forward_cached(&batch.inputs)?;
    let (logits, c_cache) = classifier.forward_cached(&features)?;
    let (loss, d_logits) = cross_entropy(&logits, &batch.labels)?;
    let (classifier_grads, d_features) = classifier.backward(&c_cache, &d_logits)?;
    let (extractor_grads, _) = extractor.backward(&f_cache, &d_features)?;
    Ok(GlobalStep {
        loss,
        extractor: extractor_grads,
        classifier: classifier_grads,
    })
}

#[derive(Clone, Debug)]
pub struct LocalStep {
    /// `L^l`, cross-entropy of the local extractor under the frozen classifier.
    pub local_loss: f64,
    /// `L_R`, present when a discriminator regularizes the step.
    pub reg_loss: Option<f64>,
    /// Gradient of `β·L^l + (1-β)·L_R` (or of `L^l` alone without a
    /// discriminator) with respect to the local extractor only.
    pub extractor: Gradients,
}

/// Personalization objective. The classifier and discriminator are treated as
/// constants; only the local extractor receives a gradient. With `beta == 1`
/// the regularizer is reported but its gradient path is not evaluated.
pub fn local_objective(
    extractor: &ModelParams,
    classifier: &ModelParams,
    discriminator: Option<&ModelParams>,
    batch: &Batch,
    beta: f64,
) -> Result<LocalStep> {
    check_pair(extractor, classifier)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta must lie in [0, 1], got {beta}")));
    }
    let (features, f_cache) = extractor.forward_cached(&batch.inputs)?;
    let (logits, c_cache) = classifier.forward_cached(&features)?;
    let (local_loss, d_logits) = cross_entropy(&logits, &batch.labels)?;
    let mut d_features = classifier.input_gradient(&c_cache, &d_logits)?;

    let mut reg = None;
    if let Some(disc) = discriminator {
        let (out, d_cache) = discriminate_cached(disc, &features)?;
        let (loss_r, d_probs) = reg_loss(&out.probs);
        reg = Some(loss_r);
        if beta < 1.0 {
            let d_reg = disc.input_gradient(&d_cache, &out.logit_gradient(&d_probs))?;
            d_features.scale(beta);
            d_features.add_scaled(&d_reg, 1.0 - beta);
        }
    }
    let (extractor_grads, _) = extractor.backward(&f_cache, &d_features)?;
    Ok(LocalStep {
        local_loss,
        reg_loss: reg,
        extractor: extractor_grads,
    })
}

#[derive(Clone, Debug)]
pub struct DiscStep {
    pub loss: f64,
    pub grads: Gradients,
}

/// `L_D` over features from the global (true) and local (false) extractors,
/// with the gradient for the discriminator only.
pub fn disc_objective(
    discriminator: &ModelParams,
    global_features: &Matrix,
    local_features: &Matrix,
) -> Result<DiscStep> {
    let (out_g, cache_g) = discriminate_cached(discriminator, global_features)?;
    let (out_l, cache_l) = discriminate_cached(discriminator, local_features)?;
    let loss = disc_loss(&out_g.probs, &out_l.probs);
    let (mut grads, _) =
        discriminator.backward(&cache_g, &out_g.logit_gradient(&loss.grad_global))?;
    let (grads_l, _) = discriminator.backward(&cache_l, &out_l.logit_gradient(&loss.grad_local))?;
    grads.accumulate(&grads_l);
    Ok(DiscStep {
        loss: loss.loss,
        grads,
    })
}

fn check_pair(extractor: &ModelParams, classifier: &ModelParams) -> Result<()> {
    if extractor.role() != Role::Extractor || classifier.role() != Role::Classifier {
        return Err(Error::Config(format!(
            "expected extractor and classifier, got {:?} and {:?}",
            extractor.role(),
            classifier.role()
        )));
    }
    if extractor.output_dim() != classifier.input_dim() {
        return Err(Error::shape(
            "feature dimension",
            classifier.input_dim(),
            extractor.output_dim(),
        ));
    }
    Ok(())
}
