use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Which network a parameter set belongs to. Roles fix the output contract:
/// discriminators emit a single logit, classifiers one logit per class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Extractor,
    Classifier,
    Discriminator,
}

/// One fully-connected layer; `weight` is `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.as_slice().iter().chain(self.bias.iter())
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.weight.shape() == other.weight.shape() && self.bias.len() == other.bias.len()
    }
}

/// Parameters of a multilayer perceptron. Hidden layers use ReLU; the final
/// layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    role: Role,
    layers: Vec<Dense>,
}

impl ModelParams {
    pub fn new(role: Role, layers: Vec<Dense>) -> Result<Self> {
        let params = ModelParams { role, layers };
        params.validate()?;
        Ok(params)
    }

    pub fn zeros(role: Role, dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        ModelParams::new(role, layers)
    }

    /// Glorot-uniform weights, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`,
    /// and zero biases.
    pub fn init<R: Rng + ?Sized>(role: Role, dims: &[usize], rng: &mut R) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut layer = Dense::zeros(fan_in, fan_out);
                for v in layer.weight.as_mut_slice() {
                    *v = rng.random_range(-a..a);
                }
                layer
            })
            .collect();
        ModelParams::new(role, layers)
    }

    /// Every weight and bias drawn from `U(-half_width, half_width)`.
    pub fn init_uniform<R: Rng + ?Sized>(
        role: Role,
        dims: &[usize],
        half_width: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut params = ModelParams::zeros(role, dims)?;
        for layer in &mut params.layers {
            for v in layer.weight.as_mut_slice() {
                *v = rng.random_range(-half_width..half_width);
            }
            for v in &mut layer.bias {
                *v = rng.random_range(-half_width..half_width);
            }
        }
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(
                    "layer composition",
                    format!("layer {} input {}", k + 1, pair[0].output_dim()),
                    pair[1].input_dim(),
                ));
            }
        }
        for layer in &self.layers {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::shape("bias length", layer.output_dim(), layer.bias.len()));
            }
        }
        if self.role == Role::Discriminator && self.output_dim() != 1 {
            return Err(Error::shape("discriminator output", 1, self.output_dim()));
        }
        if !self.is_finite() {
            return Err(Error::Numerical("non-finite parameter value".into()));
        }
        Ok(())
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.values().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.role == other.role
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.same_shape(b))
    }

    /// Bitwise equality of every parameter, treating `0.0` and `-0.0` as distinct.
    pub fn bitwise_eq(&self, other: &ModelParams) -> bool {
        self.same_shape(other)
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.values().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()))
    }

    /// Convex combination `Σ w_i · models[i]` for weights summing to one,
    /// evaluated as `models[0] + Σ w_i · (models[i] - models[0])` in slice order
    /// so that identical operands reproduce themselves exactly.
    pub fn convex_combination(models: &[&ModelParams], weights: &[f64]) -> Result<ModelParams> {
        let anchor = *models
            .first()
            .ok_or_else(|| Error::Usage("combination of zero models".into()))?;
        if models.len() != weights.len() {
            return Err(Error::shape("combination weights", models.len(), weights.len()));
        }
        if let Some(bad) = models.iter().find(|m| !m.same_shape(anchor)) {
            return Err(Error::shape(
                "combination operand",
                format!("{} layers of matching shape", anchor.layers.len()),
                format!("{} layers of differing shape", bad.layers.len()),
            ));
        }
        let mut out = anchor.clone();
        for (model, &w) in models.iter().zip(weights) {
            for ((acc, layer), base) in out.layers.iter_mut().zip(&model.layers).zip(&anchor.layers) {
                let dst = acc.weight.as_mut_slice().iter_mut().chain(acc.bias.iter_mut());
                let src = layer.values().zip(base.values());
                for (a, (x, x0)) in dst.zip(src) {
                    *a += w * (x - x0);
                }
            }
        }
        Ok(out)
    }

    /// Forward pass without caching intermediates.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.affine(&self.layers[0].weight, &self.layers[0].bias);
        for layer in &self.layers[1..] {
            relu_in_place(&mut h);
            h = h.affine(&layer.weight, &layer.bias);
        }
        Ok(h)
    }

    /// Forward pass that records each layer's input for [`ModelParams::backward`].
    pub fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut y = h.affine(&layer.weight, &layer.bias);
            if k + 1 < self.layers.len() {
                relu_in_place(&mut y);
            }
            inputs.push(h);
            h = y;
        }
        Ok((h, ForwardCache { inputs }))
    }

    /// Reverse pass: parameter gradients and the gradient w.r.t. the input.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Matrix) -> Result<(Gradients, Matrix)> {
        let (grads, dx) = self.reverse(cache, grad_out, true)?;
        Ok((grads.expect("parameter gradients requested"), dx))
    }

    /// Reverse pass through a frozen model: only the input gradient is formed.
    pub fn input_gradient(&self, cache: &ForwardCache, grad_out: &Matrix) -> Result<Matrix> {
        Ok(self.reverse(cache, grad_out, false)?.1)
    }

    fn reverse(
        &self,
        cache: &ForwardCache,
        grad_out: &Matrix,
        want_params: bool,
    ) -> Result<(Option<Gradients>, Matrix)> {
        self.check_cache(cache, grad_out)?;
        let mut grads = want_params.then(|| Gradients::zeros_like(self));
        let mut delta = grad_out.clone();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &cache.inputs[k];
            if let Some(g) = grads.as_mut() {
                let slot = &mut g.layers[k];
                for i in 0..delta.rows() {
                    let d = delta.row(i);
                    let x = input.row(i);
                    for (o, &dv) in d.iter().enumerate() {
                        slot.bias[o] += dv;
                        if dv != 0.0 {
                            for (w, &xv) in slot.weight.row_mut(o).iter_mut().zip(x) {
                                *w += dv * xv;
                            }
                        }
                    }
                }
            }
            let mut dx = Matrix::zeros(delta.rows(), layer.input_dim());
            for i in 0..delta.rows() {
                let d = delta.row(i);
                let dxi = dx.row_mut(i);
                for (o, &dv) in d.iter().enumerate() {
                    if dv != 0.0 {
                        for (acc, &w) in dxi.iter_mut().zip(layer.weight.row(o)) {
                            *acc += dv * w;
                        }
                    }
                }
            }
            if k > 0 {
                // `input` is the ReLU output of layer k-1, positive exactly where
                // the pre-activation was positive.
                for (g, &a) in dx.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            delta = dx;
        }
        Ok((grads, delta))
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(
                "model input columns",
                self.input_dim(),
                x.cols(),
            ));
        }
        Ok(())
    }

    fn check_cache(&self, cache: &ForwardCache, grad_out: &Matrix) -> Result<()> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::Usage(format!(
                "forward cache holds {} layers, model has {}",
                cache.inputs.len(),
                self.layers.len()
            )));
        }
        for (input, layer) in cache.inputs.iter().zip(&self.layers) {
            if input.cols() != layer.input_dim() {
                return Err(Error::Usage(
                    "forward cache was recorded by a different model".into(),
                ));
            }
        }
        let n = cache.inputs[0].rows();
        if grad_out.shape() != (n, self.output_dim()) {
            return Err(Error::shape(
                "upstream gradient",
                format!("{n}x{}", self.output_dim()),
                format!("{}x{}", grad_out.rows(), grad_out.cols()),
            ));
        }
        Ok(())
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
        return Err(Error::Config(format!(
            "layer dimensions must list at least input and output, all positive; got {dims:?}"
        )));
    }
    Ok(())
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Layer inputs recorded during [`ModelParams::forward_cached`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].rows()
    }
}

/// Gradient buffers congruent with a [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.values().all(|v| v.is_finite()))
    }

    pub fn congruent_with(&self, params: &ModelParams) -> bool {
        self.layers.len() == params.layers.len()
            && self.layers.iter().zip(&params.layers).all(|(g, p)| g.same_shape(p))
    }

    /// `self += other`
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_scaled(&b.weight, 1.0);
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    /// Flattened view in layer order: weights row-major, then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.values().copied()).collect()
    }
}

/// Labeled mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::Usage("empty batch".into()));
        }
        if labels.len() != inputs.rows() {
            return Err(Error::shape("batch labels", inputs.rows(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::Data(format!(
                "label {bad} outside [0, {n_classes})"
            )));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn expect_role(params: &ModelParams, role: Role) -> Result<()> {
    if params.role != role {
        return Err(Error::Config(format!(
            "expected {role:?} parameters, got {:?}",
            params.role
        )));
    }
    Ok(())
}

/// Features `F(x)` of a batch under an extractor.
pub fn forward_features(params: &ModelParams, batch: &Batch) -> Result<Matrix> {
    expect_role(params, Role::Extractor)?;
    params.forward(&batch.inputs)
}

/// Class logits `C(f)`; softmax is applied only inside the loss.
pub fn forward_classify(params: &ModelParams, features: &Matrix) -> Result<Matrix> {
    expect_role(params, Role::Classifier)?;
    params.forward(features)
}

/// Lower and upper clamp distance for discriminator probabilities.
pub const DISC_EPS: f64 = 1e-7;

/// Discriminator probabilities plus the unclamped sigmoid values needed to
/// backpropagate through the clamp.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscOutput {
    pub probs: Vec<f64>,
    raw: Vec<f64>,
}

impl DiscOutput {
    fn from_logits(logits: &Matrix) -> Self {
        let raw: Vec<f64> = logits.as_slice().iter().map(|&z| sigmoid(z)).collect();
        let probs = raw.iter().map(|&s| clamp_prob(s)).collect();
        DiscOutput { probs, raw }
    }

    /// Chains `dL/dp` through the clamped sigmoid to `dL/dz` (n × 1).
    pub fn logit_gradient(&self, grad_probs: &[f64]) -> Matrix {
        let data = self
            .raw
            .iter()
            .zip(grad_probs)
            .map(|(&s, &g)| {
                if s < DISC_EPS || s > 1.0 - DISC_EPS {
                    0.0
                } else {
                    g * s * (1.0 - s)
                }
            })
            .collect();
        Matrix::from_vec(self.raw.len(), 1, data).expect("n x 1 gradient")
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(DISC_EPS, 1.0 - DISC_EPS)
}

/// `D(f)`: sigmoid of the discriminator's scalar output, clamped to `[ε, 1-ε]`.
pub fn discriminate(params: &ModelParams, features: &Matrix) -> Result<Vec<f64>> {
    expect_role(params, Role::Discriminator)?;
    let logits = params.forward(features)?;
    Ok(DiscOutput::from_logits(&logits).probs)
}

pub fn discriminate_cached(
    params: &ModelParams,
    features: &Matrix,
) -> Result<(DiscOutput, ForwardCache)> {
    expect_role(params, Role::Discriminator)?;
    let (logits, cache) = params.forward_cached(features)?;
    Ok((DiscOutput::from_logits(&logits), cache))
}
