//! The trainable classifier: a ReLU MLP feature extractor followed by a
//! linear softmax head, trained with mini-batch SGD and momentum.
//!
//! The feature extractor output (the penultimate activation) is the feature
//! space shared by prototypes, clustering and the propagation graph.

use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{transform_raster, LabeledSet, Layout, UnlabeledSet};
use crate::error::{invalid, Error, Result};
use crate::par;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Rows per chunk for batched inference. Fixed so results never depend on
/// the degree of parallelism.
const INFERENCE_CHUNK: usize = 512;

/// One affine layer, `y = x W + b` with `W` of shape `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros_like(other: &Dense) -> Dense {
        Dense {
            weights: Array2::zeros(other.weights.raw_dim()),
            bias: Array1::zeros(other.bias.raw_dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    dims: Vec<usize>,
    layers: Vec<Dense>,
    velocity: Vec<Dense>,
}

/// Probabilities and penultimate features for a single input.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub probs: Array1<f64>,
    pub features: Array1<f64>,
}

/// One cross-entropy term of a loss: the mean over its rows is added to the total.
#[derive(Debug, Clone, Copy)]
pub struct LossTerm<'a> {
    pub inputs: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
    /// Multiplier on this term's mean cross-entropy.
    pub weight: f64,
}

struct Trace {
    /// Input to each layer; `activations[0]` is the batch itself.
    activations: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn log_sum_exp(row: ArrayView1<'_, f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

impl Classifier {
    /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(invalid!("need at least input and output dims, got {dims:?}"));
        }
        if dims.contains(&0) {
            return Err(invalid!("layer dims must be positive, got {dims:?}"));
        }
        if *dims.last().unwrap() < 2 {
            return Err(invalid!("need at least two classes, got {dims:?}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers: Vec<Dense> = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-bound..bound)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        let velocity = layers.iter().map(Dense::zeros_like).collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
            velocity,
        })
    }

    fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Format("checkpoint has no layers".into()));
        }
        let mut dims = vec![layers[0].weights.nrows()];
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.nrows() != *dims.last().unwrap() || layer.bias.len() != layer.weights.ncols() {
                return Err(Error::Format(format!("layer {i} shapes are inconsistent")));
            }
            dims.push(layer.weights.ncols());
        }
        let velocity = layers.iter().map(Dense::zeros_like).collect();
        Ok(Self { dims, layers, velocity })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Dimension of the feature space (penultimate layer width).
    pub fn feature_dim(&self) -> usize {
        self.dims[self.dims.len() - 2]
    }

    fn check_input(&self, d: usize) -> Result<()> {
        if d != self.input_dim() {
            return Err(invalid!("input has {d} features, model expects {}", self.input_dim()));
        }
        Ok(())
    }

    fn trace(&self, x: ArrayView2<'_, f64>) -> Trace {
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weights);
            z += &layer.bias;
            activations.push(current);
            if l == last {
                return Trace { activations, logits: z };
            }
            z.mapv_inplace(|v| v.max(0.0));
            current = z;
        }
        unreachable!("at least one layer")
    }

    fn probs_and_features_chunk(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let mut trace = self.trace(x);
        let probs = softmax_rows(&trace.logits);
        let features = trace.activations.pop().expect("penultimate activation");
        (probs, features)
    }

    fn chunked<T: Send>(&self, x: ArrayView2<'_, f64>, f: impl Fn(ArrayView2<'_, f64>) -> T + Sync + Send) -> Vec<T> {
        let n = x.nrows();
        let chunks = n.div_ceil(INFERENCE_CHUNK);
        par::map_range(chunks, |c| {
            let lo = c * INFERENCE_CHUNK;
            let hi = (lo + INFERENCE_CHUNK).min(n);
            f(x.slice(s![lo..hi, ..]))
        })
    }

    /// Class probabilities for every row of `x`.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        if x.nrows() == 0 {
            return Ok(Array2::zeros((0, self.num_classes())));
        }
        let parts = self.chunked(x, |chunk| softmax_rows(&self.trace(chunk).logits));
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Ok(ndarray::concatenate(Axis(0), &views).expect("uniform width"))
    }

    /// Penultimate-layer features for every row of `x`.
    pub fn features(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.predict_with_features(x)?.1)
    }

    /// Probabilities and features in one pass.
    pub fn predict_with_features(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_input(x.ncols())?;
        if x.nrows() == 0 {
            return Ok((
                Array2::zeros((0, self.num_classes())),
                Array2::zeros((0, self.feature_dim())),
            ));
        }
        let parts = self.chunked(x, |chunk| self.probs_and_features_chunk(chunk));
        let probs: Vec<_> = parts.iter().map(|p| p.0.view()).collect();
        let feats: Vec<_> = parts.iter().map(|p| p.1.view()).collect();
        Ok((
            ndarray::concatenate(Axis(0), &probs).expect("uniform width"),
            ndarray::concatenate(Axis(0), &feats).expect("uniform width"),
        ))
    }

    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<Forward> {
        let batch = x.insert_axis(Axis(0));
        let (probs, features) = self.predict_with_features(batch)?;
        Ok(Forward {
            probs: probs.row(0).to_owned(),
            features: features.row(0).to_owned(),
        })
    }

    /// Argmax predictions for every row.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let probs = self.predict_proba(x)?;
        Ok(probs.rows().into_iter().map(argmax).collect())
    }

    /// Fraction of rows whose argmax equals the label.
    pub fn accuracy(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
        if labels.len() != x.nrows() || labels.is_empty() {
            return Err(invalid!("{} labels for {} rows", labels.len(), x.nrows()));
        }
        let predictions = self.predict(x)?;
        let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(correct as f64 / labels.len() as f64)
    }

    /// Sum over terms of the mean cross-entropy, and its gradient.
    pub fn loss_and_gradients(&self, terms: &[LossTerm<'_>]) -> Result<(f64, Vec<Dense>)> {
        let terms: Vec<&LossTerm<'_>> = terms.iter().filter(|t| t.inputs.nrows() > 0).collect();
        if terms.is_empty() {
            return Err(invalid!("loss needs at least one non-empty term"));
        }
        let k = self.num_classes();
        let mut scales = Vec::new();
        let mut labels = Vec::new();
        for t in &terms {
            self.check_input(t.inputs.ncols())?;
            if t.labels.len() != t.inputs.nrows() {
                return Err(invalid!("{} labels for {} rows", t.labels.len(), t.inputs.nrows()));
            }
            if let Some(bad) = t.labels.iter().find(|&&y| y >= k) {
                return Err(invalid!("label {bad} out of range for {k} classes"));
            }
            let scale = t.weight / t.inputs.nrows() as f64;
            scales.extend(std::iter::repeat_n(scale, t.inputs.nrows()));
            labels.extend_from_slice(t.labels);
        }
        let views: Vec<_> = terms.iter().map(|t| t.inputs).collect();
        let x = ndarray::concatenate(Axis(0), &views).expect("uniform width");

        let trace = self.trace(x.view());
        let mut loss = 0.0;
        for ((row, &y), &scale) in trace.logits.rows().into_iter().zip(&labels).zip(&scales) {
            loss += scale * (log_sum_exp(row) - row[y]);
        }

        // d loss / d logits = scale * (softmax - onehot)
        let mut delta = softmax_rows(&trace.logits);
        for ((mut row, &y), &scale) in delta.rows_mut().into_iter().zip(&labels).zip(&scales) {
            row[y] -= 1.0;
            row *= scale;
        }

        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.activations[l];
            grads.push(Dense {
                weights: input.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            if l > 0 {
                let mut back = delta.dot(&layer.weights.t());
                Zip::from(&mut back).and(input).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = back;
            }
        }
        grads.reverse();
        Ok((loss, grads))
    }

    /// Heavy-ball step: `v = mu v + (g + wd w)`, `w -= lr v`.
    pub fn sgd_step(&mut self, grads: &[Dense], lr: f64, momentum: f64, weight_decay: f64) {
        for ((layer, vel), g) in self.layers.iter_mut().zip(&mut self.velocity).zip(grads) {
            Zip::from(&mut vel.weights)
                .and(&g.weights)
                .and(&layer.weights)
                .for_each(|v, &g, &w| *v = momentum * *v + g + weight_decay * w);
            Zip::from(&mut vel.bias)
                .and(&g.bias)
                .for_each(|v, &g| *v = momentum * *v + g);
            layer.weights.scaled_add(-lr, &vel.weights);
            layer.bias.scaled_add(-lr, &vel.bias);
        }
    }

    fn reset_momentum(&mut self) {
        for v in &mut self.velocity {
            v.weights.fill(0.0);
            v.bias.fill(0.0);
        }
    }

    pub fn to_json(&self) -> String {
        let doc = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            layer_dims: self.dims.clone(),
            weights: self
                .layers
                .iter()
                .map(|l| l.weights.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect(),
            biases: self.layers.iter().map(|l| l.bias.to_vec()).collect(),
        };
        serde_json::to_string(&doc).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
        if doc.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format_version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                doc.format_version
            )));
        }
        if doc.weights.len() != doc.biases.len() || doc.layer_dims.len() != doc.weights.len() + 1 {
            return Err(Error::Format("checkpoint layer count mismatch".into()));
        }
        let mut layers = Vec::with_capacity(doc.weights.len());
        for (l, (w, b)) in doc.weights.into_iter().zip(doc.biases).enumerate() {
            let (fan_in, fan_out) = (doc.layer_dims[l], doc.layer_dims[l + 1]);
            if w.len() != fan_in || w.iter().any(|r| r.len() != fan_out) || b.len() != fan_out {
                return Err(Error::Format(format!(
                    "layer {l}: weights do not match layer_dims {fan_in}x{fan_out}"
                )));
            }
            let flat: Vec<f64> = w.into_iter().flatten().collect();
            layers.push(Dense {
                weights: Array2::from_shape_vec((fan_in, fan_out), flat).expect("checked"),
                bias: Array1::from(b),
            });
        }
        Self::from_layers(layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    layer_dims: Vec<usize>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Index of the largest probability; ties go to the lowest index.
pub fn pseudo_label(probs: ArrayView1<'_, f64>) -> Result<usize> {
    if probs.is_empty() {
        return Err(invalid!("cannot pseudo-label an empty probability vector"));
    }
    Ok(argmax(probs))
}

/// Argmax of every row.
pub fn pseudo_labels(probs: ArrayView2<'_, f64>) -> Vec<usize> {
    probs.rows().into_iter().map(argmax).collect()
}

fn default_eta0() -> f64 {
    0.01
}
fn default_alpha() -> f64 {
    10.0
}
fn default_beta() -> f64 {
    0.75
}
fn default_momentum() -> f64 {
    0.9
}
fn default_batch() -> usize {
    64
}
fn default_ratio() -> usize {
    7
}
fn default_iterations() -> usize {
    1000
}

/// SGD hyper-parameters. The schedule is `eta0 / (1 + alpha p)^beta`
/// with `p` running linearly from 0 to 1 over the call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_eta0")]
    pub eta0: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch_labeled: usize,
    #[serde(default = "default_ratio")]
    pub unlabeled_ratio: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub augment_sigma: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub term_weighting: TermWeighting,
}

/// Normalization of the labeled and pseudo-labeled loss terms of a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TermWeighting {
    /// Each term is the mean over its active samples.
    #[default]
    ActiveMean,
    /// Each term is the mean over its whole pool, inactive samples counting
    /// zero: the active mean scaled by the active fraction.
    PopulationMean,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta0: default_eta0(),
            alpha: default_alpha(),
            beta: default_beta(),
            momentum: default_momentum(),
            batch_labeled: default_batch(),
            unlabeled_ratio: default_ratio(),
            iterations: default_iterations(),
            seed: 0,
            augment_sigma: 0.0,
            weight_decay: 0.0,
            term_weighting: TermWeighting::ActiveMean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(invalid!("eta0 must be positive, got {}", self.eta0));
        }
        if self.batch_labeled < 1 {
            return Err(invalid!("batch_labeled must be at least 1"));
        }
        if self.unlabeled_ratio < 1 {
            return Err(invalid!("unlabeled_ratio must be at least 1"));
        }
        if self.iterations < 1 {
            return Err(invalid!("iterations must be at least 1"));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(invalid!("schedule parameters must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.augment_sigma < 0.0 || self.weight_decay < 0.0 {
            return Err(invalid!("augment_sigma and weight_decay must be non-negative"));
        }
        Ok(())
    }

    /// Step size at `iteration` (0-based) of `self.iterations`.
    pub fn learning_rate(&self, iteration: usize) -> f64 {
        let p = iteration as f64 / self.iterations as f64;
        self.eta0 / (1.0 + self.alpha * p).powf(self.beta)
    }
}

/// Desk-scale stand-in for strong augmentation.
///
/// Points: additive `N(0, sigma^2)` noise per coordinate. Rasters: a rotation
/// in [-10, 10] degrees plus a shift of -1, 0 or 1 pixel per axis. `sigma = 0`
/// is the identity in both layouts.
pub fn augment<R: Rng + ?Sized>(x: ArrayView1<'_, f64>, layout: Layout, sigma: f64, rng: &mut R) -> Array1<f64> {
    if sigma <= 0.0 {
        return x.to_owned();
    }
    match layout {
        Layout::Points => {
            let noise = Normal::new(0.0, sigma).expect("sigma checked");
            x.mapv(|v| v + noise.sample(rng))
        }
        Layout::Raster { side } => {
            let degrees = rng.random_range(-10.0..=10.0);
            let dx = rng.random_range(-1..=1);
            let dy = rng.random_range(-1..=1);
            let pixels = x.to_vec();
            Array1::from(transform_raster(&pixels, side, degrees, dx, dy))
        }
    }
}

/// Active samples of one stage: `(pool index, label)` pairs with weight 1.
/// Samples with weight 0 are simply absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedBatchSpec {
    /// Indices into the labeled pool, with their (true) labels.
    pub labeled: Vec<(usize, usize)>,
    /// Indices into the unlabeled target pool, with frozen pseudo labels.
    pub pseudo: Vec<(usize, usize)>,
}

impl WeightedBatchSpec {
    fn validate(&self, labeled_len: usize, target_len: usize, k: usize) -> Result<()> {
        if self.labeled.is_empty() && self.pseudo.is_empty() {
            return Err(invalid!("batch spec has no active samples"));
        }
        for &(i, y) in &self.labeled {
            if i >= labeled_len || y >= k {
                return Err(invalid!("labeled entry ({i}, {y}) out of range"));
            }
        }
        for &(i, y) in &self.pseudo {
            if i >= target_len || y >= k {
                return Err(invalid!("pseudo-labeled entry ({i}, {y}) out of range"));
            }
        }
        Ok(())
    }
}

/// `count` positions in `0..pool`: without replacement when the pool is
/// large enough, with replacement otherwise.
fn draw<R: Rng + ?Sized>(pool: usize, count: usize, rng: &mut R) -> Vec<usize> {
    if pool >= count {
        rand::seq::index::sample(rng, pool, count).into_vec()
    } else {
        (0..count).map(|_| rng.random_range(0..pool)).collect()
    }
}

/// Supervised training on the whole labeled set (mean cross-entropy).
pub fn train_source(model: Classifier, source: &LabeledSet, cfg: &TrainConfig) -> Result<Classifier> {
    let spec = WeightedBatchSpec {
        labeled: source.labels().iter().copied().enumerate().collect(),
        pseudo: Vec::new(),
    };
    run_sgd(model, source, None, &spec, cfg)
}

/// One self-training stage: per step, `B` active labeled samples plus `u B`
/// augmented pseudo-labeled target samples; the loss is the sum of the two
/// mean cross-entropies. Pseudo labels stay fixed for the whole call.
pub fn train_stage(
    model: Classifier,
    labeled_pool: &LabeledSet,
    target_pool: &UnlabeledSet,
    spec: &WeightedBatchSpec,
    cfg: &TrainConfig,
) -> Result<Classifier> {
    run_sgd(model, labeled_pool, Some(target_pool), spec, cfg)
}

fn gather(x: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

fn run_sgd(
    mut model: Classifier,
    labeled_pool: &LabeledSet,
    target_pool: Option<&UnlabeledSet>,
    spec: &WeightedBatchSpec,
    cfg: &TrainConfig,
) -> Result<Classifier> {
    cfg.validate()?;
    model.check_input(labeled_pool.dim())?;
    let target_len = target_pool.map_or(0, |t| t.len());
    if let Some(t) = target_pool {
        model.check_input(t.dim())?;
    }
    spec.validate(labeled_pool.len(), target_len, model.num_classes())?;

    model.reset_momentum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labeled_x = labeled_pool.features();
    let unlabeled_batch = cfg.batch_labeled * cfg.unlabeled_ratio;
    let weights = match cfg.term_weighting {
        TermWeighting::ActiveMean => (1.0, 1.0),
        TermWeighting::PopulationMean => (
            spec.labeled.len() as f64 / labeled_pool.len() as f64,
            if target_len == 0 {
                0.0
            } else {
                spec.pseudo.len() as f64 / target_len as f64
            },
        ),
    };

    for iteration in 0..cfg.iterations {
        let mut source_rows = Vec::new();
        let mut source_labels = Vec::new();
        if !spec.labeled.is_empty() {
            for j in draw(spec.labeled.len(), cfg.batch_labeled, &mut rng) {
                let (i, y) = spec.labeled[j];
                source_rows.push(i);
                source_labels.push(y);
            }
        }
        let source_x = gather(labeled_x, &source_rows);

        let mut target_labels = Vec::new();
        let mut target_x = Array2::zeros((0, model.input_dim()));
        if let (Some(pool), false) = (target_pool, spec.pseudo.is_empty()) {
            let picks = draw(spec.pseudo.len(), unlabeled_batch, &mut rng);
            target_x = Array2::zeros((picks.len(), pool.dim()));
            for (r, j) in picks.into_iter().enumerate() {
                let (i, y) = spec.pseudo[j];
                let augmented = augment(pool.row(i), pool.layout(), cfg.augment_sigma, &mut rng);
                target_x.row_mut(r).assign(&augmented);
                target_labels.push(y);
            }
        }

        let terms = [
            LossTerm {
                inputs: source_x.view(),
                labels: &source_labels,
                weight: weights.0,
            },
            LossTerm {
                inputs: target_x.view(),
                labels: &target_labels,
                weight: weights.1,
            },
        ];
        let (loss, grads) = model.loss_and_gradients(&terms)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.weights.iter().all(|v| v.is_finite())) {
            return Err(Error::TrainingDiverged { iteration, loss });
        }
        model.sgd_step(&grads, cfg.learning_rate(iteration), cfg.momentum, cfg.weight_decay);
    }
    Ok(model)
}
