//! The two-class head trained on frozen features.

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TerrainClass;
use crate::featnet::FeatureVector;
use crate::tensor::{
    linear_batch, linear_batch_backward, relu_backward, relu_in_place, softmax_nll, SgdState, Tensor, TensorError,
};

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("training set is empty")]
    Empty,
    #[error("training set has no {missing} examples; both classes are required")]
    SingleClass { missing: TerrainClass },
    #[error("feature {index} has length {actual}, expected {expected}")]
    FeatureLen { index: usize, expected: usize, actual: usize },
    #[error("feature {index} has non-finite values")]
    NonFinite { index: usize },
    #[error("invalid head config: {0}")]
    Config(String),
    #[error("invalid head model: {0}")]
    Model(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    /// Width of the optional hidden layer; `None` is a single linear layer.
    pub hidden: Option<usize>,
    pub learning_rate: f32,
    pub momentum: f32,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Training stops once the epoch-mean loss changes by less than this.
    pub tolerance: f64,
    /// Weight each class's examples by `n / (2 * n_class)`.
    pub balance_classes: bool,
    /// Standardize every feature by its training mean and deviation.
    pub standardize: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden: None,
            learning_rate: 0.01,
            momentum: 0.08,
            max_epochs: 50,
            batch_size: 32,
            tolerance: 1e-6,
            balance_classes: false,
            standardize: true,
        }
    }
}

impl HeadConfig {
    fn validate(&self) -> Result<(), HeadError> {
        let bad = |m: &str| Err(HeadError::Config(m.to_string()));
        if self.hidden == Some(0) {
            return bad("hidden width must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return bad("tolerance must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Dense {
    weight: Tensor,
    bias: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct HeadRepr {
    feature_len: usize,
    feature_mean: Vec<f32>,
    feature_scale: Vec<f32>,
    layers: Vec<Dense>,
    trained_at_ms: u64,
    training_set_size: usize,
}

/// Standardization followed by one or two dense layers producing
/// `[drivable, obstacle]` scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HeadRepr", into = "HeadRepr")]
pub struct HeadModel {
    repr: HeadRepr,
}

impl TryFrom<HeadRepr> for HeadModel {
    type Error = HeadError;

    fn try_from(repr: HeadRepr) -> Result<Self, HeadError> {
        let bad = |m: String| Err(HeadError::Model(m));
        let n = repr.feature_len;
        if n == 0 {
            return bad("feature length must be positive".into());
        }
        if repr.feature_mean.len() != n || repr.feature_scale.len() != n {
            return bad(format!("standardization vectors must have length {n}"));
        }
        if !(1..=2).contains(&repr.layers.len()) {
            return bad(format!("expected 1 or 2 layers, got {}", repr.layers.len()));
        }
        let mut fan_in = n;
        for (i, l) in repr.layers.iter().enumerate() {
            let [out, inp] = l.weight.shape()[..] else {
                return bad(format!("layer {i} weight must be rank 2"));
            };
            if inp != fan_in || l.bias.shape() != [out] {
                return bad(format!("layer {i} shapes do not chain"));
            }
            if !(l.weight.is_finite() && l.bias.is_finite()) {
                return bad(format!("layer {i} has non-finite parameters"));
            }
            fan_in = out;
        }
        if fan_in != 2 {
            return bad(format!("head must output 2 scores, got {fan_in}"));
        }
        Ok(HeadModel { repr })
    }
}

impl From<HeadModel> for HeadRepr {
    fn from(m: HeadModel) -> Self {
        m.repr
    }
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn uniform_dense(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Dense {
    let bound = 1.0 / (inp as f32).sqrt();
    Dense {
        weight: Tensor::from_fn(&[out, inp], |_| rng.gen_range(-bound..=bound)),
        bias: Tensor::from_fn(&[out], |_| rng.gen_range(-bound..=bound)),
    }
}

impl HeadModel {
    /// A head that scores `class` highest for every input.
    pub fn constant(feature_len: usize, class: TerrainClass) -> Self {
        let mut bias = Tensor::zeros(&[2]);
        bias.data_mut()[class.index()] = 1.0;
        HeadModel {
            repr: HeadRepr {
                feature_len,
                feature_mean: vec![0.0; feature_len],
                feature_scale: vec![1.0; feature_len],
                layers: vec![Dense {
                    weight: Tensor::zeros(&[2, feature_len]),
                    bias,
                }],
                trained_at_ms: unix_ms(),
                training_set_size: 0,
            },
        }
    }

    pub fn feature_len(&self) -> usize {
        self.repr.feature_len
    }

    /// Width of the hidden layer, if there is one.
    pub fn hidden(&self) -> Option<usize> {
        (self.repr.layers.len() == 2).then(|| self.repr.layers[0].bias.len())
    }

    pub fn trained_at_ms(&self) -> u64 {
        self.repr.trained_at_ms
    }

    pub fn training_set_size(&self) -> usize {
        self.repr.training_set_size
    }

    /// Weights and standardization, ignoring the training metadata.
    pub fn same_parameters(&self, other: &HeadModel) -> bool {
        self.repr.feature_mean == other.repr.feature_mean
            && self.repr.feature_scale == other.repr.feature_scale
            && self.repr.layers == other.repr.layers
    }

    fn standardized(&self, features: &[&[f32]]) -> Result<Tensor, HeadError> {
        let n = self.repr.feature_len;
        let mut data = Vec::with_capacity(features.len() * n);
        for (i, f) in features.iter().enumerate() {
            if f.len() != n {
                return Err(HeadError::FeatureLen { index: i, expected: n, actual: f.len() });
            }
            data.extend(
                f.iter()
                    .zip(&self.repr.feature_mean)
                    .zip(&self.repr.feature_scale)
                    .map(|((x, m), s)| (x - m) * s),
            );
        }
        Ok(Tensor::from_vec(&[features.len(), n], data)?)
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor, HeadError> {
        let mut h = x.clone();
        let last = self.repr.layers.len() - 1;
        for (i, l) in self.repr.layers.iter().enumerate() {
            h = linear_batch(&h, &l.weight, &l.bias)?;
            if i < last {
                relu_in_place(&mut h);
            }
        }
        Ok(h)
    }

    /// `[drivable, obstacle]` scores for each feature vector.
    pub fn scores_batch(&self, features: &[&[f32]]) -> Result<Vec<[f32; 2]>, HeadError> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let logits = self.forward(&self.standardized(features)?)?;
        Ok(logits.data().chunks_exact(2).map(|r| [r[0], r[1]]).collect())
    }

    pub fn scores(&self, feature: &[f32]) -> Result<[f32; 2], HeadError> {
        Ok(self.scores_batch(&[feature])?[0])
    }

    /// Highest-scoring class; ties go to drivable.
    pub fn predict(&self, feature: &FeatureVector) -> Result<TerrainClass, HeadError> {
        Ok(argmax(self.scores(feature.as_slice())?))
    }
}

pub fn argmax(scores: [f32; 2]) -> TerrainClass {
    if scores[1] > scores[0] {
        TerrainClass::Obstacle
    } else {
        TerrainClass::Drivable
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadReport {
    pub epochs: usize,
    /// Epoch-mean (weighted) loss per epoch.
    pub losses: Vec<f64>,
    pub training_accuracy: f64,
    /// Examples of drivable and obstacle.
    pub class_counts: [usize; 2],
    pub duration_secs: f64,
}

fn validate_examples(examples: &[(FeatureVector, TerrainClass)]) -> Result<[usize; 2], HeadError> {
    let Some((first, _)) = examples.first() else {
        return Err(HeadError::Empty);
    };
    let n = first.len();
    let mut counts = [0; 2];
    for (i, (f, c)) in examples.iter().enumerate() {
        if f.len() != n || n == 0 {
            return Err(HeadError::FeatureLen { index: i, expected: n, actual: f.len() });
        }
        if !f.is_finite() {
            return Err(HeadError::NonFinite { index: i });
        }
        counts[c.index()] += 1;
    }
    for class in TerrainClass::ALL {
        if counts[class.index()] == 0 {
            return Err(HeadError::SingleClass { missing: class });
        }
    }
    Ok(counts)
}

fn standardization(examples: &[(FeatureVector, TerrainClass)], enabled: bool) -> (Vec<f32>, Vec<f32>) {
    let n = examples[0].0.len();
    if !enabled {
        return (vec![0.0; n], vec![1.0; n]);
    }
    let count = examples.len() as f64;
    let mut mean = vec![0.0f64; n];
    for (f, _) in examples {
        for (m, &x) in mean.iter_mut().zip(f.as_slice()) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0f64; n];
    for (f, _) in examples {
        for ((v, &x), m) in var.iter_mut().zip(f.as_slice()).zip(&mean) {
            *v += (x as f64 - m).powi(2);
        }
    }
    // Constant features carry no information; a zero scale drops them.
    let scale = var
        .iter()
        .map(|v| {
            let sd = (v / count).sqrt();
            if sd > 1e-6 {
                (1.0 / sd) as f32
            } else {
                0.0
            }
        })
        .collect();
    (mean.into_iter().map(|m| m as f32).collect(), scale)
}

/// Trains the head by mini-batch SGD with momentum on the softmax negative
/// log-likelihood. The result depends only on the examples, config and seed.
pub fn train_head(
    examples: &[(FeatureVector, TerrainClass)],
    config: &HeadConfig,
    seed: u64,
) -> Result<(HeadModel, HeadReport), HeadError> {
    let start = Instant::now();
    config.validate()?;
    let counts = validate_examples(examples)?;
    let n = examples[0].0.len();
    let (feature_mean, feature_scale) = standardization(examples, config.standardize);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = match config.hidden {
        None => vec![uniform_dense(2, n, &mut rng)],
        Some(h) => vec![uniform_dense(h, n, &mut rng), uniform_dense(2, h, &mut rng)],
    };
    let mut model = HeadModel {
        repr: HeadRepr {
            feature_len: n,
            feature_mean,
            feature_scale,
            layers,
            trained_at_ms: 0,
            training_set_size: examples.len(),
        },
    };
    let weights: [f32; 2] = if config.balance_classes {
        counts.map(|c| examples.len() as f32 / (2.0 * c as f32))
    } else {
        [1.0; 2]
    };
    let shapes: Vec<Vec<usize>> = model
        .repr
        .layers
        .iter()
        .flat_map(|l| [l.weight.shape().to_vec(), l.bias.shape().to_vec()])
        .collect();
    let mut sgd = SgdState::new(config.momentum, shapes.iter().map(|s| s.as_slice()));

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut losses = Vec::new();
    for _ in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            let rows: Vec<&[f32]> = batch.iter().map(|&i| examples[i].0.as_slice()).collect();
            let x = model.standardized(&rows)?;
            let b = batch.len();
            let mut acts = vec![x];
            let last = model.repr.layers.len() - 1;
            for (i, l) in model.repr.layers.iter().enumerate() {
                let mut h = linear_batch(acts.last().expect("input"), &l.weight, &l.bias)?;
                if i < last {
                    acts.push(h.clone());
                    relu_in_place(&mut h);
                    acts.push(h);
                } else {
                    acts.push(h);
                }
            }
            let logits = acts.last().expect("output");
            let mut dlogits = Vec::with_capacity(2 * b);
            for (r, &i) in batch.iter().enumerate() {
                let label = examples[i].1.index();
                let row = Tensor::from_vec(&[2], logits.data()[2 * r..2 * r + 2].to_vec())?;
                let (loss, grad) = softmax_nll(&row, label)?;
                let w = weights[label];
                loss_sum += (w * loss) as f64;
                dlogits.extend(grad.data().iter().map(|g| g * w / b as f32));
            }
            let mut g = Tensor::from_vec(&[b, 2], dlogits)?;
            let mut grads: Vec<Tensor> = Vec::new();
            // acts: [x, (pre, post)?, logits]; layer i reads acts[2i] in the
            // hidden case and acts[0] for the output of a linear head.
            for i in (0..=last).rev() {
                let input = if i == 0 { &acts[0] } else { &acts[2] };
                let lg = linear_batch_backward(input, &model.repr.layers[i].weight, &g)?;
                grads.push(lg.bias_grad);
                grads.push(lg.weight_grad);
                if i > 0 {
                    g = relu_backward(&acts[1], &lg.input_grad)?;
                }
            }
            grads.reverse();
            let mut params: Vec<&mut Tensor> = model
                .repr
                .layers
                .iter_mut()
                .flat_map(|l| [&mut l.weight, &mut l.bias])
                .collect();
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            sgd.step(&mut params, &grad_refs, config.learning_rate)?;
        }
        let epoch_loss = loss_sum / examples.len() as f64;
        let stable = losses.last().is_some_and(|prev: &f64| (prev - epoch_loss).abs() < config.tolerance);
        losses.push(epoch_loss);
        if stable {
            break;
        }
    }

    let rows: Vec<&[f32]> = examples.iter().map(|(f, _)| f.as_slice()).collect();
    let correct = model
        .scores_batch(&rows)?
        .into_iter()
        .zip(examples)
        .filter(|(s, (_, c))| argmax(*s) == *c)
        .count();
    model.repr.trained_at_ms = unix_ms();
    let report = HeadReport {
        epochs: losses.len(),
        losses,
        training_accuracy: correct as f64 / examples.len() as f64,
        class_counts: counts,
        duration_secs: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}
