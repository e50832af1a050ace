//! The convolutional feature extractor.
//!
//! Two conv + rectify + 2x2 max-pool stages followed by a two-layer
//! classifier:
//!
//! ```text
//! 3x119x119 -conv 8x8/4-> 64x28x28 -pool-> 64x14x14
//!           -conv 5x5/1-> 96x10x10 -pool-> 96x5x5 -> 2400 -> 1536 -> classes
//! ```
//!
//! The 1536-unit hidden activation (after its rectifier) is the feature
//! vector handed to the terrain head; the final classification layer only
//! exists to train the trunk.

mod checkpoint;
mod corpus;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::img::{Image, ImageError};
use crate::tensor::{
    conv2d_forward, conv_output_len, linear_batch, maxpool2d, relu, relu_in_place, PoolIndices, Tensor,
    TensorError,
};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use corpus::{compute_mean_rgb, load_corpus, parse_manifest, CorpusError, LabeledImage, MEAN_RGB_SAMPLE};
pub use train::{evaluate, learning_rate, train, EpochStats, Trainer, TrainingConfig, TrainingReport};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("shape chain violated at {stage}: expected {expected:?}, got {actual:?}")]
    ShapeChain {
        stage: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("label {label} of example {index} is out of range for {classes} classes")]
    Label { index: usize, label: usize, classes: usize },
    #[error("empty dataset")]
    EmptyDataset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub input_size: usize,
    pub conv1: ConvSpec,
    pub pool1: PoolSpec,
    pub conv2: ConvSpec,
    pub pool2: PoolSpec,
    pub hidden: usize,
    pub output_classes: usize,
}

impl Default for NetworkSpec {
    /// The ImageNet configuration: 1000 output classes.
    fn default() -> Self {
        NetworkSpec {
            input_channels: 3,
            input_size: 119,
            conv1: ConvSpec { filters: 64, kernel: 8, stride: 4 },
            pool1: PoolSpec { window: 2, stride: 2 },
            conv2: ConvSpec { filters: 96, kernel: 5, stride: 1 },
            pool2: PoolSpec { window: 2, stride: 2 },
            hidden: 1536,
            output_classes: 1000,
        }
    }
}

impl NetworkSpec {
    pub fn with_classes(classes: usize) -> Self {
        NetworkSpec {
            output_classes: classes,
            ..Self::default()
        }
    }

    /// Expected activation shapes from input to logits:
    /// input, conv1, pool1, conv2, pool2, flatten, hidden, output.
    pub fn shape_chain(&self) -> Result<Vec<Vec<usize>>, NetworkError> {
        let bad = |what: &str| NetworkError::Spec(what.to_string());
        if self.input_channels == 0 || self.hidden == 0 || self.output_classes == 0 {
            return Err(bad("channel, hidden and class counts must be positive"));
        }
        let conv = |n: usize, c: &ConvSpec| conv_output_len(n, c.kernel, c.stride);
        let pool = |n: usize, p: &PoolSpec| {
            (p.window > 0 && p.stride > 0 && n >= p.window && (n - p.window).is_multiple_of(p.stride))
                .then(|| (n - p.window) / p.stride + 1)
        };
        if self.conv1.filters == 0 || self.conv2.filters == 0 {
            return Err(bad("filter counts must be positive"));
        }
        let s1 = conv(self.input_size, &self.conv1).ok_or_else(|| bad("conv1 does not fit the input"))?;
        let p1 = pool(s1, &self.pool1).ok_or_else(|| bad("pool1 does not tile conv1 output"))?;
        let s2 = conv(p1, &self.conv2).ok_or_else(|| bad("conv2 does not fit pool1 output"))?;
        let p2 = pool(s2, &self.pool2).ok_or_else(|| bad("pool2 does not tile conv2 output"))?;
        let (c1, c2) = (self.conv1.filters, self.conv2.filters);
        Ok(vec![
            vec![self.input_channels, self.input_size, self.input_size],
            vec![c1, s1, s1],
            vec![c1, p1, p1],
            vec![c2, s2, s2],
            vec![c2, p2, p2],
            vec![c2 * p2 * p2],
            vec![self.hidden],
            vec![self.output_classes],
        ])
    }

    pub fn flatten_len(&self) -> Result<usize, NetworkError> {
        Ok(self.shape_chain()?[5][0])
    }

    /// Shapes of the eight parameter tensors in [`PARAM_NAMES`] order.
    pub fn param_shapes(&self) -> Result<[Vec<usize>; 8], NetworkError> {
        let flat = self.flatten_len()?;
        let (c1, c2) = (self.conv1, self.conv2);
        Ok([
            vec![c1.filters, self.input_channels, c1.kernel, c1.kernel],
            vec![c1.filters],
            vec![c2.filters, c1.filters, c2.kernel, c2.kernel],
            vec![c2.filters],
            vec![self.hidden, flat],
            vec![self.hidden],
            vec![self.output_classes, self.hidden],
            vec![self.output_classes],
        ])
    }
}

pub const PARAM_NAMES: [&str; 8] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub conv1_weight: Tensor,
    pub conv1_bias: Tensor,
    pub conv2_weight: Tensor,
    pub conv2_bias: Tensor,
    pub fc1_weight: Tensor,
    pub fc1_bias: Tensor,
    pub fc2_weight: Tensor,
    pub fc2_bias: Tensor,
}

impl Params {
    pub fn zeros(spec: &NetworkSpec) -> Result<Self, NetworkError> {
        let shapes = spec.param_shapes()?;
        Ok(Self::from_tensors(shapes.map(|s| Tensor::zeros(&s))))
    }

    pub(crate) fn from_tensors([a, b, c, d, e, f, g, h]: [Tensor; 8]) -> Self {
        Params {
            conv1_weight: a,
            conv1_bias: b,
            conv2_weight: c,
            conv2_bias: d,
            fc1_weight: e,
            fc1_bias: f,
            fc2_weight: g,
            fc2_bias: h,
        }
    }

    pub fn tensors(&self) -> [&Tensor; 8] {
        [
            &self.conv1_weight,
            &self.conv1_bias,
            &self.conv2_weight,
            &self.conv2_bias,
            &self.fc1_weight,
            &self.fc1_bias,
            &self.fc2_weight,
            &self.fc2_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.conv1_weight,
            &mut self.conv1_bias,
            &mut self.conv2_weight,
            &mut self.conv2_bias,
            &mut self.fc1_weight,
            &mut self.fc1_bias,
            &mut self.fc2_weight,
            &mut self.fc2_bias,
        ]
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Output of the frozen trunk for one patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f32>);

impl FeatureVector {
    pub fn new(values: Vec<f32>) -> Self {
        FeatureVector(values)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Network weights plus the input mean they were trained with; this is
/// what a checkpoint stores.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    params: Params,
    mean_rgb: [f32; 3],
}

/// Intermediate activations of the convolutional trunk for one input.
pub(crate) struct Trunk {
    pub input: Tensor,
    pub conv1: Tensor,
    pub pool1_idx: PoolIndices,
    pub pool1: Tensor,
    pub conv2: Tensor,
    pub pool2_idx: PoolIndices,
    pub pool2_shape: Vec<usize>,
    pub flat: Tensor,
}

/// Uniform `±1/sqrt(fan_in)` initialization of weights and biases, drawn
/// in parameter order from a ChaCha8 stream seeded with `seed`.
pub fn build_network(spec: NetworkSpec, seed: u64) -> Result<Network, NetworkError> {
    let shapes = spec.param_shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fan_ins = [
        spec.input_channels * spec.conv1.kernel * spec.conv1.kernel,
        spec.conv1.filters * spec.conv2.kernel * spec.conv2.kernel,
        spec.flatten_len()?,
        spec.hidden,
    ];
    let tensors: Vec<Tensor> = shapes
        .iter()
        .enumerate()
        .map(|(i, shape)| {
            let bound = 1.0 / (fan_ins[i / 2] as f64).sqrt();
            Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound) as f32)
        })
        .collect();
    let tensors: [Tensor; 8] = tensors.try_into().expect("eight parameter tensors");
    Ok(Network {
        spec,
        params: Params::from_tensors(tensors),
        mean_rgb: [0.0; 3],
    })
}

/// Subtracts the per-channel mean from every pixel; nothing else.
pub fn preprocess(image: &Image, mean_rgb: [f32; 3], size: usize) -> Result<Tensor, NetworkError> {
    if image.width() != size || image.height() != size {
        return Err(ImageError::Size {
            expected_w: size,
            expected_h: size,
            width: image.width(),
            height: image.height(),
        }
        .into());
    }
    let mut t = image.to_tensor();
    let plane = size * size;
    for (c, chunk) in t.data_mut().chunks_exact_mut(plane).enumerate() {
        chunk.iter_mut().for_each(|v| *v -= mean_rgb[c]);
    }
    Ok(t)
}

fn check_stage(stage: &'static str, expected: &[usize], t: &Tensor) -> Result<(), NetworkError> {
    if t.shape() != expected {
        return Err(NetworkError::ShapeChain {
            stage,
            expected: expected.to_vec(),
            actual: t.shape().to_vec(),
        });
    }
    Ok(())
}

impl Network {
    pub fn from_parts(spec: NetworkSpec, params: Params, mean_rgb: [f32; 3]) -> Result<Self, NetworkError> {
        let shapes = spec.param_shapes()?;
        for ((name, t), shape) in PARAM_NAMES.iter().zip(params.tensors()).zip(&shapes) {
            if t.shape() != &shape[..] {
                return Err(NetworkError::Spec(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Network { spec, params, mean_rgb })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn mean_rgb(&self) -> [f32; 3] {
        self.mean_rgb
    }

    pub fn set_mean_rgb(&mut self, mean: [f32; 3]) {
        self.mean_rgb = mean;
    }

    pub fn feature_len(&self) -> usize {
        self.spec.hidden
    }

    pub fn preprocess(&self, image: &Image) -> Result<Tensor, NetworkError> {
        preprocess(image, self.mean_rgb, self.spec.input_size)
    }

    pub(crate) fn trunk(&self, input: Tensor) -> Result<Trunk, NetworkError> {
        let chain = self.spec.shape_chain()?;
        let p = &self.params;
        check_stage("input", &chain[0], &input)?;
        let conv1 = conv2d_forward(&input, &p.conv1_weight, &p.conv1_bias, self.spec.conv1.stride)?;
        check_stage("conv1", &chain[1], &conv1)?;
        let (pool1, pool1_idx) = maxpool2d(&relu(&conv1), self.spec.pool1.window, self.spec.pool1.stride)?;
        check_stage("pool1", &chain[2], &pool1)?;
        let conv2 = conv2d_forward(&pool1, &p.conv2_weight, &p.conv2_bias, self.spec.conv2.stride)?;
        check_stage("conv2", &chain[3], &conv2)?;
        let (pool2, pool2_idx) = maxpool2d(&relu(&conv2), self.spec.pool2.window, self.spec.pool2.stride)?;
        check_stage("pool2", &chain[4], &pool2)?;
        let pool2_shape = pool2.shape().to_vec();
        let flat = pool2.reshape(&chain[5])?;
        Ok(Trunk {
            input,
            conv1,
            pool1_idx,
            pool1,
            conv2,
            pool2_idx,
            pool2_shape,
            flat,
        })
    }

    /// Stacks flattened trunk outputs into a `B x 2400` matrix.
    pub(crate) fn stack_flat(trunks: &[Trunk]) -> Result<Tensor, NetworkError> {
        let width = trunks[0].flat.len();
        let mut data = Vec::with_capacity(trunks.len() * width);
        for t in trunks {
            data.extend_from_slice(t.flat.data());
        }
        Ok(Tensor::from_vec(&[trunks.len(), width], data)?)
    }

    /// Pre-activation of the hidden layer for a stack of trunk outputs.
    pub(crate) fn hidden_pre(&self, flat: &Tensor) -> Result<Tensor, NetworkError> {
        let hidden = linear_batch(flat, &self.params.fc1_weight, &self.params.fc1_bias)?;
        Ok(hidden)
    }

    /// Logits for a batch of preprocessed inputs, one row per input.
    pub fn forward_batch(&self, inputs: &[Tensor]) -> Result<Tensor, NetworkError> {
        if inputs.is_empty() {
            return Err(NetworkError::EmptyDataset);
        }
        let mut hidden = self.hidden_batch(inputs)?;
        relu_in_place(&mut hidden);
        let logits = linear_batch(&hidden, &self.params.fc2_weight, &self.params.fc2_bias)?;
        let chain = self.spec.shape_chain()?;
        check_stage("output", &[inputs.len(), chain[7][0]], &logits)?;
        Ok(logits)
    }

    /// Logits for one preprocessed input.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NetworkError> {
        let logits = self.forward_batch(std::slice::from_ref(input))?;
        Ok(logits.reshape(&[self.spec.output_classes])?)
    }

    fn hidden_batch(&self, inputs: &[Tensor]) -> Result<Tensor, NetworkError> {
        let trunks = inputs
            .iter()
            .map(|x| self.trunk(x.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let hidden = self.hidden_pre(&Self::stack_flat(&trunks)?)?;
        check_stage("hidden", &[inputs.len(), self.spec.hidden], &hidden)?;
        Ok(hidden)
    }

    /// Activation shapes of a forward pass, input to logits. Every stage is
    /// checked against [`NetworkSpec::shape_chain`] on the way.
    pub fn shape_trace(&self, input: &Tensor) -> Result<Vec<Vec<usize>>, NetworkError> {
        let t = self.trunk(input.clone())?;
        let mut hidden = self.hidden_pre(&Self::stack_flat(std::slice::from_ref(&t))?)?;
        relu_in_place(&mut hidden);
        let logits = linear_batch(&hidden, &self.params.fc2_weight, &self.params.fc2_bias)?;
        let chain = self.spec.shape_chain()?;
        check_stage("output", &[1, chain[7][0]], &logits)?;
        Ok(vec![
            t.input.shape().to_vec(),
            t.conv1.shape().to_vec(),
            t.pool1.shape().to_vec(),
            t.conv2.shape().to_vec(),
            t.pool2_shape.clone(),
            t.flat.shape().to_vec(),
            vec![hidden.shape()[1]],
            vec![logits.shape()[1]],
        ])
    }

    /// Rectified hidden-layer activations for a batch of preprocessed
    /// inputs. The final classification layer is not evaluated.
    pub fn extract_features_batch(&self, inputs: &[Tensor]) -> Result<Vec<FeatureVector>, NetworkError> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let mut hidden = self.hidden_batch(inputs)?;
        relu_in_place(&mut hidden);
        Ok(hidden
            .data()
            .chunks_exact(self.spec.hidden)
            .map(|row| FeatureVector(row.to_vec()))
            .collect())
    }

    pub fn extract_features(&self, input: &Tensor) -> Result<FeatureVector, NetworkError> {
        Ok(self
            .extract_features_batch(std::slice::from_ref(input))?
            .pop()
            .expect("one input yields one feature vector"))
    }
}
