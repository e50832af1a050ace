use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LabeledImage, Network, NetworkError, Params, Trunk};
use crate::tensor::{
    conv2d_backward_into, linear_batch, linear_batch_backward, maxpool2d_backward, relu, relu_backward,
    softmax_nll, SgdState, Tensor,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub lr_base: f64,
    pub lr_ref_batch: f64,
    pub lr_decay: f64,
    pub num_epochs: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 64,
            momentum: 0.08,
            lr_base: 0.05,
            lr_ref_batch: 128.0,
            lr_decay: 0.96,
            num_epochs: 10,
        }
    }
}

/// `lr_base * sqrt(batch) / sqrt(lr_ref_batch) * lr_decay^iteration`.
///
/// One iteration is a full pass over the training set (all augmented
/// subsets), so the decay is applied once per epoch.
pub fn learning_rate(config: &TrainingConfig, iteration: usize) -> f64 {
    config.lr_base * (config.batch_size as f64).sqrt() / config.lr_ref_batch.sqrt()
        * config.lr_decay.powi(iteration as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean loss over the epoch, measured on the forward passes used for the
    /// updates.
    pub mean_loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainingReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }
}

/// Mini-batch SGD driver; owns the optimizer state across epochs.
pub struct Trainer {
    config: TrainingConfig,
    optimizer: SgdState<f32>,
    epoch: usize,
    rng: ChaCha8Rng,
    scratch: Vec<f32>,
}

impl Trainer {
    pub fn new(network: &Network, config: TrainingConfig, seed: u64) -> Self {
        let optimizer = SgdState::new(
            config.momentum as f32,
            network.params().tensors().map(|t| t.shape()),
        );
        Trainer {
            config,
            optimizer,
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            scratch: Vec::new(),
        }
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn optimizer(&self) -> &SgdState<f32> {
        &self.optimizer
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One shuffled pass over `data`.
    pub fn run_epoch(&mut self, network: &mut Network, data: &[LabeledImage]) -> Result<EpochStats, NetworkError> {
        validate(network, data)?;
        let lr = learning_rate(&self.config, self.epoch) as f32;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut grads = Params::zeros(network.spec())?;
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(self.config.batch_size.max(1)) {
            let examples: Vec<&LabeledImage> = batch.iter().map(|&i| &data[i]).collect();
            let (loss, hits) = self.accumulate(network, &examples, &mut grads)?;
            loss_sum += loss;
            correct += hits;
            let grad_refs = grads.tensors();
            self.optimizer
                .step(&mut network.params_mut().tensors_mut(), &grad_refs, lr)?;
        }
        let stats = EpochStats {
            epoch: self.epoch,
            learning_rate: lr as f64,
            mean_loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        self.epoch += 1;
        Ok(stats)
    }

    /// Forward and backward pass over one batch; writes the batch-mean
    /// gradients into `grads` (the 1/B factor enters through the logit
    /// gradient) and returns (summed loss, correct count).
    fn accumulate(
        &mut self,
        net: &Network,
        batch: &[&LabeledImage],
        grads: &mut Params,
    ) -> Result<(f64, usize), NetworkError> {
        for t in grads.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let spec = *net.spec();
        let p = net.params();
        let trunks: Vec<Trunk> = batch
            .iter()
            .map(|ex| net.trunk(net.preprocess(&ex.image)?))
            .collect::<Result<_, _>>()?;
        let flat = Network::stack_flat(&trunks)?;
        let hidden_pre = net.hidden_pre(&flat)?;
        let hidden = relu(&hidden_pre);
        let logits = linear_batch(&hidden, &p.fc2_weight, &p.fc2_bias)?;

        let k = spec.output_classes;
        let scale = 1.0 / batch.len() as f32;
        let mut dlogits = Vec::with_capacity(batch.len() * k);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (row, ex) in logits.data().chunks_exact(k).zip(batch) {
            let row = Tensor::from_vec(&[k], row.to_vec())?;
            let (loss, g) = softmax_nll(&row, ex.label)?;
            loss_sum += loss as f64;
            if argmax(row.data()) == ex.label {
                correct += 1;
            }
            dlogits.extend(g.data().iter().map(|v| v * scale));
        }
        let dlogits = Tensor::from_vec(&[batch.len(), k], dlogits)?;

        let g2 = linear_batch_backward(&hidden, &p.fc2_weight, &dlogits)?;
        grads.fc2_weight = g2.weight_grad;
        grads.fc2_bias = g2.bias_grad;
        let dpre = relu_backward(&hidden_pre, &g2.input_grad)?;
        let g1 = linear_batch_backward(&flat, &p.fc1_weight, &dpre)?;
        grads.fc1_weight = g1.weight_grad;
        grads.fc1_bias = g1.bias_grad;

        let flat_len = flat.shape()[1];
        let mut dpool1 = Tensor::zeros(trunks[0].pool1.shape());
        for (t, dflat) in trunks.iter().zip(g1.input_grad.data().chunks_exact(flat_len)) {
            let dpool2 = Tensor::from_vec(&t.pool2_shape, dflat.to_vec())?;
            let dconv2 = relu_backward(&t.conv2, &maxpool2d_backward(&t.pool2_idx, &dpool2)?)?;
            conv2d_backward_into(
                &t.pool1,
                &p.conv2_weight,
                spec.conv2.stride,
                &dconv2,
                grads.conv2_weight.data_mut(),
                grads.conv2_bias.data_mut(),
                Some(dpool1.data_mut()),
                &mut self.scratch,
            )?;
            let dconv1 = relu_backward(&t.conv1, &maxpool2d_backward(&t.pool1_idx, &dpool1)?)?;
            conv2d_backward_into(
                &t.input,
                &p.conv1_weight,
                spec.conv1.stride,
                &dconv1,
                grads.conv1_weight.data_mut(),
                grads.conv1_bias.data_mut(),
                None,
                &mut self.scratch,
            )?;
        }
        Ok((loss_sum, correct))
    }
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn validate(network: &Network, data: &[LabeledImage]) -> Result<(), NetworkError> {
    if data.is_empty() {
        return Err(NetworkError::EmptyDataset);
    }
    let classes = network.spec().output_classes;
    let size = network.spec().input_size;
    for (index, ex) in data.iter().enumerate() {
        if ex.label >= classes {
            return Err(NetworkError::Label {
                index,
                label: ex.label,
                classes,
            });
        }
        if ex.image.width() != size || ex.image.height() != size {
            return Err(crate::img::ImageError::Size {
                expected_w: size,
                expected_h: size,
                width: ex.image.width(),
                height: ex.image.height(),
            }
            .into());
        }
    }
    Ok(())
}

/// Trains for `config.num_epochs` epochs. Labels and image sizes are checked
/// before any update; zero epochs leave the network untouched.
pub fn train(
    network: &mut Network,
    data: &[LabeledImage],
    config: &TrainingConfig,
    seed: u64,
) -> Result<TrainingReport, NetworkError> {
    validate(network, data)?;
    let mut trainer = Trainer::new(network, config.clone(), seed);
    let mut report = TrainingReport::default();
    for _ in 0..config.num_epochs {
        report.epochs.push(trainer.run_epoch(network, data)?);
    }
    Ok(report)
}

/// Fraction of examples whose argmax logit equals the label.
pub fn evaluate(network: &Network, data: &[LabeledImage]) -> Result<f64, NetworkError> {
    validate(network, data)?;
    let mut correct = 0;
    for chunk in data.chunks(64) {
        let inputs = chunk
            .iter()
            .map(|ex| network.preprocess(&ex.image))
            .collect::<Result<Vec<_>, _>>()?;
        let logits = network.forward_batch(&inputs)?;
        let k = network.spec().output_classes;
        for (row, ex) in logits.data().chunks_exact(k).zip(chunk) {
            if argmax(row) == ex.label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
