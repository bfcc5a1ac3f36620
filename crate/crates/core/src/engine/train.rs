//! Minimal SGD trainer for desk-scale fixtures.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::activation::ActivationFn;
use crate::ir::{BatchNorm, Conv2d, Linear, NetworkIR, Node, PoolKind};

use super::data::{Dataset, Split, SyntheticDatasetCfg};
use super::model::{Layer, Model, BN_MOMENTUM};
use super::{accuracy_of, EngineError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainCfg {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainCfg {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

impl TrainCfg {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.batch_size < 2 {
            return Err(EngineError::Config("batch_size must be at least 2 for batch statistics".into()));
        }
        let finite = [self.learning_rate, self.momentum, self.weight_decay];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(EngineError::Config("learning rate, momentum and weight decay must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub net: NetworkIR,
    pub history: Vec<EpochStats>,
}

/// Conv/BN/ReLU ×2 with a max-pool in between, global pooling, and a linear
/// classifier.
pub fn toy_architecture(input: [usize; 3], widths: [usize; 2], num_classes: usize) -> NetworkIR {
    let [c, h, w] = input;
    let mut nodes = vec![
        Node::Conv2d(Conv2d::new(c, widths[0], 3, 1, 1)),
        Node::BatchNorm(BatchNorm::new(widths[0])),
        Node::Activation(ActivationFn::Relu),
    ];
    if h >= 4 && w >= 4 {
        nodes.push(Node::Pool { kind: PoolKind::Max, kernel: 2, stride: 2 });
    }
    nodes.extend([
        Node::Conv2d(Conv2d::new(widths[0], widths[1], 3, 1, 1)),
        Node::BatchNorm(BatchNorm::new(widths[1])),
        Node::Activation(ActivationFn::Relu),
        Node::GlobalAvgPool,
        Node::Linear(Linear::new(widths[1], num_classes)),
    ]);
    NetworkIR::new("toy-cnn", vec![c, h, w], nodes)
}

/// Fresh parameters: He-normal convs, uniform `±1/√fan_in` linear weights,
/// zero biases, identity batch norms.
pub fn initialize(arch: &NetworkIR, seed: u64) -> Result<NetworkIR, EngineError> {
    let mut model = Model::from_ir(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut model.layers {
        match layer {
            Layer::Conv(c) => {
                let fan_in = (c.in_ch / c.groups * c.kernel * c.kernel) as f64;
                let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                c.weights.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
                c.bias.iter_mut().flatten().for_each(|b| *b = 0.0);
            }
            Layer::Linear(l) => {
                let bound = 1.0 / (l.in_features as f64).sqrt();
                let dist = Uniform::new(-bound, bound).expect("nonempty range");
                l.weights.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
                l.bias.iter_mut().flatten().for_each(|b| *b = 0.0);
            }
            Layer::Bn(b) => {
                b.gamma.iter_mut().for_each(|v| *v = 1.0);
                b.beta.iter_mut().for_each(|v| *v = 0.0);
                b.running_mean.iter_mut().for_each(|v| *v = 0.0);
                b.running_var.iter_mut().for_each(|v| *v = 1.0);
            }
            _ => {}
        }
    }
    Ok(model.to_ir(arch))
}

/// SGD with momentum and weight decay, starting from `net`'s parameters.
/// Batch-norm running statistics follow an exponential moving average
/// with momentum 0.1 (unbiased batch variance).
pub fn train(net: &NetworkIR, data: &Dataset, cfg: &TrainCfg) -> Result<Trained, EngineError> {
    cfg.validate()?;
    let mut model = Model::from_ir(net)?;
    if data.shape() != Some(model.input_shape()) {
        return Err(EngineError::Shape(format!(
            "dataset samples {:?} do not match network input {:?}",
            data.sample_shape,
            model.input_shape()
        )));
    }
    let mut velocity: Vec<Vec<f64>> = model.parameters().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (x, labels) = data.batch(chunk);
            let step = model.step(&x, &labels)?;
            if !step.loss.is_finite() {
                return Err(EngineError::Diverged { epoch });
            }
            loss_sum += step.loss * chunk.len() as f64;
            seen += chunk.len();

            for (layer, stats) in model.layers.iter_mut().zip(&step.bn_stats) {
                if let (Layer::Bn(b), Some((mean, var, count))) = (layer, stats) {
                    let unbias = *count as f64 / (*count as f64 - 1.0).max(1.0);
                    for c in 0..b.gamma.len() {
                        b.running_mean[c] = (1.0 - BN_MOMENTUM) * b.running_mean[c] + BN_MOMENTUM * mean[c];
                        b.running_var[c] = (1.0 - BN_MOMENTUM) * b.running_var[c] + BN_MOMENTUM * var[c] * unbias;
                    }
                }
            }
            for ((param, grad), vel) in model.parameters_mut().into_iter().zip(step.grads.tensors()).zip(&mut velocity) {
                for ((p, g), v) in param.iter_mut().zip(grad).zip(vel.iter_mut()) {
                    *v = cfg.momentum * *v + g + cfg.weight_decay * *p;
                    *p -= cfg.learning_rate * *v;
                }
            }
        }
        let train_accuracy = accuracy_of(&model, data)?;
        history.push(EpochStats {
            loss: if seen > 0 { loss_sum / seen as f64 } else { 0.0 },
            train_accuracy,
        });
        if model.parameters().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(EngineError::Diverged { epoch });
        }
    }
    Ok(Trained { net: model.to_ir(net), history })
}

/// Initializes `arch` from `train_cfg.seed`, generates the training split
/// of `data_cfg`, and trains.
pub fn train_toy(arch: &NetworkIR, data_cfg: &SyntheticDatasetCfg, train_cfg: &TrainCfg) -> Result<NetworkIR, EngineError> {
    let has_bn_after_conv = arch.nodes.iter().enumerate().all(|(i, n)| match n {
        Node::Conv2d(_) => matches!(arch.nodes.get(i + 1), Some(Node::BatchNorm(_))),
        _ => true,
    });
    if !has_bn_after_conv {
        return Err(EngineError::Config("every conv must be followed by a batch norm".into()));
    }
    let data = data_cfg.generate(Split::Train);
    let init = initialize(arch, train_cfg.seed)?;
    Ok(train(&init, &data, train_cfg)?.net)
}
