//! Softmax cross-entropy loss and reverse-mode gradients.

use crate::activation::ActivationFn;
use crate::ir::{PoolKind, Shape};

use super::model::{avg_pool_backward, bn_backward, conv_backward, linear_backward, Cache, Layer, Mode, Model, Tensor};
use super::EngineError;

/// Per-layer parameter gradients, in [`Model::parameters`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) layers: Vec<Vec<Vec<f64>>>,
}

impl Gradients {
    pub fn tensors(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.layers.iter().flatten()
    }
}

/// Batch `(mean, biased variance, element count)` of one batch norm.
pub(crate) type BatchMoments = (Vec<f64>, Vec<f64>, usize);

/// Result of one train-mode forward/backward pass.
#[derive(Debug, Clone)]
pub struct Step {
    pub loss: f64,
    pub logits: Tensor,
    pub grads: Gradients,
    pub(crate) bn_stats: Vec<Option<BatchMoments>>,
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[u32]) -> Result<(f64, Tensor), EngineError> {
    let Shape::Flat(k) = logits.shape else {
        return Err(EngineError::Shape("logits must be flat".into()));
    };
    if labels.len() != logits.n {
        return Err(EngineError::Shape(format!("{} labels for {} samples", labels.len(), logits.n)));
    }
    let inv_n = 1.0 / logits.n as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.data.len()];
    for (n, &label) in labels.iter().enumerate() {
        let label = label as usize;
        if label >= k {
            return Err(EngineError::Label { label, classes: k });
        }
        let row = logits.sample(n);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += (log_z - row[label]) * inv_n;
        for j in 0..k {
            let p = (row[j] - log_z).exp();
            grad[n * k + j] = (p - if j == label { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    Ok((loss, Tensor { n: logits.n, shape: logits.shape, data: grad }))
}

impl Model {
    /// Every trainable tensor: conv `[weights, bias?]`, batch norm
    /// `[γ, β]`, linear `[weights, bias?]`, in layer order.
    pub fn parameters(&self) -> Vec<&Vec<f64>> {
        self.layers.iter().flat_map(layer_params).collect()
    }

    /// Mutable view in the order of [`Model::parameters`].
    pub fn parameters_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers.iter_mut().flat_map(layer_params_mut).collect()
    }

    /// Train-mode loss and gradients for one batch.
    pub fn step(&self, x: &Tensor, labels: &[u32]) -> Result<Step, EngineError> {
        let (logits, caches) = self.forward_cached(x, Mode::Train)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;
        let mut layers: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.layers.len()];
        let mut bn_stats = vec![None; self.layers.len()];
        let mut skip_grads: Vec<Tensor> = Vec::new();
        let mut dy = dlogits;

        for (i, layer) in self.layers.iter().enumerate().rev() {
            let cache = &caches[i];
            dy = match (layer, cache) {
                (Layer::Conv(c), Cache::Input(x)) => {
                    let (dx, dw, db) = conv_backward(c, x, &dy);
                    layers[i].push(dw);
                    layers[i].extend(db);
                    dx
                }
                (Layer::Bn(b), Cache::Bn { xhat, inv_std, mean, var, count }) => {
                    let (dx, dg, dbeta) = bn_backward(b, xhat, inv_std, &dy);
                    layers[i].push(dg);
                    layers[i].push(dbeta);
                    bn_stats[i] = Some((mean.clone(), var.clone(), *count));
                    dx
                }
                (Layer::Act(f), Cache::Input(x)) => act_backward(*f, x, &dy),
                (Layer::Pool { kind: PoolKind::Max, .. }, Cache::MaxIdx { idx, in_shape }) => {
                    let mut dx = Tensor::zeros(dy.n, *in_shape);
                    for (o, &at) in idx.iter().enumerate() {
                        dx.data[at] += dy.data[o];
                    }
                    dx
                }
                (Layer::Pool { kind: PoolKind::Avg, kernel, stride }, Cache::Shape(s)) => {
                    avg_pool_backward(*kernel, *stride, *s, &dy)
                }
                (Layer::GlobalAvgPool, Cache::Shape(s)) => {
                    let hw = s.spatial();
                    let mut data = Vec::with_capacity(dy.n * s.numel());
                    for &d in &dy.data {
                        data.extend(std::iter::repeat_n(d / hw as f64, hw));
                    }
                    Tensor { n: dy.n, shape: *s, data }
                }
                (Layer::Flatten, Cache::Shape(s)) => Tensor { n: dy.n, shape: *s, data: dy.data },
                (Layer::Linear(l), Cache::Input(x)) => {
                    let (dx, dw, db) = linear_backward(l, x, &dy);
                    layers[i].push(dw);
                    layers[i].extend(db);
                    dx
                }
                (Layer::ResEnd, _) => {
                    skip_grads.push(dy.clone());
                    dy
                }
                (Layer::ResBegin, _) => {
                    let skip = skip_grads.pop().expect("validated residual markers");
                    let data = dy.data.iter().zip(&skip.data).map(|(a, b)| a + b).collect();
                    Tensor { n: dy.n, shape: dy.shape, data }
                }
                _ => unreachable!("cache kind matches layer kind"),
            };
        }
        Ok(Step { loss, logits, grads: Gradients { layers }, bn_stats })
    }
}

fn act_backward(f: ActivationFn, x: &Tensor, dy: &Tensor) -> Tensor {
    let data = x.data.iter().zip(&dy.data).map(|(&v, &d)| d * f.derivative(v)).collect();
    Tensor { n: dy.n, shape: dy.shape, data }
}

fn layer_params(layer: &Layer) -> Vec<&Vec<f64>> {
    match layer {
        Layer::Conv(c) => std::iter::once(&c.weights).chain(c.bias.as_ref()).collect(),
        Layer::Bn(b) => vec![&b.gamma, &b.beta],
        Layer::Linear(l) => std::iter::once(&l.weights).chain(l.bias.as_ref()).collect(),
        _ => Vec::new(),
    }
}

fn layer_params_mut(layer: &mut Layer) -> Vec<&mut Vec<f64>> {
    match layer {
        Layer::Conv(c) => std::iter::once(&mut c.weights).chain(c.bias.as_mut()).collect(),
        Layer::Bn(b) => vec![&mut b.gamma, &mut b.beta],
        Layer::Linear(l) => std::iter::once(&mut l.weights).chain(l.bias.as_mut()).collect(),
        _ => Vec::new(),
    }
}
