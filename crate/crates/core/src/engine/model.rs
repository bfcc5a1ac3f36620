//! f64 execution graph built from a [`NetworkIR`].
//!
//! Summation order is fixed everywhere: input channels ascending, then
//! kernel rows, then kernel columns. Removing a channel whose activation is
//! exactly zero therefore leaves every downstream value bit-identical.

use crate::activation::{ActivationFn, Nonlinearity};
use crate::ir::{self, NetworkIR, Node, PoolKind, Shape};

use super::EngineError;

/// BN running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

/// A batch of activations, `(n, shape)` with NCHW layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(n: usize, shape: Shape, data: Vec<f64>) -> Result<Self, EngineError> {
        if data.len() != n * shape.numel() {
            return Err(EngineError::Shape(format!(
                "{} values for {} samples of {:?}",
                data.len(),
                n,
                shape
            )));
        }
        Ok(Self { n, shape, data })
    }

    pub fn zeros(n: usize, shape: Shape) -> Self {
        Self { n, shape, data: vec![0.0; n * shape.numel()] }
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let k = self.shape.numel();
        &self.data[i * k..(i + 1) * k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvLayer {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BnLayer {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LinearLayer {
    pub out_features: usize,
    pub in_features: usize,
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer {
    Conv(ConvLayer),
    Bn(BnLayer),
    Act(ActivationFn),
    Pool { kind: PoolKind, kernel: usize, stride: usize },
    GlobalAvgPool,
    Flatten,
    Linear(LinearLayer),
    ResBegin,
    ResEnd,
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn narrow(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// What backward needs from the forward pass, per layer.
#[derive(Debug, Clone)]
pub(crate) enum Cache {
    /// Layer input.
    Input(Tensor),
    Bn { xhat: Vec<f64>, inv_std: Vec<f64>, mean: Vec<f64>, var: Vec<f64>, count: usize },
    /// Flat index of the chosen input per max-pool output.
    MaxIdx { idx: Vec<usize>, in_shape: Shape },
    Shape(Shape),
    None,
}

/// Executable network.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub(crate) input: Shape,
    pub(crate) layers: Vec<Layer>,
    /// Output shape of each layer.
    pub(crate) shapes: Vec<Shape>,
}

impl Model {
    pub fn from_ir(net: &NetworkIR) -> Result<Self, EngineError> {
        ir::validate(net).map_err(EngineError::Invalid)?;
        let input = net.input().expect("validated");
        let shapes = net.shapes().into_iter().map(|s| s.expect("validated")).collect();
        let layers = net
            .nodes
            .iter()
            .map(|node| match node {
                Node::Conv2d(c) => Layer::Conv(ConvLayer {
                    out_ch: c.out_ch,
                    in_ch: c.in_ch,
                    kernel: c.kernel,
                    stride: c.stride,
                    padding: c.padding,
                    groups: c.groups,
                    weights: widen(&c.weights),
                    bias: c.bias.as_deref().map(widen),
                }),
                Node::BatchNorm(b) => Layer::Bn(BnLayer {
                    gamma: widen(&b.gamma),
                    beta: widen(&b.beta),
                    running_mean: widen(&b.running_mean),
                    running_var: widen(&b.running_var),
                    eps: b.eps,
                }),
                Node::Activation(f) => Layer::Act(*f),
                Node::Pool { kind, kernel, stride } => Layer::Pool { kind: *kind, kernel: *kernel, stride: *stride },
                Node::GlobalAvgPool => Layer::GlobalAvgPool,
                Node::Flatten => Layer::Flatten,
                Node::Linear(l) => Layer::Linear(LinearLayer {
                    out_features: l.out_features,
                    in_features: l.in_features,
                    weights: widen(&l.weights),
                    bias: l.bias.as_deref().map(widen),
                }),
                Node::ResidualBegin => Layer::ResBegin,
                Node::ResidualEnd => Layer::ResEnd,
            })
            .collect();
        Ok(Self { input, layers, shapes })
    }

    /// Writes parameters back into `template`'s structure, rounded to f32.
    pub fn to_ir(&self, template: &NetworkIR) -> NetworkIR {
        let mut net = template.clone();
        for (node, layer) in net.nodes.iter_mut().zip(&self.layers) {
            match (node, layer) {
                (Node::Conv2d(c), Layer::Conv(l)) => {
                    c.weights = narrow(&l.weights);
                    c.bias = l.bias.as_deref().map(narrow);
                }
                (Node::BatchNorm(b), Layer::Bn(l)) => {
                    b.gamma = narrow(&l.gamma);
                    b.beta = narrow(&l.beta);
                    b.running_mean = narrow(&l.running_mean);
                    b.running_var = narrow(&l.running_var);
                }
                (Node::Linear(n), Layer::Linear(l)) => {
                    n.weights = narrow(&l.weights);
                    n.bias = l.bias.as_deref().map(narrow);
                }
                _ => {}
            }
        }
        net
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn output_shape(&self) -> Shape {
        self.shapes.last().copied().unwrap_or(self.input)
    }

    fn check_input(&self, x: &Tensor) -> Result<(), EngineError> {
        if x.shape != self.input || x.data.len() != x.n * x.shape.numel() {
            return Err(EngineError::Shape(format!(
                "batch of {:?} does not match network input {:?}",
                x.shape, self.input
            )));
        }
        if x.n == 0 {
            return Err(EngineError::Shape("empty batch".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor, EngineError> {
        self.check_input(x)?;
        Ok(self.run(x.clone(), mode, None, false).0)
    }

    /// Forward pass that also returns the batch-normalized values `x̂` of
    /// layer `probe` (which must be a batch norm), stopping there.
    pub fn probe_normalized(&self, x: &Tensor, mode: Mode, probe: usize) -> Result<Vec<f64>, EngineError> {
        self.check_input(x)?;
        if !matches!(self.layers.get(probe), Some(Layer::Bn(_))) {
            return Err(EngineError::Shape(format!("node {probe} is not a batch norm")));
        }
        let (_, caches) = self.run(x.clone(), mode, Some(probe), true);
        match caches.into_iter().last() {
            Some(Cache::Bn { xhat, .. }) => Ok(xhat),
            _ => unreachable!("probe stops at a batch norm"),
        }
    }

    pub(crate) fn forward_cached(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Vec<Cache>), EngineError> {
        self.check_input(x)?;
        Ok(self.run(x.clone(), mode, None, true))
    }

    fn run(&self, mut x: Tensor, mode: Mode, stop: Option<usize>, keep: bool) -> (Tensor, Vec<Cache>) {
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        let mut skips: Vec<Tensor> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let out_shape = self.shapes[i];
            let (y, cache) = match layer {
                Layer::Conv(c) => (conv_forward(c, &x, out_shape), Cache::Input(x)),
                Layer::Bn(b) => {
                    let (y, cache) = bn_forward(b, &x, mode);
                    (y, cache)
                }
                Layer::Act(f) => {
                    let data = x.data.iter().map(|&v| f.eval(v)).collect();
                    (Tensor { n: x.n, shape: x.shape, data }, Cache::Input(x))
                }
                Layer::Pool { kind, kernel, stride } => pool_forward(*kind, *kernel, *stride, &x, out_shape),
                Layer::GlobalAvgPool => {
                    let hw = x.shape.spatial();
                    let data = x.data.chunks(hw).map(|c| c.iter().sum::<f64>() / hw as f64).collect();
                    let cache = Cache::Shape(x.shape);
                    (Tensor { n: x.n, shape: out_shape, data }, cache)
                }
                Layer::Flatten => {
                    let cache = Cache::Shape(x.shape);
                    (Tensor { n: x.n, shape: out_shape, data: x.data }, cache)
                }
                Layer::Linear(l) => (linear_forward(l, &x), Cache::Input(x)),
                Layer::ResBegin => {
                    skips.push(x.clone());
                    (x, Cache::None)
                }
                Layer::ResEnd => {
                    let skip = skips.pop().expect("validated residual markers");
                    let data = x.data.iter().zip(&skip.data).map(|(a, b)| a + b).collect();
                    (Tensor { n: x.n, shape: x.shape, data }, Cache::None)
                }
            };
            if keep {
                caches.push(cache);
            }
            x = y;
            if stop == Some(i) {
                break;
            }
        }
        (x, caches)
    }
}

fn conv_forward(c: &ConvLayer, x: &Tensor, out_shape: Shape) -> Tensor {
    let Shape::Spatial { h, w, .. } = x.shape else { unreachable!() };
    let Shape::Spatial { h: oh, w: ow, .. } = out_shape else { unreachable!() };
    let k = c.kernel;
    let in_g = c.in_ch / c.groups;
    let out_g = c.out_ch / c.groups;
    let mut out = vec![0.0; x.n * c.out_ch * oh * ow];
    for n in 0..x.n {
        let xs = x.sample(n);
        for o in 0..c.out_ch {
            let g = o / out_g;
            let wo = &c.weights[o * in_g * k * k..(o + 1) * in_g * k * k];
            let bias = c.bias.as_ref().map_or(0.0, |b| b[o]);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..in_g {
                        let ch = g * in_g + ci;
                        let plane = &xs[ch * h * w..(ch + 1) * h * w];
                        let wk = &wo[ci * k * k..(ci + 1) * k * k];
                        for ky in 0..k {
                            let iy = (oy * c.stride + ky) as isize - c.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &plane[iy as usize * w..(iy as usize + 1) * w];
                            for kx in 0..k {
                                let ix = (ox * c.stride + kx) as isize - c.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += wk[ky * k + kx] * row[ix as usize];
                            }
                        }
                    }
                    out[((n * c.out_ch + o) * oh + oy) * ow + ox] = acc + bias;
                }
            }
        }
    }
    Tensor { n: x.n, shape: out_shape, data: out }
}

pub(crate) fn conv_backward(c: &ConvLayer, x: &Tensor, dy: &Tensor) -> (Tensor, Vec<f64>, Option<Vec<f64>>) {
    let Shape::Spatial { h, w, .. } = x.shape else { unreachable!() };
    let Shape::Spatial { h: oh, w: ow, .. } = dy.shape else { unreachable!() };
    let k = c.kernel;
    let in_g = c.in_ch / c.groups;
    let out_g = c.out_ch / c.groups;
    let mut dx = vec![0.0; x.data.len()];
    let mut dw = vec![0.0; c.weights.len()];
    let mut db = c.bias.as_ref().map(|b| vec![0.0; b.len()]);
    for n in 0..x.n {
        let xs = x.sample(n);
        let base = n * h * w * c.in_ch;
        for o in 0..c.out_ch {
            let g = o / out_g;
            for oy in 0..oh {
                for ox in 0..ow {
                    let d = dy.data[((n * c.out_ch + o) * oh + oy) * ow + ox];
                    if let Some(db) = db.as_mut() {
                        db[o] += d;
                    }
                    if d == 0.0 {
                        continue;
                    }
                    for ci in 0..in_g {
                        let ch = g * in_g + ci;
                        for ky in 0..k {
                            let iy = (oy * c.stride + ky) as isize - c.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * c.stride + kx) as isize - c.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xi = ch * h * w + iy as usize * w + ix as usize;
                                let wi = ((o * in_g + ci) * k + ky) * k + kx;
                                dw[wi] += d * xs[xi];
                                dx[base + xi] += d * c.weights[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    (Tensor { n: x.n, shape: x.shape, data: dx }, dw, db)
}

fn bn_forward(b: &BnLayer, x: &Tensor, mode: Mode) -> (Tensor, Cache) {
    let c_count = x.shape.channels();
    let hw = x.shape.spatial();
    let count = x.n * hw;
    let mut y = vec![0.0; x.data.len()];
    let mut xhat = vec![0.0; x.data.len()];
    let mut inv_std = vec![0.0; c_count];
    let mut means = vec![0.0; c_count];
    let mut vars = vec![0.0; c_count];
    for c in 0..c_count {
        let idx = |n: usize, s: usize| (n * c_count + c) * hw + s;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = 0.0;
                for n in 0..x.n {
                    for s in 0..hw {
                        sum += x.data[idx(n, s)];
                    }
                }
                let mean = sum / count as f64;
                let mut sq = 0.0;
                for n in 0..x.n {
                    for s in 0..hw {
                        let d = x.data[idx(n, s)] - mean;
                        sq += d * d;
                    }
                }
                (mean, sq / count as f64)
            }
            Mode::Eval => (b.running_mean[c], b.running_var[c]),
        };
        let is = 1.0 / (var + b.eps).sqrt();
        means[c] = mean;
        vars[c] = var;
        inv_std[c] = is;
        for n in 0..x.n {
            for s in 0..hw {
                let i = idx(n, s);
                let xh = (x.data[i] - mean) * is;
                xhat[i] = xh;
                y[i] = b.gamma[c] * xh + b.beta[c];
            }
        }
    }
    (
        Tensor { n: x.n, shape: x.shape, data: y },
        Cache::Bn { xhat, inv_std, mean: means, var: vars, count },
    )
}

/// Returns `(dx, dγ, dβ)` for a train-mode batch norm.
pub(crate) fn bn_backward(b: &BnLayer, xhat: &[f64], inv_std: &[f64], dy: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
    let c_count = dy.shape.channels();
    let hw = dy.shape.spatial();
    let m = (dy.n * hw) as f64;
    let mut dx = vec![0.0; dy.data.len()];
    let mut dgamma = vec![0.0; c_count];
    let mut dbeta = vec![0.0; c_count];
    for c in 0..c_count {
        let idx = |n: usize, s: usize| (n * c_count + c) * hw + s;
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for n in 0..dy.n {
            for s in 0..hw {
                let i = idx(n, s);
                sum_d += dy.data[i];
                sum_dx += dy.data[i] * xhat[i];
            }
        }
        dbeta[c] = sum_d;
        dgamma[c] = sum_dx;
        let g = b.gamma[c];
        // dx̂ = γ dy; dx = inv_std/m (m dx̂ - Σdx̂ - x̂ Σ dx̂ x̂)
        for n in 0..dy.n {
            for s in 0..hw {
                let i = idx(n, s);
                dx[i] = g * inv_std[c] / m * (m * dy.data[i] - sum_d - xhat[i] * sum_dx);
            }
        }
    }
    (Tensor { n: dy.n, shape: dy.shape, data: dx }, dgamma, dbeta)
}

fn pool_forward(kind: PoolKind, k: usize, stride: usize, x: &Tensor, out_shape: Shape) -> (Tensor, Cache) {
    let Shape::Spatial { c, h, w } = x.shape else { unreachable!() };
    let Shape::Spatial { h: oh, w: ow, .. } = out_shape else { unreachable!() };
    let mut out = vec![0.0; x.n * c * oh * ow];
    let mut arg = Vec::new();
    if kind == PoolKind::Max {
        arg = vec![0usize; out.len()];
    }
    for plane in 0..x.n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let o = (plane * oh + oy) * ow + ox;
                match kind {
                    PoolKind::Max => {
                        let mut best = f64::NEG_INFINITY;
                        let mut at = base + oy * stride * w + ox * stride;
                        for ky in 0..k {
                            for kx in 0..k {
                                let i = base + (oy * stride + ky) * w + ox * stride + kx;
                                if x.data[i] > best {
                                    best = x.data[i];
                                    at = i;
                                }
                            }
                        }
                        out[o] = x.data[at];
                        arg[o] = at;
                    }
                    PoolKind::Avg => {
                        let mut acc = 0.0;
                        for ky in 0..k {
                            for kx in 0..k {
                                acc += x.data[base + (oy * stride + ky) * w + ox * stride + kx];
                            }
                        }
                        out[o] = acc / (k * k) as f64;
                    }
                }
            }
        }
    }
    let cache = match kind {
        PoolKind::Max => Cache::MaxIdx { idx: arg, in_shape: x.shape },
        PoolKind::Avg => Cache::Shape(x.shape),
    };
    (Tensor { n: x.n, shape: out_shape, data: out }, cache)
}

pub(crate) fn avg_pool_backward(k: usize, stride: usize, in_shape: Shape, dy: &Tensor) -> Tensor {
    let Shape::Spatial { c, h, w } = in_shape else { unreachable!() };
    let Shape::Spatial { h: oh, w: ow, .. } = dy.shape else { unreachable!() };
    let mut dx = vec![0.0; dy.n * c * h * w];
    let scale = 1.0 / (k * k) as f64;
    for plane in 0..dy.n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let d = dy.data[(plane * oh + oy) * ow + ox] * scale;
                for ky in 0..k {
                    for kx in 0..k {
                        dx[plane * h * w + (oy * stride + ky) * w + ox * stride + kx] += d;
                    }
                }
            }
        }
    }
    Tensor { n: dy.n, shape: in_shape, data: dx }
}

fn linear_forward(l: &LinearLayer, x: &Tensor) -> Tensor {
    let mut out = vec![0.0; x.n * l.out_features];
    for n in 0..x.n {
        let xs = x.sample(n);
        for o in 0..l.out_features {
            let row = &l.weights[o * l.in_features..(o + 1) * l.in_features];
            let mut acc = 0.0;
            for (wv, xv) in row.iter().zip(xs) {
                acc += wv * xv;
            }
            out[n * l.out_features + o] = acc + l.bias.as_ref().map_or(0.0, |b| b[o]);
        }
    }
    Tensor { n: x.n, shape: Shape::Flat(l.out_features), data: out }
}

pub(crate) fn linear_backward(l: &LinearLayer, x: &Tensor, dy: &Tensor) -> (Tensor, Vec<f64>, Option<Vec<f64>>) {
    let mut dx = vec![0.0; x.data.len()];
    let mut dw = vec![0.0; l.weights.len()];
    let mut db = l.bias.as_ref().map(|b| vec![0.0; b.len()]);
    for n in 0..x.n {
        let xs = x.sample(n);
        for o in 0..l.out_features {
            let d = dy.data[n * l.out_features + o];
            if let Some(db) = db.as_mut() {
                db[o] += d;
            }
            for i in 0..l.in_features {
                dw[o * l.in_features + i] += d * xs[i];
                dx[n * l.in_features + i] += d * l.weights[o * l.in_features + i];
            }
        }
    }
    (Tensor { n: x.n, shape: x.shape, data: dx }, dw, db)
}
