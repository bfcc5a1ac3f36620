#![allow(dead_code)]

use bnfi::activation::ActivationFn;
use bnfi::engine::{softmax_cross_entropy, toy_architecture, Mode, Model, Tensor};
use bnfi::ir::{BatchNorm, Conv2d, Linear, NetworkIR, Node, PoolKind, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn fill(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f32> {
    (0..n).map(|_| (normal(rng) * scale) as f32).collect()
}

/// Values with occasional signed zeros and subnormals.
pub fn fill_awkward(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| match rng.random_range(0..20) {
            0 => -0.0,
            1 => f32::from_bits(rng.random_range(1..0x007f_ffff)),
            2 => f32::MAX / rng.random_range(2.0..4.0),
            _ => normal(rng) as f32,
        })
        .collect()
}

pub fn conv(rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize, k: usize, bias: bool) -> Conv2d {
    let mut c = Conv2d::new(in_ch, out_ch, k, 1, k / 2);
    c.weights = fill(rng, c.weights.len(), (2.0 / (in_ch * k * k) as f64).sqrt());
    if bias {
        c.bias = Some(fill(rng, out_ch, 0.1));
    }
    c
}

pub fn depthwise(rng: &mut ChaCha8Rng, ch: usize, k: usize) -> Conv2d {
    let mut c = Conv2d::depthwise(ch, k, 1, k / 2);
    c.weights = fill(rng, c.weights.len(), (2.0 / (k * k) as f64).sqrt());
    c
}

pub fn bn(rng: &mut ChaCha8Rng, ch: usize) -> BatchNorm {
    let mut b = BatchNorm::new(ch);
    b.gamma = (0..ch).map(|_| (0.5 + rng.random::<f64>()) as f32 * if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    b.beta = fill(rng, ch, 0.5);
    b.running_mean = fill(rng, ch, 0.2);
    b.running_var = (0..ch).map(|_| rng.random_range(0.5..2.0)).collect();
    b
}

pub fn linear(rng: &mut ChaCha8Rng, inp: usize, out: usize) -> Linear {
    let mut l = Linear::new(inp, out);
    l.weights = fill(rng, inp * out, 1.0 / (inp as f64).sqrt());
    l.bias = Some(fill(rng, out, 0.1));
    l
}

pub fn unit(rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize, k: usize, act: ActivationFn) -> Vec<Node> {
    vec![
        Node::Conv2d(conv(rng, in_ch, out_ch, k, false)),
        Node::BatchNorm(bn(rng, out_ch)),
        Node::Activation(act),
    ]
}

pub fn random_activation(rng: &mut ChaCha8Rng) -> ActivationFn {
    match rng.random_range(0..4) {
        0 => ActivationFn::Relu,
        1 => ActivationFn::Identity,
        2 => ActivationFn::Swish,
        _ => ActivationFn::LeakyRelu { alpha: rng.random_range(0.0..0.3) },
    }
}

/// A valid network drawn from a family covering every node kind.
pub fn random_net(seed: u64) -> NetworkIR {
    let mut r = rng(seed);
    let c = r.random_range(1..4);
    let hw = [4, 6, 8][r.random_range(0..3)];
    let mut width = r.random_range(2..7);
    let (k, a) = ([1, 3][r.random_range(0..2)], random_activation(&mut r));
    let mut nodes = unit(&mut r, c, width, k, a);
    if r.random::<bool>() {
        let a = random_activation(&mut r);
        nodes.push(Node::ResidualBegin);
        nodes.extend(unit(&mut r, width, width, 3, a));
        let bias = r.random();
        nodes.push(Node::Conv2d(conv(&mut r, width, width, 3, bias)));
        nodes.push(Node::BatchNorm(bn(&mut r, width)));
        nodes.push(Node::ResidualEnd);
        nodes.push(Node::Activation(a));
    }
    if r.random::<bool>() {
        let wide = width * 2;
        nodes.extend(unit(&mut r, width, wide, 1, ActivationFn::Relu));
        nodes.push(Node::Conv2d(depthwise(&mut r, wide, 3)));
        nodes.push(Node::BatchNorm(bn(&mut r, wide)));
        nodes.push(Node::Activation(ActivationFn::Relu));
        width = r.random_range(2..6);
        let a = random_activation(&mut r);
        nodes.extend(unit(&mut r, wide, width, 1, a));
    }
    let mut spatial = hw;
    if r.random::<bool>() {
        let kind = if r.random::<bool>() { PoolKind::Max } else { PoolKind::Avg };
        nodes.push(Node::Pool { kind, kernel: 2, stride: 2 });
        spatial /= 2;
    }
    let classes = r.random_range(2..6);
    if r.random::<bool>() {
        nodes.push(Node::GlobalAvgPool);
        nodes.push(Node::Linear(linear(&mut r, width, classes)));
    } else {
        nodes.push(Node::Flatten);
        nodes.push(Node::Linear(linear(&mut r, width * spatial * spatial, classes)));
    }
    if r.random::<bool>() {
        if let Some(Node::Linear(l)) = nodes.last_mut() {
            l.bias = None;
        }
    }
    for node in &mut nodes {
        match node {
            Node::Conv2d(c) if r.random_range(0..4) == 0 => c.weights = fill_awkward(&mut r, c.weights.len()),
            Node::BatchNorm(b) => b.eps = [1e-5, 1e-3, 0.123_456_789_012_345_67][r.random_range(0..3)],
            _ => {}
        }
    }
    NetworkIR::new(format!("random-{seed}"), vec![c, hw, hw], nodes)
}

/// Deterministic Gaussian input batch.
pub fn random_batch(shape: Shape, n: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let data = (0..n * shape.numel()).map(|_| normal(&mut r)).collect();
    Tensor::new(n, shape, data).unwrap()
}

/// conv3 → BN → swish → avg-pool → conv3 → BN → swish → GAP → linear,
/// with biases on every layer. Smooth everywhere, so central differences
/// are a valid reference at any step.
pub fn gradient_check_net(seed: u64) -> NetworkIR {
    let mut r = rng(seed);
    NetworkIR::new(
        "grad-check",
        vec![2, 6, 6],
        vec![
            Node::Conv2d(conv(&mut r, 2, 3, 3, true)),
            Node::BatchNorm(bn(&mut r, 3)),
            Node::Activation(ActivationFn::Swish),
            Node::Pool { kind: PoolKind::Avg, kernel: 2, stride: 2 },
            Node::Conv2d(conv(&mut r, 3, 4, 3, true)),
            Node::BatchNorm(bn(&mut r, 4)),
            Node::Activation(ActivationFn::Swish),
            Node::GlobalAvgPool,
            Node::Linear(linear(&mut r, 4, 3)),
        ],
    )
}

fn train_loss(model: &Model, x: &Tensor, labels: &[u32]) -> f64 {
    let logits = model.forward(x, Mode::Train).unwrap();
    softmax_cross_entropy(&logits, labels).unwrap().0
}

/// Per parameter tensor: `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-8)`
/// with central differences of step `h`.
pub fn gradient_relative_errors(net: &NetworkIR, batch: usize, h: f64, seed: u64) -> Vec<f64> {
    let model = Model::from_ir(net).unwrap();
    let x = random_batch(model.input_shape(), batch, seed);
    let classes = net.num_classes().unwrap() as u32;
    let labels: Vec<u32> = (0..batch as u32).map(|i| i % classes).collect();
    let step = model.step(&x, &labels).unwrap();
    let analytic: Vec<Vec<f64>> = step.grads.tensors().cloned().collect();

    let mut probe = model.clone();
    let sizes: Vec<usize> = probe.parameters().iter().map(|p| p.len()).collect();
    let mut errors = Vec::new();
    for (t, &len) in sizes.iter().enumerate() {
        let mut numeric = vec![0.0; len];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.parameters()[t][j];
            probe.parameters_mut()[t][j] = orig + h;
            let up = train_loss(&probe, &x, &labels);
            probe.parameters_mut()[t][j] = orig - h;
            let down = train_loss(&probe, &x, &labels);
            probe.parameters_mut()[t][j] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic[t].iter().zip(&numeric).map(|(a, n)| a - n).collect();
        errors.push(norm(&diff) / norm(&analytic[t]).max(norm(&numeric)).max(1e-8));
    }
    errors
}

/// Two ReLU units; channel 2 of the first has γ = 0, β = −1.
pub fn dead_channel_net(seed: u64) -> NetworkIR {
    let mut r = rng(seed);
    let mut first = bn(&mut r, 4);
    first.gamma[2] = 0.0;
    first.beta[2] = -1.0;
    let mut nodes = vec![
        Node::Conv2d(conv(&mut r, 3, 4, 3, false)),
        Node::BatchNorm(first),
        Node::Activation(ActivationFn::Relu),
    ];
    nodes.extend(unit(&mut r, 4, 5, 3, ActivationFn::Relu));
    nodes.push(Node::GlobalAvgPool);
    nodes.push(Node::Linear(linear(&mut r, 5, 3)));
    NetworkIR::new("dead-channel", vec![3, 6, 6], nodes)
}

/// Architectures with closed-form counts in terms of their widths.
pub struct Counted {
    pub net: NetworkIR,
    /// `(params.total, flops.conv, flops.total)` from the current widths.
    pub formula: fn(&NetworkIR) -> (u64, u64, u64),
}

fn out_ch(net: &NetworkIR, i: usize) -> u64 {
    net.nodes[i].as_conv().unwrap().out_ch as u64
}

pub fn counted_architectures(seed: u64) -> Vec<Counted> {
    let mut r = rng(seed);
    let mut plain = toy_architecture([3, 8, 8], [12, 10], 4);
    for node in &mut plain.nodes {
        if let Node::Conv2d(c) = node {
            c.weights = fill(&mut r, c.weights.len(), 1.0);
        }
    }
    let plain = Counted {
        net: plain,
        formula: |n| {
            let (a, b) = (out_ch(n, 0), out_ch(n, 4));
            let conv = 2 * (27 * a * 64 + 9 * a * b * 16);
            (27 * a + 9 * a * b + 4 * b + 4, conv, conv + 2 * b * 4)
        },
    };

    let mut nodes = unit(&mut r, 3, 8, 3, ActivationFn::Relu);
    nodes.push(Node::Conv2d(depthwise(&mut r, 8, 3)));
    nodes.push(Node::BatchNorm(bn(&mut r, 8)));
    nodes.push(Node::Activation(ActivationFn::Relu));
    nodes.extend(unit(&mut r, 8, 6, 1, ActivationFn::Swish));
    nodes.push(Node::GlobalAvgPool);
    nodes.push(Node::Linear(linear(&mut r, 6, 5)));
    let depthwise = Counted {
        net: NetworkIR::new("depthwise", vec![3, 8, 8], nodes),
        formula: |n| {
            let (a, b) = (out_ch(n, 0), out_ch(n, 6));
            let conv_params = 27 * a + 9 * a + a * b;
            (conv_params + 5 * b + 5, 2 * 64 * conv_params, 2 * 64 * conv_params + 2 * b * 5)
        },
    };

    let mut nodes = unit(&mut r, 4, 5, 3, ActivationFn::Relu);
    nodes.push(Node::ResidualBegin);
    nodes.extend(unit(&mut r, 5, 7, 3, ActivationFn::Relu));
    nodes.push(Node::Conv2d(conv(&mut r, 7, 5, 3, false)));
    nodes.push(Node::BatchNorm(bn(&mut r, 5)));
    nodes.push(Node::ResidualEnd);
    nodes.push(Node::Activation(ActivationFn::Relu));
    nodes.push(Node::Flatten);
    nodes.push(Node::Linear(linear(&mut r, 5 * 36, 3)));
    let residual = Counted {
        net: NetworkIR::new("residual", vec![4, 6, 6], nodes),
        formula: |n| {
            let m = out_ch(n, 4);
            let conv_params = 36 * 5 + 9 * 5 * m + 9 * m * 5;
            let head = 5 * 36 * 3;
            (conv_params + head + 3, 2 * 36 * conv_params, 2 * 36 * conv_params + 2 * head)
        },
    };
    vec![plain, depthwise, residual]
}
