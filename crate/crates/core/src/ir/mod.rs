//! Network intermediate representation: a linear list of layers with
//! optional identity-skip residual spans.
//!
//! Values are immutable by convention; the pruner and trainer return new
//! networks instead of editing in place.

mod accounting;
pub mod format;
mod units;
mod validate;

pub use accounting::{complexity, count_flops, count_params, Complexity, Counts};
pub use units::{prunable_units, Consumer, PrunableUnit};
pub use validate::{validate, Violation};

use serde::{Deserialize, Serialize};

use crate::activation::ActivationFn;

/// Per-sample activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn from_dims(dims: &[usize]) -> Option<Shape> {
        match *dims {
            [c, h, w] => Some(Shape::Spatial { c, h, w }),
            [f] => Some(Shape::Flat(f)),
            _ => None,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Spatial { c, h, w } => vec![c, h, w],
            Shape::Flat(f) => vec![f],
        }
    }

    pub fn numel(&self) -> usize {
        match *self {
            Shape::Spatial { c, h, w } => c.saturating_mul(h).saturating_mul(w),
            Shape::Flat(f) => f,
        }
    }

    /// Channel count: `c` for feature maps, the feature count otherwise.
    pub fn channels(&self) -> usize {
        match *self {
            Shape::Spatial { c, .. } => c,
            Shape::Flat(f) => f,
        }
    }

    /// `h * w`, or 1 for flat activations.
    pub fn spatial(&self) -> usize {
        match *self {
            Shape::Spatial { h, w, .. } => h.saturating_mul(w),
            Shape::Flat(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    /// `(out_ch, in_ch / groups, kernel, kernel)`, row-major.
    pub weights: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

impl Conv2d {
    /// Zero-initialized conv with `groups = 1` and no bias.
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self::grouped(in_ch, out_ch, kernel, stride, padding, 1)
    }

    pub fn grouped(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, groups: usize) -> Self {
        let per_group = in_ch.checked_div(groups).unwrap_or(0);
        Self {
            out_ch,
            in_ch,
            kernel,
            stride,
            padding,
            groups,
            weights: vec![0.0; out_ch * per_group * kernel * kernel],
            bias: None,
        }
    }

    pub fn depthwise(channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self::grouped(channels, channels, kernel, stride, padding, channels)
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups > 1 && self.groups == self.in_ch && self.groups == self.out_ch
    }

    pub fn in_per_group(&self) -> usize {
        self.in_ch / self.groups.max(1)
    }

    /// Weights of one output filter.
    pub fn filter_len(&self) -> usize {
        self.in_per_group().saturating_mul(self.kernel).saturating_mul(self.kernel)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if self.stride == 0 || self.kernel == 0 {
            return None;
        }
        let hp = h.saturating_add(self.padding.saturating_mul(2));
        let wp = w.saturating_add(self.padding.saturating_mul(2));
        if hp < self.kernel || wp < self.kernel {
            return None;
        }
        Some(((hp - self.kernel) / self.stride + 1, (wp - self.kernel) / self.stride + 1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f64,
}

impl BatchNorm {
    /// Identity-initialized: `γ = 1`, `β = 0`, unit running variance.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
        }
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub out_features: usize,
    pub in_features: usize,
    /// `(out_features, in_features)`, row-major.
    pub weights: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            out_features,
            in_features,
            weights: vec![0.0; in_features * out_features],
            bias: Some(vec![0.0; out_features]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Avg,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    Activation(ActivationFn),
    Pool { kind: PoolKind, kernel: usize, stride: usize },
    GlobalAvgPool,
    Flatten,
    Linear(Linear),
    /// Opens an identity-skip span; the input here is added back at the
    /// matching end marker.
    ResidualBegin,
    ResidualEnd,
}

impl Node {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Node::Conv2d(_) => "conv2d",
            Node::BatchNorm(_) => "batch_norm",
            Node::Activation(_) => "activation",
            Node::Pool { .. } => "pool",
            Node::GlobalAvgPool => "global_avg_pool",
            Node::Flatten => "flatten",
            Node::Linear(_) => "linear",
            Node::ResidualBegin => "residual_begin",
            Node::ResidualEnd => "residual_end",
        }
    }

    pub fn as_conv(&self) -> Option<&Conv2d> {
        match self {
            Node::Conv2d(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_bn(&self) -> Option<&BatchNorm> {
        match self {
            Node::BatchNorm(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_linear(&self) -> Option<&Linear> {
        match self {
            Node::Linear(l) => Some(l),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkIR {
    pub name: String,
    pub version: u32,
    /// `[c, h, w]` for image input or `[features]`.
    pub input_shape: Vec<usize>,
    pub nodes: Vec<Node>,
}

impl NetworkIR {
    pub fn new(name: impl Into<String>, input_shape: Vec<usize>, nodes: Vec<Node>) -> Self {
        Self {
            name: name.into(),
            version: 1,
            input_shape,
            nodes,
        }
    }

    pub fn input(&self) -> Option<Shape> {
        Shape::from_dims(&self.input_shape)
    }

    /// Output shape of every node, or `None` past the first node whose
    /// shape cannot be derived.
    pub fn shapes(&self) -> Vec<Option<Shape>> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut cur = self.input();
        let mut skips: Vec<Option<Shape>> = Vec::new();
        for node in &self.nodes {
            cur = cur.and_then(|s| node_output(node, s, &mut skips));
            out.push(cur);
        }
        out
    }

    /// Shape entering node `i`.
    pub fn input_shape_of(&self, i: usize) -> Option<Shape> {
        if i == 0 {
            self.input()
        } else {
            self.shapes().get(i - 1).copied().flatten()
        }
    }

    pub fn output_shape(&self) -> Option<Shape> {
        match self.nodes.len() {
            0 => self.input(),
            n => self.shapes()[n - 1],
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self.output_shape()? {
            Shape::Flat(f) => Some(f),
            Shape::Spatial { .. } => None,
        }
    }
}

/// Shape after `node`, ignoring weight-length consistency.
pub(crate) fn node_output(node: &Node, s: Shape, skips: &mut Vec<Option<Shape>>) -> Option<Shape> {
    match node {
        Node::Conv2d(c) => match s {
            Shape::Spatial { c: ic, h, w } if ic == c.in_ch => {
                let (oh, ow) = c.output_hw(h, w)?;
                Some(Shape::Spatial { c: c.out_ch, h: oh, w: ow })
            }
            _ => None,
        },
        Node::BatchNorm(bn) => (s.channels() == bn.len()).then_some(s),
        Node::Activation(_) => Some(s),
        Node::Pool { kernel, stride, .. } => match s {
            Shape::Spatial { c, h, w } if *kernel > 0 && *stride > 0 && h >= *kernel && w >= *kernel => {
                Some(Shape::Spatial { c, h: (h - kernel) / stride + 1, w: (w - kernel) / stride + 1 })
            }
            _ => None,
        },
        Node::GlobalAvgPool => match s {
            Shape::Spatial { c, .. } => Some(Shape::Flat(c)),
            Shape::Flat(_) => None,
        },
        Node::Flatten => Some(Shape::Flat(s.numel())),
        Node::Linear(l) => match s {
            Shape::Flat(f) if f == l.in_features => Some(Shape::Flat(l.out_features)),
            _ => None,
        },
        Node::ResidualBegin => {
            skips.push(Some(s));
            Some(s)
        }
        Node::ResidualEnd => match skips.pop() {
            Some(Some(skip)) if skip == s => Some(s),
            _ => None,
        },
    }
}
