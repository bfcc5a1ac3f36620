use serde::{Deserialize, Serialize};

use super::{NetworkIR, Node, Shape};

/// A layer whose input channels must shrink when a unit loses channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Consumer {
    /// Dense conv: drop input-channel slices.
    Conv { node: usize },
    /// Depthwise conv (and its batch norm): channels are removed outright.
    Depthwise { conv: usize, bn: Option<usize> },
    /// Linear layer fed by a flattened map: drop `group` consecutive
    /// columns per removed channel.
    Linear { node: usize, group: usize },
}

/// A conv → batch-norm → activation triple whose output channels can be
/// removed without touching a residual sum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrunableUnit {
    pub conv_index: usize,
    pub bn_index: usize,
    pub act_index: usize,
    pub consumers: Vec<Consumer>,
}

/// Residual span id of every node; markers belong to their own span.
fn block_ids(net: &NetworkIR) -> Vec<Option<usize>> {
    let mut ids = Vec::with_capacity(net.nodes.len());
    let mut cur = None;
    for (i, n) in net.nodes.iter().enumerate() {
        match n {
            Node::ResidualBegin => {
                cur = Some(i);
                ids.push(cur);
            }
            Node::ResidualEnd => {
                ids.push(cur);
                cur = None;
            }
            _ => ids.push(cur),
        }
    }
    ids
}

/// Every prunable unit, in network order.
///
/// Inside a residual span a unit qualifies only when all its consumers sit
/// in the same span and it sets the width of a spatial (k ≥ 3) conv, either
/// its own or a depthwise consumer's. In a 1×1-3×3-1×1 bottleneck that
/// leaves just the middle conv.
pub fn prunable_units(net: &NetworkIR) -> Vec<PrunableUnit> {
    let shapes = net.shapes();
    let blocks = block_ids(net);
    let mut units = Vec::new();

    for (i, node) in net.nodes.iter().enumerate() {
        let Node::Conv2d(conv) = node else { continue };
        if conv.groups != 1 {
            continue;
        }
        let (Some(Node::BatchNorm(_)), Some(Node::Activation(_))) = (net.nodes.get(i + 1), net.nodes.get(i + 2)) else {
            continue;
        };
        let Some(consumers) = trace_consumers(net, &shapes, i + 3, conv.out_ch) else {
            continue;
        };
        if let Some(block) = blocks[i] {
            let inside = consumers.iter().all(|c| {
                let n = match *c {
                    Consumer::Conv { node } | Consumer::Linear { node, .. } => node,
                    Consumer::Depthwise { conv, .. } => conv,
                };
                blocks[n] == Some(block)
            });
            let spatial = conv.kernel >= 3
                || consumers.iter().any(|c| match *c {
                    Consumer::Depthwise { conv, .. } => net.nodes[conv].as_conv().is_some_and(|d| d.kernel >= 3),
                    _ => false,
                });
            if !(inside && spatial) {
                continue;
            }
        }
        units.push(PrunableUnit {
            conv_index: i,
            bn_index: i + 1,
            act_index: i + 2,
            consumers,
        });
    }
    units
}

/// Walks forward from `start` until a layer mixes channels. Returns `None`
/// when the channels reach a residual marker, a grouped conv, or the network
/// output.
fn trace_consumers(net: &NetworkIR, shapes: &[Option<Shape>], start: usize, channels: usize) -> Option<Vec<Consumer>> {
    let mut consumers = Vec::new();
    let mut j = start;
    while j < net.nodes.len() {
        match &net.nodes[j] {
            Node::Activation(_) | Node::Pool { .. } | Node::GlobalAvgPool | Node::Flatten => j += 1,
            Node::Conv2d(c) if c.groups == 1 => {
                consumers.push(Consumer::Conv { node: j });
                return Some(consumers);
            }
            Node::Conv2d(c) if c.is_depthwise() && c.in_ch == channels => {
                let bn = matches!(net.nodes.get(j + 1), Some(Node::BatchNorm(_))).then_some(j + 1);
                consumers.push(Consumer::Depthwise { conv: j, bn });
                j += if bn.is_some() { 2 } else { 1 };
            }
            Node::Linear(l) => {
                let input = if j == 0 { net.input() } else { shapes[j - 1] };
                let Some(Shape::Flat(f)) = input else { return None };
                if f != l.in_features || f % channels != 0 {
                    return None;
                }
                consumers.push(Consumer::Linear { node: j, group: f / channels });
                return Some(consumers);
            }
            _ => return None,
        }
    }
    None
}
