use serde::{Deserialize, Serialize};

use super::{NetworkIR, Node, Shape};

/// Parameter and FLOP counts. Batch norm, activations and pooling are not
/// counted; one multiply-accumulate is two FLOPs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Complexity {
    pub conv_params: u64,
    pub total_params: u64,
    pub conv_flops: u64,
    pub total_flops: u64,
}

/// Counts over a network; assumes it validates.
pub fn complexity(net: &NetworkIR) -> Complexity {
    let shapes = net.shapes();
    let mut out = Complexity::default();
    for (i, node) in net.nodes.iter().enumerate() {
        match node {
            Node::Conv2d(c) => {
                let params = (c.weights.len() + c.bias.as_ref().map_or(0, Vec::len)) as u64;
                out.conv_params += params;
                out.total_params += params;
                if let Some(Some(Shape::Spatial { h, w, .. })) = shapes.get(i) {
                    let flops = [c.kernel, c.kernel, c.in_per_group(), c.out_ch, *h, *w]
                        .iter()
                        .fold(2u64, |acc, &d| acc.saturating_mul(d as u64));
                    out.conv_flops = out.conv_flops.saturating_add(flops);
                    out.total_flops = out.total_flops.saturating_add(flops);
                }
            }
            Node::Linear(l) => {
                out.total_params += (l.weights.len() + l.bias.as_ref().map_or(0, Vec::len)) as u64;
                out.total_flops = out.total_flops.saturating_add(2 * (l.in_features as u64).saturating_mul(l.out_features as u64));
            }
            _ => {}
        }
    }
    out
}

/// Conv-only and whole-network totals of one quantity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub conv: u64,
    pub total: u64,
}

pub fn count_params(net: &NetworkIR) -> Counts {
    let c = complexity(net);
    Counts { conv: c.conv_params, total: c.total_params }
}

pub fn count_flops(net: &NetworkIR) -> Counts {
    let c = complexity(net);
    Counts { conv: c.conv_flops, total: c.total_flops }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Conv2d, Linear};

    #[test]
    fn conv_flops_convention() {
        let net = NetworkIR::new("c", vec![2, 8, 8], vec![Node::Conv2d(Conv2d::new(2, 4, 3, 1, 1))]);
        let c = complexity(&net);
        assert_eq!(c.conv_flops, 9216);
        assert_eq!(c.conv_params, 72);
        assert_eq!(count_flops(&net), Counts { conv: 9216, total: 9216 });
    }

    #[test]
    fn depthwise_flops() {
        let net = NetworkIR::new("d", vec![4, 8, 8], vec![Node::Conv2d(Conv2d::depthwise(4, 3, 1, 1))]);
        assert_eq!(complexity(&net).conv_flops, 4608);
        assert_eq!(complexity(&net).conv_params, 36);
    }

    #[test]
    fn empty_network() {
        let net = NetworkIR::new("e", vec![3, 4, 4], vec![]);
        assert_eq!(complexity(&net), Complexity::default());
    }

    #[test]
    fn linear_counts_only_in_totals() {
        let net = NetworkIR::new("l", vec![5], vec![Node::Linear(Linear::new(5, 3))]);
        let c = complexity(&net);
        assert_eq!(c.conv_params, 0);
        assert_eq!(c.total_params, 18);
        assert_eq!(c.total_flops, 30);
    }
}
