use std::fmt;

use super::{node_output, NetworkIR, Node, Shape};

/// One structural problem found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub node: Option<usize>,
    pub message: String,
}

impl Violation {
    fn at(node: usize, message: impl Into<String>) -> Self {
        Self { node: Some(node), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(i) => write!(f, "node {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn all_finite(v: &[f32]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Checks shape propagation, batch-norm pairing, group divisibility,
/// parameter lengths and residual-marker balance. Reports every violation.
pub fn validate(net: &NetworkIR) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();

    let mut cur = match net.input() {
        Some(s) if s.numel() > 0 => Some(s),
        _ => {
            out.push(Violation {
                node: None,
                message: format!("input shape {:?} must be [c, h, w] or [features] with nonzero extents", net.input_shape),
            });
            None
        }
    };

    let mut open_block: Option<usize> = None;
    let mut skips: Vec<Option<Shape>> = Vec::new();

    for (i, node) in net.nodes.iter().enumerate() {
        match node {
            Node::Conv2d(c) => {
                if c.groups == 0 || c.in_ch % c.groups != 0 || c.out_ch % c.groups != 0 {
                    out.push(Violation::at(i, format!(
                        "groups {} must divide in_ch {} and out_ch {}",
                        c.groups, c.in_ch, c.out_ch
                    )));
                } else if c.weights.len() != c.out_ch.saturating_mul(c.filter_len()) {
                    out.push(Violation::at(i, format!(
                        "conv weight length {} != {}",
                        c.weights.len(),
                        c.out_ch.saturating_mul(c.filter_len())
                    )));
                }
                if c.out_ch == 0 || c.in_ch == 0 || c.kernel == 0 || c.stride == 0 {
                    out.push(Violation::at(i, "conv extents must be nonzero"));
                }
                if let Some(b) = &c.bias {
                    if b.len() != c.out_ch {
                        out.push(Violation::at(i, format!("conv bias length {} != out_ch {}", b.len(), c.out_ch)));
                    }
                    if !all_finite(b) {
                        out.push(Violation::at(i, "non-finite conv bias"));
                    }
                }
                if !all_finite(&c.weights) {
                    out.push(Violation::at(i, "non-finite conv weight"));
                }
            }
            Node::BatchNorm(bn) => {
                let n = bn.gamma.len();
                if bn.beta.len() != n || bn.running_mean.len() != n || bn.running_var.len() != n {
                    out.push(Violation::at(i, "bn parameter vectors differ in length"));
                }
                if !(bn.eps > 0.0 && bn.eps.is_finite()) {
                    out.push(Violation::at(i, format!("bn eps must be positive, got {}", bn.eps)));
                }
                if bn.running_var.iter().any(|&v| v < 0.0) {
                    out.push(Violation::at(i, "bn running variance must be non-negative"));
                }
                if ![&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var].iter().all(|v| all_finite(v)) {
                    out.push(Violation::at(i, "non-finite bn parameter"));
                }
                let producer = i.checked_sub(1).map(|p| &net.nodes[p]);
                match producer {
                    Some(Node::Conv2d(c)) if c.out_ch != n => out.push(Violation::at(
                        i,
                        format!("bn length mismatch: {} channels after conv with out_ch {}", n, c.out_ch),
                    )),
                    Some(Node::Linear(l)) if l.out_features != n => out.push(Violation::at(
                        i,
                        format!("bn length mismatch: {} channels after linear with {} outputs", n, l.out_features),
                    )),
                    Some(Node::Conv2d(_)) | Some(Node::Linear(_)) => {}
                    _ => out.push(Violation::at(i, "bn must directly follow a conv or linear node")),
                }
            }
            Node::Linear(l) => {
                if l.weights.len() != l.in_features.saturating_mul(l.out_features) {
                    out.push(Violation::at(i, format!(
                        "linear weight length {} != {}",
                        l.weights.len(),
                        l.in_features.saturating_mul(l.out_features)
                    )));
                }
                if let Some(b) = &l.bias {
                    if b.len() != l.out_features {
                        out.push(Violation::at(i, "linear bias length mismatch"));
                    }
                    if !all_finite(b) {
                        out.push(Violation::at(i, "non-finite linear bias"));
                    }
                }
                if !all_finite(&l.weights) {
                    out.push(Violation::at(i, "non-finite linear weight"));
                }
            }
            Node::Activation(act) => {
                if let crate::activation::ActivationFn::LeakyRelu { alpha } = act {
                    if !alpha.is_finite() {
                        out.push(Violation::at(i, "non-finite leaky relu slope"));
                    }
                }
            }
            Node::Pool { kernel, stride, .. } => {
                if *kernel == 0 || *stride == 0 {
                    out.push(Violation::at(i, "pool kernel and stride must be nonzero"));
                }
            }
            Node::GlobalAvgPool | Node::Flatten => {}
            Node::ResidualBegin => {
                if let Some(open) = open_block {
                    out.push(Violation::at(i, format!("nested residual block (block opened at node {open} still open)")));
                }
                open_block = Some(i);
            }
            Node::ResidualEnd => {
                if open_block.take().is_none() {
                    out.push(Violation::at(i, "residual end without matching begin"));
                }
            }
        }

        // shape propagation; stop reporting once the shape is lost
        if let Some(s) = cur {
            let depth = skips.len();
            let next = node_output(node, s, &mut skips);
            if next.is_none() {
                let msg = match node {
                    Node::ResidualEnd if depth > 0 => format!("residual sum shape mismatch at {:?}", s),
                    Node::ResidualEnd => "residual end without matching begin".to_string(),
                    _ => format!("{} cannot consume input shape {:?}", node.kind_name(), s),
                };
                if !out.iter().any(|v| v.node == Some(i) && v.message == msg) {
                    out.push(Violation::at(i, msg));
                }
            }
            cur = next;
        }
    }
    if let Some(open) = open_block {
        out.push(Violation::at(open, "residual begin without matching end"));
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
