//! Plans and applies structured channel removal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criteria::{rank_channels, score_unit, Criterion, CriterionError, ImportanceVector, LayerContext, Order};
use crate::importance::{GaussianChannel, QuadratureConfig};
use crate::ir::{prunable_units, validate, Consumer, NetworkIR, Node, PrunableUnit, Violation};

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("ratio vector has {got} entries, network has {expected} prunable units")]
    RatioCount { expected: usize, got: usize },
    #[error("pruning ratio {0} outside [0, 1)")]
    RatioRange(f64),
    #[error("plan does not match network: {0}")]
    Mismatch(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Criterion(#[from] CriterionError),
    #[error("network fails validation: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

/// Per-unit pruning ratios in `[0, 1)`, one per prunable unit in network
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RatioVector(pub Vec<f64>);

impl RatioVector {
    pub fn new(ratios: Vec<f64>) -> Result<Self, PruneError> {
        if let Some(&bad) = ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(PruneError::RatioRange(bad));
        }
        Ok(Self(ratios))
    }

    pub fn uniform(ratio: f64, units: usize) -> Result<Self, PruneError> {
        Self::new(vec![ratio; units])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Number of channels removed at `ratio`: `floor(ratio · channels)`.
///
/// A 1e-9 guard absorbs products such as `0.29 · 100 = 28.999…`.
pub fn channels_to_remove(ratio: f64, channels: usize) -> usize {
    ((ratio * channels as f64) + 1e-9).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub unit: PrunableUnit,
    /// Sorted, unique channel indices.
    pub remove: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PruningPlan {
    pub entries: Vec<PlanEntry>,
}

impl PruningPlan {
    /// Checks every entry against `net`; drops entries that remove nothing.
    pub fn new(net: &NetworkIR, entries: Vec<PlanEntry>) -> Result<Self, PruneError> {
        let units = prunable_units(net);
        let mut seen = Vec::new();
        let mut kept = Vec::with_capacity(entries.len());
        for mut e in entries {
            let Some(unit) = units.iter().find(|u| u.conv_index == e.unit.conv_index) else {
                return Err(PruneError::Mismatch(format!("node {} is not a prunable unit", e.unit.conv_index)));
            };
            if *unit != e.unit {
                return Err(PruneError::Mismatch(format!(
                    "unit at node {} differs from the network's structure",
                    e.unit.conv_index
                )));
            }
            if seen.contains(&unit.conv_index) {
                return Err(PruneError::InvalidPlan(format!("unit {} listed twice", unit.conv_index)));
            }
            seen.push(unit.conv_index);
            let out_ch = net.nodes[unit.conv_index].as_conv().expect("unit conv").out_ch;
            e.remove.sort_unstable();
            if e.remove.windows(2).any(|w| w[0] == w[1]) {
                return Err(PruneError::InvalidPlan(format!("duplicate channel in unit {}", unit.conv_index)));
            }
            if let Some(&c) = e.remove.iter().find(|&&c| c >= out_ch) {
                return Err(PruneError::InvalidPlan(format!("channel {c} out of range for {out_ch} channels")));
            }
            if e.remove.len() >= out_ch {
                return Err(PruneError::InvalidPlan(format!(
                    "unit {} would lose all {out_ch} channels",
                    unit.conv_index
                )));
            }
            if !e.remove.is_empty() {
                kept.push(e);
            }
        }
        Ok(Self { entries: kept })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn removed_channels(&self) -> usize {
        self.entries.iter().map(|e| e.remove.len()).sum()
    }
}

/// Batch-norm channels of a unit as Gaussian parameters.
pub fn unit_channels(net: &NetworkIR, unit: &PrunableUnit) -> Vec<GaussianChannel> {
    let bn = net.nodes[unit.bn_index].as_bn().expect("unit batch norm");
    bn.gamma
        .iter()
        .zip(&bn.beta)
        .map(|(&g, &b)| GaussianChannel { gamma: g as f64, beta: b as f64 })
        .collect()
}

/// Scores every prunable unit in network order.
pub fn score_units(
    net: &NetworkIR,
    criterion: Criterion,
    cfg: &QuadratureConfig,
) -> Result<Vec<(PrunableUnit, ImportanceVector)>, PruneError> {
    validate(net).map_err(PruneError::Invalid)?;
    prunable_units(net)
        .into_iter()
        .enumerate()
        .map(|(i, unit)| {
            let iv = score_one(net, &unit, criterion.for_unit(i), cfg)?;
            Ok((unit, iv))
        })
        .collect()
}

pub(crate) fn score_one(
    net: &NetworkIR,
    unit: &PrunableUnit,
    criterion: Criterion,
    cfg: &QuadratureConfig,
) -> Result<ImportanceVector, PruneError> {
    let conv = net.nodes[unit.conv_index].as_conv().expect("unit conv");
    let Node::Activation(activation) = net.nodes[unit.act_index] else {
        unreachable!("unit activation")
    };
    let channels = unit_channels(net, unit);
    let ctx = LayerContext { filter_weights: &conv.weights, bn: &channels, activation };
    Ok(score_unit(criterion, &ctx, cfg)?)
}

/// Removes the first `floor(r_i · C_i)` channels of each unit's ranking.
pub fn make_plan(
    net: &NetworkIR,
    criterion: Criterion,
    ratios: &RatioVector,
    order: Order,
    cfg: &QuadratureConfig,
) -> Result<PruningPlan, PruneError> {
    validate(net).map_err(PruneError::Invalid)?;
    let units = prunable_units(net);
    if units.len() != ratios.len() {
        return Err(PruneError::RatioCount { expected: units.len(), got: ratios.len() });
    }
    let mut entries = Vec::new();
    for (i, (unit, &ratio)) in units.into_iter().zip(&ratios.0).enumerate() {
        let out_ch = net.nodes[unit.conv_index].as_conv().expect("unit conv").out_ch;
        let k = channels_to_remove(ratio, out_ch);
        if k == 0 {
            continue;
        }
        let iv = score_one(net, &unit, criterion.for_unit(i), cfg)?;
        let mut remove: Vec<usize> = rank_channels(&iv, order).into_iter().take(k).collect();
        remove.sort_unstable();
        entries.push(PlanEntry { unit, remove });
    }
    PruningPlan::new(net, entries)
}

/// Removes the planned channels and every consumer's matching inputs.
/// Surviving weights keep their values and relative order.
pub fn apply_plan(net: &NetworkIR, plan: &PruningPlan) -> Result<NetworkIR, PruneError> {
    validate(net).map_err(PruneError::Invalid)?;
    // re-check against this network; the plan may come from a file
    let plan = PruningPlan::new(net, plan.entries.clone())?;
    let mut out = net.clone();
    for entry in &plan.entries {
        let unit = &entry.unit;
        let drop = |c: usize| entry.remove.binary_search(&c).is_ok();

        if let Node::Conv2d(conv) = &mut out.nodes[unit.conv_index] {
            let len = conv.filter_len();
            conv.weights = keep_chunks(&conv.weights, len, &drop);
            conv.bias = conv.bias.as_ref().map(|b| keep_chunks(b, 1, &drop));
            conv.out_ch -= entry.remove.len();
        }
        slice_bn(&mut out.nodes[unit.bn_index], &drop);

        for consumer in &unit.consumers {
            match *consumer {
                Consumer::Conv { node } => {
                    let Node::Conv2d(c) = &mut out.nodes[node] else { unreachable!() };
                    let kk = c.kernel * c.kernel;
                    let in_g = c.in_per_group();
                    let mut w = Vec::with_capacity(c.weights.len());
                    for filter in c.weights.chunks(in_g * kk) {
                        w.extend(keep_chunks(filter, kk, &drop));
                    }
                    c.weights = w;
                    c.in_ch -= entry.remove.len();
                }
                Consumer::Depthwise { conv, bn } => {
                    let Node::Conv2d(c) = &mut out.nodes[conv] else { unreachable!() };
                    let len = c.filter_len();
                    c.weights = keep_chunks(&c.weights, len, &drop);
                    c.bias = c.bias.as_ref().map(|b| keep_chunks(b, 1, &drop));
                    c.in_ch -= entry.remove.len();
                    c.out_ch -= entry.remove.len();
                    c.groups -= entry.remove.len();
                    if let Some(bn) = bn {
                        slice_bn(&mut out.nodes[bn], &drop);
                    }
                }
                Consumer::Linear { node, group } => {
                    let Node::Linear(l) = &mut out.nodes[node] else { unreachable!() };
                    let mut w = Vec::with_capacity(l.weights.len());
                    for row in l.weights.chunks(l.in_features) {
                        w.extend(keep_chunks(row, group, &drop));
                    }
                    l.weights = w;
                    l.in_features -= entry.remove.len() * group;
                }
            }
        }
    }
    validate(&out).map_err(PruneError::Invalid)?;
    Ok(out)
}

/// Keeps the `chunk`-sized runs of `v` whose index is not dropped.
fn keep_chunks(v: &[f32], chunk: usize, drop: &impl Fn(usize) -> bool) -> Vec<f32> {
    v.chunks(chunk)
        .enumerate()
        .filter(|(i, _)| !drop(*i))
        .flat_map(|(_, c)| c.iter().copied())
        .collect()
}

fn slice_bn(node: &mut Node, drop: &impl Fn(usize) -> bool) {
    let Node::BatchNorm(bn) = node else { unreachable!("unit batch norm") };
    bn.gamma = keep_chunks(&bn.gamma, 1, drop);
    bn.beta = keep_chunks(&bn.beta, 1, drop);
    bn.running_mean = keep_chunks(&bn.running_mean, 1, drop);
    bn.running_var = keep_chunks(&bn.running_var, 1, drop);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationFn;
    use crate::ir::{BatchNorm, Conv2d};

    fn chain() -> NetworkIR {
        let mut c1 = Conv2d::new(1, 4, 1, 1, 0);
        c1.weights = vec![1.0, 2.0, 3.0, 4.0];
        let mut c2 = Conv2d::new(4, 2, 1, 1, 0);
        c2.weights = (0..8).map(|v| v as f32).collect();
        let mut bn = BatchNorm::new(4);
        bn.gamma = vec![0.9, 0.1, 0.5, 0.7];
        NetworkIR::new(
            "chain",
            vec![1, 2, 2],
            vec![
                Node::Conv2d(c1),
                Node::BatchNorm(bn),
                Node::Activation(ActivationFn::Relu),
                Node::Conv2d(c2),
                Node::BatchNorm(BatchNorm::new(2)),
            ],
        )
    }

    #[test]
    fn zero_ratio_gives_empty_plan() {
        let net = chain();
        let plan = make_plan(&net, Criterion::GammaMag, &RatioVector(vec![0.0]), Order::Ascending, &QuadratureConfig::default()).unwrap();
        assert!(plan.is_empty());
    }

    #[test]
    fn ascending_and_descending_halves() {
        let net = chain();
        let cfg = QuadratureConfig::default();
        let asc = make_plan(&net, Criterion::GammaMag, &RatioVector(vec![0.5]), Order::Ascending, &cfg).unwrap();
        assert_eq!(asc.entries[0].remove, vec![1, 2]);
        let desc = make_plan(&net, Criterion::GammaMag, &RatioVector(vec![0.5]), Order::Descending, &cfg).unwrap();
        assert_eq!(desc.entries[0].remove, vec![0, 3]);
    }

    #[test]
    fn apply_slices_producer_bn_and_consumer() {
        let net = chain();
        let unit = prunable_units(&net).remove(0);
        let plan = PruningPlan::new(&net, vec![PlanEntry { unit, remove: vec![2] }]).unwrap();
        let out = apply_plan(&net, &plan).unwrap();
        let c1 = out.nodes[0].as_conv().unwrap();
        assert_eq!(c1.out_ch, 3);
        assert_eq!(c1.weights, vec![1.0, 2.0, 4.0]);
        assert_eq!(out.nodes[1].as_bn().unwrap().gamma, vec![0.9, 0.1, 0.7]);
        let c2 = out.nodes[3].as_conv().unwrap();
        assert_eq!(c2.in_ch, 3);
        assert_eq!(c2.weights, vec![0.0, 1.0, 3.0, 4.0, 5.0, 7.0]);
    }

    #[test]
    fn rejects_emptying_a_layer_and_bad_indices() {
        let net = chain();
        let unit = prunable_units(&net).remove(0);
        let all = PlanEntry { unit: unit.clone(), remove: vec![0, 1, 2, 3] };
        assert!(matches!(PruningPlan::new(&net, vec![all]), Err(PruneError::InvalidPlan(_))));
        let oob = PlanEntry { unit: unit.clone(), remove: vec![4] };
        assert!(matches!(PruningPlan::new(&net, vec![oob]), Err(PruneError::InvalidPlan(_))));
        let dup = PlanEntry { unit, remove: vec![1, 1] };
        assert!(matches!(PruningPlan::new(&net, vec![dup]), Err(PruneError::InvalidPlan(_))));
    }

    #[test]
    fn all_but_one_channel() {
        let net = chain();
        let unit = prunable_units(&net).remove(0);
        let plan = PruningPlan::new(&net, vec![PlanEntry { unit, remove: vec![0, 1, 3] }]).unwrap();
        let out = apply_plan(&net, &plan).unwrap();
        assert_eq!(out.nodes[0].as_conv().unwrap().out_ch, 1);
    }

    #[test]
    fn ratio_bounds_and_count() {
        assert!(RatioVector::new(vec![1.0]).is_err());
        assert!(RatioVector::new(vec![-0.1]).is_err());
        assert_eq!(channels_to_remove(0.29, 100), 29);
        assert_eq!(channels_to_remove(0.3, 10), 3);
        assert_eq!(channels_to_remove(0.99, 4), 3);
        let net = chain();
        assert!(matches!(
            make_plan(&net, Criterion::L1, &RatioVector(vec![0.1, 0.1]), Order::Ascending, &QuadratureConfig::default()),
            Err(PruneError::RatioCount { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn plan_for_another_network_is_rejected() {
        let net = chain();
        let unit = prunable_units(&net).remove(0);
        let plan = PruningPlan::new(&net, vec![PlanEntry { unit, remove: vec![0] }]).unwrap();
        let mut other = net.clone();
        other.nodes.truncate(3);
        other.nodes.push(Node::Conv2d(Conv2d::new(4, 2, 1, 1, 0)));
        other.nodes.push(Node::Activation(ActivationFn::Relu));
        other.nodes.insert(0, Node::Activation(ActivationFn::Relu));
        assert!(matches!(apply_plan(&other, &plan), Err(PruneError::Mismatch(_))));
    }
}
