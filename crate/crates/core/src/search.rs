//! Greedy per-unit ratio search and the uniform-ratio sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criteria::{rank_channels, Criterion, Order};
use crate::engine::{accuracy, Dataset, EngineError, Split};
use crate::importance::QuadratureConfig;
use crate::ir::{count_flops, count_params, prunable_units, validate, NetworkIR, PrunableUnit};
use crate::pruner::{apply_plan, channels_to_remove, make_plan, score_one, PlanEntry, PruneError, PruningPlan, RatioVector};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error("evaluation failed: {0}")]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchCfg {
    /// Tolerated accuracy drop per unit.
    pub delta: f64,
    /// Per-unit overrides of `delta`, in unit order.
    #[serde(default)]
    pub unit_deltas: Option<Vec<f64>>,
    pub iterations: usize,
    pub lower: f64,
    pub upper: f64,
    pub eval_split: Split,
    /// Search each unit on the net already pruned at the earlier units'
    /// ratios instead of the untouched net.
    #[serde(default)]
    pub cumulative: bool,
}

impl Default for SearchCfg {
    fn default() -> Self {
        Self {
            delta: 0.05,
            unit_deltas: None,
            iterations: 5,
            lower: 0.0,
            upper: 0.95,
            eval_split: Split::Train,
            cumulative: false,
        }
    }
}

impl SearchCfg {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::Config(m.into()));
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return bad("delta must be finite and >= 0");
        }
        if let Some(d) = &self.unit_deltas {
            if d.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad("unit deltas must be finite and >= 0");
            }
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        // upper = 1 is allowed: midpoints never reach it
        if !(0.0 <= self.lower && self.lower < self.upper && self.upper <= 1.0) {
            return bad("bounds must satisfy 0 <= lower < upper <= 1");
        }
        Ok(())
    }

    pub fn delta_for(&self, unit: usize) -> f64 {
        self.unit_deltas.as_ref().and_then(|d| d.get(unit).copied()).unwrap_or(self.delta)
    }
}

/// Bisection on the ratio: shrinks the upper bound whenever the measured
/// drop `|base - evaluate(m)|` reaches `delta`, and returns the final
/// midpoint.
pub fn bisect_ratio<E>(
    base: f64,
    delta: f64,
    lower: f64,
    upper: f64,
    iterations: usize,
    mut evaluate: impl FnMut(f64) -> Result<f64, E>,
) -> Result<f64, E> {
    let (mut l, mut u) = (lower, upper);
    for _ in 0..iterations {
        let m = 0.5 * (l + u);
        let drop = (base - evaluate(m)?).abs();
        if drop >= delta {
            u = m;
        } else {
            l = m;
        }
    }
    Ok(0.5 * (l + u))
}

/// Unit `index` of `net` pruned at `ratio` along a precomputed ranking.
fn prune_single(net: &NetworkIR, unit: &PrunableUnit, ranking: &[usize], ratio: f64) -> Result<NetworkIR, PruneError> {
    let k = channels_to_remove(ratio, ranking.len());
    if k == 0 {
        return Ok(net.clone());
    }
    let mut remove: Vec<usize> = ranking[..k].to_vec();
    remove.sort_unstable();
    let plan = PruningPlan::new(net, vec![PlanEntry { unit: unit.clone(), remove }])?;
    apply_plan(net, &plan)
}

/// Ratio for unit `index` alone, all other units intact, pruning in
/// ascending importance.
pub fn search_layer_ratio(
    net: &NetworkIR,
    index: usize,
    criterion: Criterion,
    cfg: &SearchCfg,
    quad: &QuadratureConfig,
    evaluator: &mut dyn FnMut(&NetworkIR) -> Result<f64, EngineError>,
) -> Result<f64, SearchError> {
    cfg.validate()?;
    validate(net).map_err(PruneError::Invalid)?;
    let base = evaluator(net)?;
    search_against(net, index, base, criterion, cfg, quad, evaluator)
}

fn search_against(
    net: &NetworkIR,
    index: usize,
    base: f64,
    criterion: Criterion,
    cfg: &SearchCfg,
    quad: &QuadratureConfig,
    evaluator: &mut dyn FnMut(&NetworkIR) -> Result<f64, EngineError>,
) -> Result<f64, SearchError> {
    let units = prunable_units(net);
    let unit = units
        .get(index)
        .ok_or_else(|| SearchError::Config(format!("unit {index} out of range for {} units", units.len())))?;
    let iv = score_one(net, unit, criterion.for_unit(index), quad)?;
    let ranking = rank_channels(&iv, Order::Ascending);
    bisect_ratio(base, cfg.delta_for(index), cfg.lower, cfg.upper, cfg.iterations, |m| {
        let candidate = prune_single(net, unit, &ranking, m)?;
        Ok::<_, SearchError>(evaluator(&candidate)?)
    })
}

/// Searches every unit in network order.
pub fn search_all_ratios(
    net: &NetworkIR,
    criterion: Criterion,
    cfg: &SearchCfg,
    quad: &QuadratureConfig,
    evaluator: &mut dyn FnMut(&NetworkIR) -> Result<f64, EngineError>,
) -> Result<RatioVector, SearchError> {
    cfg.validate()?;
    validate(net).map_err(PruneError::Invalid)?;
    let count = prunable_units(net).len();
    let mut ratios = Vec::with_capacity(count);
    let mut working = net.clone();
    let mut base = evaluator(net)?;
    for i in 0..count {
        let r = search_against(&working, i, base, criterion, cfg, quad, evaluator)?;
        ratios.push(r);
        if cfg.cumulative {
            let unit = &prunable_units(&working)[i];
            let iv = score_one(&working, unit, criterion.for_unit(i), quad)?;
            working = prune_single(&working, unit, &rank_channels(&iv, Order::Ascending), r)?;
            base = evaluator(&working)?;
        }
    }
    Ok(RatioVector::new(ratios)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub criterion: String,
    pub order: Order,
    pub ratio: f64,
    pub accuracy: f64,
    pub params: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub baseline: f64,
    pub rows: Vec<SweepRow>,
}

/// Number of seeds averaged for the random criterion.
pub const RANDOM_REPEATS: u64 = 3;

/// Uniform-ratio accuracy curves. Rows are ordered by criterion, then
/// order, then ratio. Evaluations run on the current rayon pool; results
/// do not depend on its size.
pub fn sweep(
    net: &NetworkIR,
    criteria: &[Criterion],
    orders: &[Order],
    ratios: &[f64],
    data: &Dataset,
    quad: &QuadratureConfig,
) -> Result<SweepReport, SearchError> {
    validate(net).map_err(PruneError::Invalid)?;
    if ratios.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SearchError::Config("ratios must be strictly increasing".into()));
    }
    if let Some(&r) = ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(SearchError::Config(format!("ratio {r} outside [0, 1)")));
    }
    let units = prunable_units(net).len();
    let baseline = accuracy(net, data)?;

    let mut jobs = Vec::new();
    for &criterion in criteria {
        for &order in orders {
            for &ratio in ratios {
                jobs.push((criterion, order, ratio));
            }
        }
    }
    let rows = jobs
        .par_iter()
        .map(|&(criterion, order, ratio)| {
            let variants: Vec<Criterion> = match criterion {
                Criterion::Random { seed } => {
                    (0..RANDOM_REPEATS).map(|k| criterion.reseeded(seed.wrapping_add(k))).collect()
                }
                other => vec![other],
            };
            let rv = RatioVector::uniform(ratio, units)?;
            let mut acc_sum = 0.0;
            let mut counts = (0, 0);
            for c in &variants {
                let plan = make_plan(net, *c, &rv, order, quad)?;
                let pruned = apply_plan(net, &plan)?;
                acc_sum += accuracy(&pruned, data)?;
                counts = (count_params(&pruned).total, count_flops(&pruned).total);
            }
            Ok(SweepRow {
                criterion: criterion.cli_name().to_string(),
                order,
                ratio,
                accuracy: acc_sum / variants.len() as f64,
                params: counts.0,
                flops: counts.1,
            })
        })
        .collect::<Result<Vec<_>, SearchError>>()?;
    Ok(SweepReport { baseline, rows })
}

/// Numeric formatting for CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// `%g`-style with this many significant digits.
    Significant(usize),
    /// Shortest representation that round-trips.
    Full,
}

impl Default for Precision {
    fn default() -> Self {
        Precision::Significant(Self::DEFAULT_DIGITS)
    }
}

impl Precision {
    pub const DEFAULT_DIGITS: usize = 6;

    pub fn format(self, v: f64) -> String {
        match self {
            Precision::Full => format!("{v}"),
            Precision::Significant(d) => format_significant(v, d),
        }
    }
}

/// C `%.{digits}g`.
pub fn format_significant(v: f64, digits: usize) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

impl SweepReport {
    pub fn to_csv(&self, precision: Precision) -> String {
        let mut out = String::from("criterion,order,ratio,accuracy,acc_drop,params,flops\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.criterion,
                r.order,
                precision.format(r.ratio),
                precision.format(r.accuracy),
                precision.format(self.baseline - r.accuracy),
                r.params,
                r.flops
            ));
        }
        out
    }
}

/// Parses `start:stop:step` (values `start + i·step` up to `stop`, with a
/// half-step guard) or a comma-separated list.
pub fn parse_ratio_list(text: &str) -> Result<Vec<f64>, String> {
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("bad number '{s}'"));
    let parts: Vec<&str> = text.split(':').collect();
    let values = match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0 && step.is_finite() && start.is_finite() && stop.is_finite()) {
                return Err(format!("bad range '{text}'"));
            }
            let mut out = Vec::new();
            let mut i = 0u32;
            loop {
                let v = start + f64::from(i) * step;
                if v >= stop + step / 2.0 {
                    break;
                }
                out.push(v);
                i += 1;
            }
            out
        }
        [_] => text.split(',').map(num).collect::<Result<_, _>>()?,
        _ => return Err(format!("bad range '{text}', expected start:stop:step")),
    };
    if values.is_empty() {
        return Err(format!("'{text}' yields no ratios"));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_evaluator_example() {
        let r = bisect_ratio(1.0, 0.25, 0.0, 1.0, 5, |m| Ok::<_, ()>(1.0 - m)).unwrap();
        assert_eq!(r, 0.234375);
    }

    #[test]
    fn unreachable_delta_tends_to_upper() {
        let r = bisect_ratio(1.0, 2.0, 0.0, 0.95, 5, |m| Ok::<_, ()>(1.0 - m)).unwrap();
        assert!(r > 0.9 && r < 0.95);
    }

    #[test]
    fn zero_delta_tends_to_lower() {
        let r = bisect_ratio(1.0, 0.0, 0.0, 0.95, 5, |m| Ok::<_, ()>(1.0 - m)).unwrap();
        assert!(r < 0.05 && r > 0.0);
    }

    #[test]
    fn evaluator_errors_propagate() {
        assert_eq!(bisect_ratio(1.0, 0.1, 0.0, 1.0, 3, |_| Err::<f64, _>("boom")), Err("boom"));
    }

    #[test]
    fn cfg_bounds() {
        let ok = SearchCfg::default();
        ok.validate().unwrap();
        assert!(SearchCfg { upper: 1.0, ..ok.clone() }.validate().is_ok());
        assert!(SearchCfg { upper: 1.1, ..ok.clone() }.validate().is_err());
        assert!(SearchCfg { lower: 0.5, upper: 0.5, ..ok.clone() }.validate().is_err());
        assert!(SearchCfg { iterations: 0, ..ok.clone() }.validate().is_err());
        assert!(SearchCfg { delta: f64::INFINITY, ..ok }.validate().is_err());
    }

    #[test]
    fn significant_digits() {
        assert_eq!(format_significant(0.7978845608028654, 6), "0.797885");
        assert_eq!(format_significant(0.0, 6), "0");
        assert_eq!(format_significant(0.5, 6), "0.5");
        assert_eq!(format_significant(123456789.0, 6), "1.23457e+08");
        assert_eq!(format_significant(1.5e-7, 6), "1.5e-07");
        assert_eq!(format_significant(-2.0, 6), "-2");
        assert_eq!(format_significant(999999.7, 6), "1e+06");
        assert_eq!(format_significant(0.0001, 6), "0.0001");
    }

    #[test]
    fn ratio_ranges() {
        let r = parse_ratio_list("0.1:0.7:0.1").unwrap();
        assert_eq!(r.len(), 7);
        assert!((r[6] - 0.7).abs() < 1e-12);
        assert_eq!(parse_ratio_list("0:0.3:0.1").unwrap().len(), 4);
        assert_eq!(parse_ratio_list("0.1,0.3").unwrap(), vec![0.1, 0.3]);
        assert!(parse_ratio_list("0:1:0").is_err());
        assert!(parse_ratio_list("a:b").is_err());
    }
}
