//! Expected absolute activation of a channel whose pre-activation follows
//! `N(β, γ²)`, the quantity BNFI ranks filters by.
//!
//! Two variants are provided: the plain expectation `E|g(Z)|` and the
//! sparsity-corrected one that conditions on `g(Z) ≠ 0`. Integration runs on
//! the standardized variable `t`, `z = β + |γ| t`, over a symmetric window
//! of `half_width` standard deviations, split at every point where `|g|` is
//! not smooth so each piece sees an analytic integrand.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::{Interval, Nonlinearity};
use crate::normal;
use crate::quadrature::GaussLegendre;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImportanceError {
    #[error("batch-norm parameters must be finite (gamma={gamma}, beta={beta})")]
    NonFinite { gamma: f64, beta: f64 },
    #[error("closed form requires gamma != 0")]
    DegenerateScale,
    #[error("invalid quadrature config: {0}")]
    InvalidConfig(String),
    #[error("monte-carlo estimate needs at least 1000 samples, got {0}")]
    TooFewSamples(usize),
}

/// The `(γ, β)` pair of one batch-norm channel.
///
/// Only `|γ|` enters any computation: the post-BN activation is taken to be
/// distributed as `N(β, γ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianChannel {
    pub gamma: f64,
    pub beta: f64,
}

impl GaussianChannel {
    pub fn new(gamma: f64, beta: f64) -> Result<Self, ImportanceError> {
        if !gamma.is_finite() || !beta.is_finite() {
            return Err(ImportanceError::NonFinite { gamma, beta });
        }
        Ok(Self { gamma, beta })
    }

    /// Standard deviation `|γ|`.
    pub fn sigma(&self) -> f64 {
        self.gamma.abs()
    }

    pub fn is_degenerate(&self) -> bool {
        self.gamma == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub node_count: usize,
    /// In standard deviations.
    pub half_width: f64,
    /// Below this non-zero probability a channel counts as dead.
    pub sparse_floor: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            node_count: 128,
            half_width: 8.0,
            sparse_floor: 1e-12,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<(), ImportanceError> {
        if self.node_count < 2 {
            return Err(ImportanceError::InvalidConfig(format!(
                "node_count must be >= 2, got {}",
                self.node_count
            )));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(ImportanceError::InvalidConfig(format!(
                "half_width must be positive, got {}",
                self.half_width
            )));
        }
        if !(self.sparse_floor > 0.0 && self.sparse_floor.is_finite()) {
            return Err(ImportanceError::InvalidConfig(format!(
                "sparse_floor must be positive, got {}",
                self.sparse_floor
            )));
        }
        Ok(())
    }
}

/// Which importance integral to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `E|g(Z)|`
    Expectation,
    /// `E[|g(Z)| | g(Z) ≠ 0]`
    SparseCorrected,
}

/// Reusable integrator; holds the Gauss–Legendre rule so scoring many
/// channels does not rebuild it.
#[derive(Debug, Clone)]
pub struct ImportanceIntegrator {
    cfg: QuadratureConfig,
    rule: GaussLegendre,
}

impl ImportanceIntegrator {
    pub fn new(cfg: QuadratureConfig) -> Result<Self, ImportanceError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            rule: GaussLegendre::new(cfg.node_count),
        })
    }

    pub fn config(&self) -> &QuadratureConfig {
        &self.cfg
    }

    pub fn evaluate<G: Nonlinearity + ?Sized>(&self, act: &G, ch: GaussianChannel, variant: Variant) -> f64 {
        match variant {
            Variant::Expectation => self.expectation(act, ch),
            Variant::SparseCorrected => self.sparse_corrected(act, ch),
        }
    }

    /// `∫ |g(z)| f(z; β, |γ|) dz`
    pub fn expectation<G: Nonlinearity + ?Sized>(&self, act: &G, ch: GaussianChannel) -> f64 {
        if ch.is_degenerate() {
            return act.eval(ch.beta).abs();
        }
        let sigma = ch.sigma();
        let beta = ch.beta;
        let w = self.cfg.half_width;
        let zero_set = act.zero_set();

        let mut cuts: Vec<f64> = act
            .breakpoints()
            .into_iter()
            .map(|b| (b - beta) / sigma)
            .filter(|t| t.is_finite() && *t > -w && *t < w)
            .collect();
        cuts.push(-w);
        cuts.push(w);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();

        let mut total = 0.0;
        for piece in cuts.windows(2) {
            let (a, b) = (piece[0], piece[1]);
            let mid = beta + sigma * 0.5 * (a + b);
            if zero_set.iter().any(|iv| iv.contains(mid)) {
                continue;
            }
            total += self
                .rule
                .integrate(a, b, |t| act.eval(beta + sigma * t).abs() * normal::pdf(t));
        }
        total.max(0.0)
    }

    /// Expectation divided by the non-zero probability; 0 for dead channels.
    pub fn sparse_corrected<G: Nonlinearity + ?Sized>(&self, act: &G, ch: GaussianChannel) -> f64 {
        if ch.is_degenerate() {
            let v = act.eval(ch.beta);
            return if v != 0.0 { v.abs() } else { 0.0 };
        }
        let norm = nonzero_measure(act, ch);
        if norm < self.cfg.sparse_floor {
            return 0.0;
        }
        if norm == 1.0 {
            return self.expectation(act, ch);
        }
        self.expectation(act, ch) / norm
    }
}

/// `P(g(Z) = 0)` for `Z ~ N(β, γ²)`: the Gaussian measure of the zero set.
pub fn zero_measure<G: Nonlinearity + ?Sized>(act: &G, ch: GaussianChannel) -> f64 {
    let zero_set = act.zero_set();
    if ch.is_degenerate() {
        return if zero_set.iter().any(|iv| iv.contains(ch.beta)) { 1.0 } else { 0.0 };
    }
    let sigma = ch.sigma();
    merge(zero_set)
        .iter()
        .map(|iv| normal::mass((iv.lo - ch.beta) / sigma, (iv.hi - ch.beta) / sigma))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// `P(g(Z) ≠ 0)`, summed over the gaps of the zero set rather than taken as
/// `1 - zero_measure` so that nearly-dead channels keep their precision.
pub fn nonzero_measure<G: Nonlinearity + ?Sized>(act: &G, ch: GaussianChannel) -> f64 {
    let zero_set = merge(act.zero_set());
    if ch.is_degenerate() {
        return if zero_set.iter().any(|iv| iv.contains(ch.beta)) { 0.0 } else { 1.0 };
    }
    if zero_set.is_empty() {
        return 1.0;
    }
    let sigma = ch.sigma();
    let mut gaps = Vec::with_capacity(zero_set.len() + 1);
    let mut lo = f64::NEG_INFINITY;
    for iv in &zero_set {
        gaps.push((lo, iv.lo));
        lo = iv.hi;
    }
    gaps.push((lo, f64::INFINITY));
    gaps.iter()
        .map(|&(a, b)| normal::mass((a - ch.beta) / sigma, (b - ch.beta) / sigma))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Sorts and coalesces overlapping intervals.
fn merge(mut set: Vec<Interval>) -> Vec<Interval> {
    set.retain(|iv| iv.lo <= iv.hi);
    set.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let mut out: Vec<Interval> = Vec::with_capacity(set.len());
    for iv in set {
        match out.last_mut() {
            Some(last) if iv.lo <= last.hi => last.hi = last.hi.max(iv.hi),
            _ => out.push(iv),
        }
    }
    out
}

pub fn importance_e7<G: Nonlinearity + ?Sized>(
    act: &G,
    ch: GaussianChannel,
    cfg: &QuadratureConfig,
) -> Result<f64, ImportanceError> {
    Ok(ImportanceIntegrator::new(*cfg)?.expectation(act, ch))
}

pub fn importance_e8<G: Nonlinearity + ?Sized>(
    act: &G,
    ch: GaussianChannel,
    cfg: &QuadratureConfig,
) -> Result<f64, ImportanceError> {
    Ok(ImportanceIntegrator::new(*cfg)?.sparse_corrected(act, ch))
}

/// Mean of the ReLU of `N(β, γ²)`: `β Φ(β/|γ|) + |γ| φ(β/|γ|)`.
pub fn closed_form_relu_importance(ch: GaussianChannel) -> Result<f64, ImportanceError> {
    if ch.is_degenerate() {
        return Err(ImportanceError::DegenerateScale);
    }
    let s = ch.sigma();
    let u = ch.beta / s;
    Ok(ch.beta * normal::cdf(u) + s * normal::pdf(u))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    /// Samples that entered the mean.
    pub used: usize,
}

/// Seeded Monte-Carlo estimate of either importance variant, for checking
/// the quadrature independently.
pub fn monte_carlo_importance<G: Nonlinearity + ?Sized>(
    act: &G,
    ch: GaussianChannel,
    n: usize,
    seed: u64,
    variant: Variant,
) -> Result<McEstimate, ImportanceError> {
    if n < 1000 {
        return Err(ImportanceError::TooFewSamples(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = ch.sigma();
    // Welford running mean / sum of squared deviations
    let mut count = 0usize;
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    for _ in 0..n {
        let u: f64 = StandardNormal.sample(&mut rng);
        let v = act.eval(ch.beta + sigma * u);
        if variant == Variant::SparseCorrected && v == 0.0 {
            continue;
        }
        let a = v.abs();
        count += 1;
        let d = a - mean;
        mean += d / count as f64;
        m2 += d * (a - mean);
    }
    let std_error = if count > 1 {
        (m2 / (count - 1) as f64 / count as f64).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate {
        estimate: if count == 0 { 0.0 } else { mean },
        std_error,
        used: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationFn;

    fn ch(g: f64, b: f64) -> GaussianChannel {
        GaussianChannel::new(g, b).unwrap()
    }

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn zero_measure_examples() {
        assert_eq!(zero_measure(&ActivationFn::Relu, ch(1.0, 0.0)), 0.5);
        assert_eq!(zero_measure(&ActivationFn::Identity, ch(1.0, 0.0)), 0.0);
        assert_eq!(zero_measure(&ActivationFn::Relu, ch(0.0, 1.0)), 0.0);
        assert_eq!(zero_measure(&ActivationFn::Relu, ch(0.0, -1.0)), 1.0);
        assert_eq!(zero_measure(&ActivationFn::Relu, ch(0.0, 0.0)), 1.0);
    }

    #[test]
    fn nonzero_measure_in_deep_tail() {
        // Φ(-10) ≈ 7.62e-24, lost entirely by 1 - Φ(10)
        let p = nonzero_measure(&ActivationFn::Relu, ch(1.0, -10.0));
        assert!((p / 7.619853024160527e-24 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn e7_examples() {
        let relu = ActivationFn::Relu;
        let v = importance_e7(&relu, ch(1.0, 0.0), &cfg()).unwrap();
        assert!((v - 0.3989422804014327).abs() < 1e-12);
        assert_eq!(importance_e7(&relu, ch(0.0, -1.0), &cfg()).unwrap(), 0.0);
        let v = importance_e7(&relu, ch(2.0, 1.0), &cfg()).unwrap();
        assert!((v - 1.3956).abs() < 1e-4);
        let v = importance_e7(&ActivationFn::Identity, ch(1.0, 0.0), &cfg()).unwrap();
        assert!((v - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn e8_examples() {
        let relu = ActivationFn::Relu;
        let v = importance_e8(&relu, ch(1.0, 0.0), &cfg()).unwrap();
        assert!((v - 0.7978845608028654).abs() < 1e-12);
        let leaky = ActivationFn::leaky_relu(0.1);
        assert_eq!(
            importance_e8(&leaky, ch(1.0, 0.0), &cfg()).unwrap(),
            importance_e7(&leaky, ch(1.0, 0.0), &cfg()).unwrap()
        );
        assert_eq!(importance_e8(&relu, ch(0.0, -2.0), &cfg()).unwrap(), 0.0);
        assert_eq!(importance_e8(&relu, ch(0.0, 2.0), &cfg()).unwrap(), 2.0);
    }

    #[test]
    fn e8_below_floor_is_dead() {
        // non-zero mass Φ(-400) underflows to 0
        assert_eq!(importance_e8(&ActivationFn::Relu, ch(0.01, -4.0), &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_examples() {
        let v = closed_form_relu_importance(ch(1.0, 0.0)).unwrap();
        assert!((v - 0.3989422804014327).abs() < 1e-15);
        let v = closed_form_relu_importance(ch(1.0, 10.0)).unwrap();
        assert!((v - 10.0).abs() < 1e-6);
        let v = closed_form_relu_importance(ch(3.0, 0.0)).unwrap();
        assert!((v - 1.1968268412042981).abs() < 1e-14);
        assert_eq!(
            closed_form_relu_importance(ch(0.0, 1.0)),
            Err(ImportanceError::DegenerateScale)
        );
    }

    #[test]
    fn degenerate_monte_carlo_is_exact() {
        let est = monte_carlo_importance(&ActivationFn::Identity, ch(0.0, 5.0), 1000, 7, Variant::Expectation).unwrap();
        assert_eq!(est.estimate, 5.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn monte_carlo_rejects_small_n() {
        assert_eq!(
            monte_carlo_importance(&ActivationFn::Relu, ch(1.0, 0.0), 999, 0, Variant::Expectation),
            Err(ImportanceError::TooFewSamples(999))
        );
    }

    #[test]
    fn monte_carlo_relu_near_closed_form() {
        let est = monte_carlo_importance(&ActivationFn::Relu, ch(1.0, 0.0), 1_000_000, 11, Variant::Expectation).unwrap();
        assert!((est.estimate - 0.3989422804014327).abs() < 4.0 * est.std_error);
        assert!(est.std_error < 0.001);
    }

    #[test]
    fn rejects_non_finite_and_bad_config() {
        assert!(GaussianChannel::new(f64::NAN, 0.0).is_err());
        assert!(GaussianChannel::new(1.0, f64::INFINITY).is_err());
        let bad = QuadratureConfig { node_count: 1, ..cfg() };
        assert!(importance_e7(&ActivationFn::Relu, ch(1.0, 0.0), &bad).is_err());
        let bad = QuadratureConfig { sparse_floor: 0.0, ..cfg() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn custom_nonlinearity_with_bounded_dead_zone() {
        // hard shrink: zero on [-1, 1], identity outside
        struct Shrink;
        impl Nonlinearity for Shrink {
            fn eval(&self, x: f64) -> f64 {
                if x.abs() <= 1.0 { 0.0 } else { x }
            }
            fn zero_set(&self) -> Vec<Interval> {
                vec![Interval::new(-1.0, 1.0)]
            }
        }
        let c = ch(1.0, 0.0);
        assert!((zero_measure(&Shrink, c) - normal::mass(-1.0, 1.0)).abs() < 1e-15);
        // E|Z| 1{|Z|>1} = 2 φ(1)
        let e7 = importance_e7(&Shrink, c, &cfg()).unwrap();
        assert!((e7 - 2.0 * normal::pdf(1.0)).abs() < 1e-12);
        let e8 = importance_e8(&Shrink, c, &cfg()).unwrap();
        assert!((e8 - e7 / (2.0 * normal::sf(1.0))).abs() < 1e-12);
    }
}
