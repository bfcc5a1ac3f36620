//! Activation functions and the structural facts the importance integrals
//! need about them: where they vanish and where `|g|` stops being smooth.

use serde::{Deserialize, Serialize};

/// Default slope of the negative branch of a leaky ReLU.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// A closed interval `[lo, hi]` on the extended real line.
///
/// Either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Anything the importance integrals can be evaluated against.
///
/// The zero set is the union of closed intervals of positive length on which
/// the function is identically zero. Isolated zeros have no Gaussian measure
/// and are left out, so an empty list means the activation never induces
/// sparsity.
pub trait Nonlinearity {
    fn eval(&self, x: f64) -> f64;

    fn zero_set(&self) -> Vec<Interval>;

    /// Points where `|g|` may fail to be smooth. Quadrature splits there.
    fn breakpoints(&self) -> Vec<f64> {
        self.zero_set()
            .iter()
            .flat_map(|iv| [iv.lo, iv.hi])
            .filter(|x| x.is_finite())
            .collect()
    }
}

/// Element-wise activation following a batch-normalization layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationFn {
    Identity,
    Relu,
    LeakyRelu {
        #[serde(default = "default_slope")]
        alpha: f64,
    },
    Swish,
}

fn default_slope() -> f64 {
    DEFAULT_LEAKY_SLOPE
}

impl ActivationFn {
    pub fn leaky_relu(alpha: f64) -> Self {
        ActivationFn::LeakyRelu { alpha }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActivationFn::Identity => "identity",
            ActivationFn::Relu => "relu",
            ActivationFn::LeakyRelu { .. } => "leaky_relu",
            ActivationFn::Swish => "swish",
        }
    }

    /// Derivative `g'(x)`. At the ReLU kink the left derivative is used.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ActivationFn::Identity => 1.0,
            ActivationFn::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationFn::LeakyRelu { alpha } => {
                if x > 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            ActivationFn::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
        }
    }

    /// True when the activation maps a set of positive measure to zero.
    pub fn induces_sparsity(&self) -> bool {
        !self.zero_set().is_empty()
    }
}

impl Nonlinearity for ActivationFn {
    fn eval(&self, x: f64) -> f64 {
        match *self {
            ActivationFn::Identity => x,
            ActivationFn::Relu => x.max(0.0),
            ActivationFn::LeakyRelu { alpha } => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            ActivationFn::Swish => x * sigmoid(x),
        }
    }

    fn zero_set(&self) -> Vec<Interval> {
        match *self {
            ActivationFn::Relu | ActivationFn::LeakyRelu { alpha: 0.0 } => {
                vec![Interval::new(f64::NEG_INFINITY, 0.0)]
            }
            _ => Vec::new(),
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        // every built-in changes sign or slope at the origin
        vec![0.0]
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
