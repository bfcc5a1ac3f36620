//! Filter-importance criteria behind one interface.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::ActivationFn;
use crate::importance::{GaussianChannel, ImportanceError, ImportanceIntegrator, QuadratureConfig, Variant};
use crate::median::geometric_median;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CriterionError {
    #[error("unknown criterion {0:?} (expected bnfi, bnfi-n, l1, fpgm, gamma or random)")]
    Unknown(String),
    #[error("unknown order {0:?} (expected aoi or doi)")]
    UnknownOrder(String),
    #[error("fpgm needs at least two filters to rank")]
    SingleFilter,
    #[error("layer context: {0}")]
    Context(String),
    #[error(transparent)]
    Importance(#[from] ImportanceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Criterion {
    /// Sparsity-corrected expected absolute activation.
    Bnfi,
    /// Expected absolute activation without the sparsity correction.
    BnfiN,
    L1,
    Fpgm,
    GammaMag,
    Random { seed: u64 },
}

impl Criterion {
    /// Stable command-line name.
    pub fn cli_name(&self) -> &'static str {
        match self {
            Criterion::Bnfi => "bnfi",
            Criterion::BnfiN => "bnfi-n",
            Criterion::L1 => "l1",
            Criterion::Fpgm => "fpgm",
            Criterion::GammaMag => "gamma",
            Criterion::Random { .. } => "random",
        }
    }

    /// Same criterion with a different stream for the random scorer.
    pub fn reseeded(self, seed: u64) -> Self {
        match self {
            Criterion::Random { .. } => Criterion::Random { seed },
            other => other,
        }
    }

    /// Variant used for the `unit`-th prunable unit of a network, so random
    /// scores differ between layers while staying reproducible.
    pub fn for_unit(self, unit: usize) -> Self {
        match self {
            Criterion::Random { seed } => Criterion::Random {
                seed: seed.wrapping_add((unit as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            },
            other => other,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for Criterion {
    type Err = CriterionError;

    /// Random parses with seed 0; use [`Criterion::reseeded`] to set it.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bnfi" => Ok(Criterion::Bnfi),
            "bnfi-n" | "bnfi_n" => Ok(Criterion::BnfiN),
            "l1" => Ok(Criterion::L1),
            "fpgm" => Ok(Criterion::Fpgm),
            "gamma" | "gamma_mag" => Ok(Criterion::GammaMag),
            "random" => Ok(Criterion::Random { seed: 0 }),
            _ => Err(CriterionError::Unknown(s.to_string())),
        }
    }
}

/// Direction in which filters are removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    /// Least important first (AOI).
    Ascending,
    /// Most important first (DOI).
    Descending,
}

impl Order {
    pub fn cli_name(&self) -> &'static str {
        match self {
            Order::Ascending => "aoi",
            Order::Descending => "doi",
        }
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for Order {
    type Err = CriterionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "aoi" | "asc" | "ascending" => Ok(Order::Ascending),
            "doi" | "desc" | "descending" => Ok(Order::Descending),
            _ => Err(CriterionError::UnknownOrder(s.to_string())),
        }
    }
}

/// Everything a criterion may look at for one prunable conv.
#[derive(Debug, Clone, Copy)]
pub struct LayerContext<'a> {
    /// Conv weights laid out `(C_out, C_in / groups, k, k)`.
    pub filter_weights: &'a [f32],
    pub bn: &'a [GaussianChannel],
    pub activation: ActivationFn,
}

impl LayerContext<'_> {
    pub fn out_channels(&self) -> usize {
        self.bn.len()
    }

    fn validate(&self) -> Result<(), CriterionError> {
        let c = self.bn.len();
        if c == 0 {
            return Err(CriterionError::Context("no channels".into()));
        }
        if !self.filter_weights.len().is_multiple_of(c) {
            return Err(CriterionError::Context(format!(
                "{} weights do not split into {} filters",
                self.filter_weights.len(),
                c
            )));
        }
        if self.filter_weights.iter().any(|w| !w.is_finite()) {
            return Err(CriterionError::Context("non-finite filter weight".into()));
        }
        Ok(())
    }

    fn filters(&self) -> impl Iterator<Item = &[f32]> {
        let per = self.filter_weights.len() / self.bn.len();
        self.filter_weights.chunks(per.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub scores: Vec<f64>,
    pub criterion: Criterion,
}

impl ImportanceVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// One score per output channel of the unit described by `ctx`.
pub fn score_unit(
    criterion: Criterion,
    ctx: &LayerContext<'_>,
    cfg: &QuadratureConfig,
) -> Result<ImportanceVector, CriterionError> {
    ctx.validate()?;
    let scores = match criterion {
        Criterion::Bnfi | Criterion::BnfiN => {
            let integrator = ImportanceIntegrator::new(*cfg)?;
            let variant = if criterion == Criterion::Bnfi {
                Variant::SparseCorrected
            } else {
                Variant::Expectation
            };
            ctx.bn
                .iter()
                .map(|&ch| integrator.evaluate(&ctx.activation, ch, variant))
                .collect()
        }
        Criterion::GammaMag => ctx.bn.iter().map(|ch| ch.gamma.abs()).collect(),
        Criterion::L1 => ctx
            .filters()
            .map(|f| f.iter().map(|&w| (w as f64).abs()).sum())
            .collect(),
        Criterion::Fpgm => {
            if ctx.out_channels() < 2 {
                return Err(CriterionError::SingleFilter);
            }
            let points: Vec<Vec<f64>> = ctx
                .filters()
                .map(|f| f.iter().map(|&w| w as f64).collect())
                .collect();
            let median = geometric_median(&points);
            points
                .iter()
                .map(|p| {
                    p.iter()
                        .zip(&median)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        }
        Criterion::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..ctx.out_channels()).map(|_| rng.random::<f64>()).collect()
        }
    };
    Ok(ImportanceVector { scores, criterion })
}

/// Channel indices sorted by score; ties go to the lower index.
pub fn rank_channels(iv: &ImportanceVector, order: Order) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..iv.scores.len()).collect();
    let s = &iv.scores;
    match order {
        Order::Ascending => idx.sort_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b))),
        Order::Descending => idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b))),
    }
    idx
}
