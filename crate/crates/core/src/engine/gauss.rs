//! How close the batch-normalized values of one layer come to `N(0, 1)` as
//! the batch grows.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ir::{NetworkIR, Node};
use crate::normal;

use super::data::Dataset;
use super::model::{Mode, Model};
use super::EngineError;

pub const HIST_BINS: usize = 64;
pub const HIST_RANGE: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussRow {
    pub batch_size: usize,
    /// Values that fell inside the histogram range.
    pub samples: usize,
    /// Density per bin over `[-5, 5]`.
    pub density: Vec<f64>,
    pub mse: f64,
}

impl GaussRow {
    pub fn bin_width() -> f64 {
        2.0 * HIST_RANGE / HIST_BINS as f64
    }

    pub fn bin_centers() -> Vec<f64> {
        let w = Self::bin_width();
        (0..HIST_BINS).map(|i| -HIST_RANGE + (i as f64 + 0.5) * w).collect()
    }

    /// `Σ density · width`: 1 unless every value fell outside the range.
    pub fn integral(&self) -> f64 {
        self.density.iter().sum::<f64>() * Self::bin_width()
    }
}

/// Normalized histogram of `values` and its mean squared deviation from
/// the standard normal density at bin centers.
pub fn histogram_mse(values: &[f64]) -> (Vec<f64>, usize, f64) {
    let w = GaussRow::bin_width();
    let mut counts = vec![0usize; HIST_BINS];
    let mut inside = 0usize;
    for &v in values {
        if !(-HIST_RANGE..=HIST_RANGE).contains(&v) {
            continue;
        }
        let bin = (((v + HIST_RANGE) / w) as usize).min(HIST_BINS - 1);
        counts[bin] += 1;
        inside += 1;
    }
    let density: Vec<f64> = if inside == 0 {
        vec![0.0; HIST_BINS]
    } else {
        counts.iter().map(|&c| c as f64 / (inside as f64 * w)).collect()
    };
    let mse = density
        .iter()
        .zip(GaussRow::bin_centers())
        .map(|(d, x)| (d - normal::pdf(x)).powi(2))
        .sum::<f64>()
        / HIST_BINS as f64;
    (density, inside, mse)
}

/// For each batch size, draws one batch (without replacement, seeded),
/// runs a train-mode forward pass to batch norm `layer`, and scores the
/// normalized values against `N(0, 1)`.
pub fn gaussianity_report(
    net: &NetworkIR,
    data: &Dataset,
    layer: usize,
    batch_sizes: &[usize],
    seed: u64,
) -> Result<Vec<GaussRow>, EngineError> {
    if !matches!(net.nodes.get(layer), Some(Node::BatchNorm(_))) {
        return Err(EngineError::Config(format!("node {layer} is not a batch norm")));
    }
    let model = Model::from_ir(net)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    batch_sizes
        .iter()
        .map(|&b| {
            if b == 0 || b > data.len() {
                return Err(EngineError::Config(format!(
                    "batch size {b} outside 1..={} samples",
                    data.len()
                )));
            }
            let picks = index::sample(&mut rng, data.len(), b).into_vec();
            let (x, _) = data.batch(&picks);
            let xhat = model.probe_normalized(&x, Mode::Train, layer)?;
            let (density, samples, mse) = histogram_mse(&xhat);
            Ok(GaussRow { batch_size: b, samples, density, mse })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_integrates_to_one() {
        let values: Vec<f64> = (0..1000).map(|i| (i as f64 / 1000.0 - 0.5) * 12.0).collect();
        let (density, inside, _) = histogram_mse(&values);
        let row = GaussRow { batch_size: 1, samples: inside, density, mse: 0.0 };
        assert!((row.integral() - 1.0).abs() < 1e-9);
        assert!(inside < 1000);
    }

    #[test]
    fn point_mass_scores_badly() {
        let (_, _, mse) = histogram_mse(&[0.0; 100]);
        let (_, _, spread) = histogram_mse(&(0..100).map(|i| (i as f64 - 50.0) / 25.0).collect::<Vec<_>>());
        assert!(mse > 0.5);
        assert!(spread < mse);
    }
}
