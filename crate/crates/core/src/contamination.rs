//! Uniform (symmetric) label noise.

use rand::Rng;

use crate::data::{Dataset, Provenance};
use crate::divergence::ProbVector;
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub eta: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(eta: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::InvalidParameter(format!(
                "noise level must lie in [0, 1), got {eta}"
            )));
        }
        Ok(Self { eta, seed })
    }
}

/// Flips each label with probability `eta` to a class drawn uniformly from
/// the other `J - 1` classes. Returns the corrupted dataset and a mask of
/// the flipped rows.
///
/// Every example consumes exactly two draws (flip decision, replacement
/// class) whether or not it flips.
pub fn corrupt_labels(data: &Dataset, cfg: NoiseConfig) -> Result<(Dataset, Vec<bool>)> {
    NoiseConfig::new(cfg.eta, cfg.seed)?;
    let classes = data.classes;
    let mut rng = seeded(cfg.seed);
    let mut labels = Vec::with_capacity(data.len());
    let mut mask = Vec::with_capacity(data.len());
    for &y in &data.labels {
        let u: f64 = rng.random();
        let r = rng.random_range(0..classes - 1);
        let flip = u < cfg.eta;
        labels.push(if flip {
            if r < y {
                r
            } else {
                r + 1
            }
        } else {
            y
        });
        mask.push(flip);
    }
    let provenance = if cfg.eta > 0.0 {
        Provenance::Corrupted
    } else {
        data.provenance
    };
    let out = Dataset::new(data.features.clone(), labels, classes, provenance)?;
    Ok((out, mask))
}

/// Class posterior of the observed label under uniform noise:
/// `(1 - eta) p*_j + eta / (J - 1) (1 - p*_j)`.
pub fn noisy_posterior(p_star: &ProbVector, eta: f64) -> Result<ProbVector> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!(
            "noise level must lie in [0, 1), got {eta}"
        )));
    }
    let j = p_star.len();
    if j < 2 {
        return Err(Error::InvalidParameter("need at least 2 classes".into()));
    }
    let mix = eta / (j as f64 - 1.0);
    ProbVector::new(
        p_star
            .as_slice()
            .iter()
            .map(|&p| ((1.0 - eta) * p + mix * (1.0 - p)).clamp(0.0, 1.0))
            .collect(),
    )
}
