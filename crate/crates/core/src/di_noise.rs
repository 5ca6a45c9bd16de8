//! Residual noise built from two measurements of the same slice.
//!
//! `x - x'` cancels the shared signal and leaves a combination of the two
//! independent noise fields. Removing its mean and permuting the pixels
//! keeps the value distribution (and so the variance) while destroying the
//! spatial structure.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::data::SlicePair;
use crate::error::Result;
use crate::grid::Grid;
use crate::rng::Prng;

#[derive(Debug, Clone, PartialEq)]
pub struct DiNoise {
    pub xi: Grid,
    /// Mean of `x - x'` that was removed.
    pub source_mean: f64,
}

fn shuffled(grid: &Grid, rng: &mut Prng) -> Grid {
    let mut values = grid.as_slice().to_vec();
    values.shuffle(rng);
    Grid::from_vec(grid.height(), grid.width(), values).expect("same length")
}

impl DiNoise {
    pub fn from_pair(pair: &SlicePair, rng: &mut Prng) -> Result<Self> {
        let diff = pair.x.zip_map(&pair.x_prime, |a, b| a - b)?;
        let mu = diff.mean();
        let centred = diff.map(|v| v - mu);
        Ok(Self {
            xi: shuffled(&centred, rng),
            source_mean: mu,
        })
    }

    /// A fresh uniform permutation of the same values.
    pub fn reshuffle(&self, rng: &mut Prng) -> Self {
        Self {
            xi: shuffled(&self.xi, rng),
            source_mean: self.source_mean,
        }
    }

    /// i.i.d. standard normal field, used when the residual noise is ablated.
    pub fn gaussian(h: usize, w: usize, rng: &mut Prng) -> Self {
        let xi = Grid::from_fn(h, w, |_, _| StandardNormal.sample(rng));
        Self {
            xi,
            source_mean: 0.0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.xi.shape()
    }
}

/// Convenience wrapper matching the pipeline's naming.
pub fn di_noise(pair: &SlicePair, rng: &mut Prng) -> Result<DiNoise> {
    DiNoise::from_pair(pair, rng)
}

/// Sample excess kurtosis, used to contrast residual noise with Gaussian.
pub fn excess_kurtosis(grid: &Grid) -> f64 {
    let m = grid.mean();
    let n = grid.len() as f64;
    let m2 = grid.as_slice().iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = grid.as_slice().iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}
