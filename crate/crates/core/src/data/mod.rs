//! 4D volumes, slice pairing, synthetic phantoms and noise simulation.

pub mod dfv;
pub mod fft;
pub mod noise;
pub mod phantom;
pub mod pgm;

use crate::error::{out_of_range, Error, Result};
use crate::grid::Grid;

pub use dfv::{load, save};
pub use noise::{simulate_noise, NoiseMode, SimulatedPair};
pub use phantom::{make_phantom, phantom_masks};

/// `l` volumes of `d` slices, each `h` rows by `w` columns.
///
/// Values are stored as `f32` (the on-disk precision) so that a save/load
/// round trip is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume4D {
    w: usize,
    h: usize,
    d: usize,
    l: usize,
    values: Vec<f32>,
    normalized: bool,
}

impl Volume4D {
    pub fn new(
        w: usize,
        h: usize,
        d: usize,
        l: usize,
        values: Vec<f32>,
        normalized: bool,
    ) -> Result<Self> {
        if w == 0 || h == 0 || d == 0 || l == 0 {
            return Err(Error::Config(format!(
                "volume dimensions must be positive, got {w}x{h}x{d}x{l}"
            )));
        }
        let n = w * h * d * l;
        if values.len() != n {
            return Err(Error::Format(format!(
                "expected {n} values for {w}x{h}x{d}x{l}, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("volume value at offset {pos}")));
        }
        Ok(Self {
            w,
            h,
            d,
            l,
            values,
            normalized,
        })
    }

    pub fn zeros(w: usize, h: usize, d: usize, l: usize) -> Result<Self> {
        Self::new(w, h, d, l, vec![0.0; w * h * d * l], false)
    }

    /// `(w, h, d, l)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.w, self.h, self.d, self.l)
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn slices(&self) -> usize {
        self.d
    }

    pub fn volumes(&self) -> usize {
        self.l
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn offset(&self, j: usize, i: usize, r: usize, c: usize) -> usize {
        ((j * self.d + i) * self.h + r) * self.w + c
    }

    fn check_index(&self, i: usize, j: usize) -> Result<()> {
        if i >= self.d {
            return Err(out_of_range("slice index", i, 0, self.d - 1));
        }
        if j >= self.l {
            return Err(out_of_range("volume index", j, 0, self.l - 1));
        }
        Ok(())
    }

    /// Slice `i` of volume `j` as an `h x w` grid.
    pub fn slice(&self, i: usize, j: usize) -> Result<Grid> {
        self.check_index(i, j)?;
        let start = self.offset(j, i, 0, 0);
        let data = self.values[start..start + self.h * self.w]
            .iter()
            .map(|&v| v as f64)
            .collect();
        Grid::from_vec(self.h, self.w, data)
    }

    /// Overwrites slice `i` of volume `j`; values are rounded to `f32`.
    pub fn set_slice(&mut self, i: usize, j: usize, grid: &Grid) -> Result<()> {
        self.check_index(i, j)?;
        if grid.shape() != (self.h, self.w) {
            return Err(Error::ShapeMismatch {
                expected: (self.h, self.w),
                got: grid.shape(),
            });
        }
        if !grid.is_finite() {
            return Err(Error::NonFinite(format!("slice ({i}, {j})")));
        }
        let start = self.offset(j, i, 0, 0);
        for (dst, &src) in self.values[start..start + self.h * self.w]
            .iter_mut()
            .zip(grid.as_slice())
        {
            *dst = src as f32;
        }
        Ok(())
    }

    pub fn with_normalized_flag(mut self, normalized: bool) -> Self {
        self.normalized = normalized;
        self
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Global affine map of `[min, max]` onto `[-1, 1]`.
    pub fn normalize(&self) -> Result<Volume4D> {
        let (lo, hi) = self.min_max();
        if !(hi > lo) {
            return Err(Error::Config(
                "cannot normalize a constant volume (zero range)".into(),
            ));
        }
        let (lo, hi) = (lo as f64, hi as f64);
        let span = hi - lo;
        let values = self
            .values
            .iter()
            .map(|&v| ((v as f64 - lo) / span * 2.0 - 1.0) as f32)
            .collect();
        Volume4D::new(self.w, self.h, self.d, self.l, values, true)
    }

    /// Pairs slice `i` of volume `j` with the same slice of volume `j - 1`,
    /// wrapping to the last volume when `j = 0`.
    pub fn slice_pair(&self, i: usize, j: usize) -> Result<SlicePair> {
        if self.l < 2 {
            return Err(Error::Config(
                "slice pairing needs at least two volumes".into(),
            ));
        }
        self.check_index(i, j)?;
        let prev = (j + self.l - 1) % self.l;
        Ok(SlicePair {
            x: self.slice(i, j)?,
            x_prime: self.slice(i, prev)?,
            slice: i,
            volume: j,
        })
    }
}

/// Two independent measurements of the same slice: `x` is the target,
/// `x_prime` comes from the preceding volume.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicePair {
    pub x: Grid,
    pub x_prime: Grid,
    pub slice: usize,
    pub volume: usize,
}

impl SlicePair {
    pub fn new(x: Grid, x_prime: Grid, slice: usize, volume: usize) -> Result<Self> {
        x.ensure_same_shape(&x_prime)?;
        Ok(Self {
            x,
            x_prime,
            slice,
            volume,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.x.shape()
    }
}
