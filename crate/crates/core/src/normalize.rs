//! Percentile-clipped linear intensity normalization to `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask3D, Volume3D};

pub const DEFAULT_LOW_PERCENTILE: f64 = 1.0;
pub const DEFAULT_HIGH_PERCENTILE: f64 = 99.0;

/// Intensities at the clip percentiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub low: f64,
    pub high: f64,
}

impl NormalizationParams {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low.is_finite() && high.is_finite() && high > low) {
            return Err(Error::DegenerateRange { low, high });
        }
        Ok(Self { low, high })
    }

    #[inline]
    pub fn forward(&self, v: f64) -> f64 {
        (v.clamp(self.low, self.high) - self.low) / (self.high - self.low)
    }

    #[inline]
    pub fn inverse(&self, v: f64) -> f64 {
        self.low + v * (self.high - self.low)
    }

    pub fn apply(&self, volume: &Volume3D) -> Volume3D {
        let data = volume.data().iter().map(|&v| self.forward(v)).collect();
        volume.with_data(data).expect("same grid")
    }

    pub fn invert(&self, volume: &Volume3D) -> Volume3D {
        let data = volume.data().iter().map(|&v| self.inverse(v)).collect();
        volume.with_data(data).expect("same grid")
    }
}

/// Percentile of `sorted` (ascending) with linear interpolation between order statistics.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Clip to the `[p_lo, p_hi]` percentiles of the brain voxels and map linearly to `[0, 1]`.
pub fn normalize(
    volume: &Volume3D,
    brain: &BinaryMask3D,
    p_lo: f64,
    p_hi: f64,
) -> Result<(Volume3D, NormalizationParams)> {
    if !(0.0..=100.0).contains(&p_lo) || !(0.0..=100.0).contains(&p_hi) || p_lo >= p_hi {
        return Err(Error::InvalidConfig(format!("percentiles must satisfy 0 <= {p_lo} < {p_hi} <= 100")));
    }
    let mut values = volume.values_in(brain)?;
    if values.is_empty() {
        return Err(Error::EmptyMask("brain"));
    }
    values.sort_by(f64::total_cmp);
    let params = NormalizationParams::new(percentile_sorted(&values, p_lo), percentile_sorted(&values, p_hi))?;
    Ok((params.apply(volume), params))
}
