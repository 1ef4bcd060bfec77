//! In-painting of hyperintense regions with WM-like intensities.
//!
//! Every 8-connected WMH region of every axial slice is dilated; the first ring around the
//! region provides a WM intensity sample whose mean and standard deviation drive i.i.d.
//! normal draws for the region voxels. The filled regions and their rings are then
//! smoothed in-plane.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_smooth;
use crate::morphology::{connected_components, Connectivity};
use crate::volume::{BinaryMask3D, Volume3D};

#[derive(Clone, Debug)]
pub struct FillConfig {
    /// Rings grown around each region; the smoothing footprint covers all of them.
    pub dilation_rounds: usize,
    /// Per-axis Gaussian width in mm. `None` means one voxel in-plane, none through-plane.
    pub smoothing_sigma_mm: Option<[f64; 3]>,
    pub rng_seed: u64,
    /// Restricts the WM sample to this mask when present.
    pub wm_mask: Option<BinaryMask3D>,
    /// Brain extent for the slice-wide fallback; voxels > 0 when absent.
    pub brain_mask: Option<BinaryMask3D>,
}

impl Default for FillConfig {
    fn default() -> Self {
        Self { dilation_rounds: 2, smoothing_sigma_mm: None, rng_seed: 0, wm_mask: None, brain_mask: None }
    }
}

impl FillConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { rng_seed: seed, ..Self::default() }
    }

    fn validate(&self, volume: &Volume3D) -> Result<()> {
        if self.dilation_rounds < 1 {
            return Err(Error::InvalidConfig("dilation_rounds must be at least 1".into()));
        }
        if let Some(s) = self.smoothing_sigma_mm {
            if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidConfig(format!("smoothing sigma must be finite and >= 0: {s:?}")));
            }
        }
        if let Some(m) = &self.wm_mask {
            volume.grid().ensure_matches(m.grid(), "volume/wm mask")?;
        }
        if let Some(m) = &self.brain_mask {
            volume.grid().ensure_matches(m.grid(), "volume/brain mask")?;
        }
        Ok(())
    }

    fn sigma_mm(&self, volume: &Volume3D) -> [f64; 3] {
        let sp = volume.grid().spacing();
        self.smoothing_sigma_mm.unwrap_or([sp[0], sp[1], 0.0])
    }
}

/// What happened to one region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionFill {
    pub slice: usize,
    pub region: usize,
    pub voxels: usize,
    pub sample_size: usize,
    pub mean: f64,
    pub std: f64,
    pub fallback: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FillReport {
    pub regions: Vec<RegionFill>,
    pub changed_footprint: usize,
}

impl FillReport {
    pub fn fallback_count(&self) -> usize {
        self.regions.iter().filter(|r| r.fallback).count()
    }
}

fn sample_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let rough = values.iter().sum::<f64>() / n;
    // second pass removes the rounding bias of the naive sum
    let mean = rough + values.iter().map(|v| v - rough).sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Per-slice rings around one region, computed in a local window.
struct Rings {
    /// Index lists into the volume, one per dilation round.
    rings: Vec<Vec<usize>>,
}

fn grow_rings(region: &[usize], nx: usize, ny: usize, slice: usize, rounds: usize) -> Rings {
    let plane = nx * ny;
    let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
    for &idx in region {
        let r = idx - slice * plane;
        let (x, y) = (r % nx, r / nx);
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let bx0 = x0.saturating_sub(rounds);
    let by0 = y0.saturating_sub(rounds);
    let bx1 = (x1 + rounds).min(nx - 1);
    let by1 = (y1 + rounds).min(ny - 1);
    let (w, h) = (bx1 - bx0 + 1, by1 - by0 + 1);
    let mut cur = vec![false; w * h];
    for &idx in region {
        let r = idx - slice * plane;
        cur[(r % nx - bx0) + w * (r / nx - by0)] = true;
    }
    let mut rings = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let mut next = cur.clone();
        let mut ring = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if cur[x + w * y] {
                    continue;
                }
                let hit = (y.saturating_sub(1)..=(y + 1).min(h - 1))
                    .any(|yy| (x.saturating_sub(1)..=(x + 1).min(w - 1)).any(|xx| cur[xx + w * yy]));
                if hit {
                    next[x + w * y] = true;
                    ring.push((x + bx0) + nx * (y + by0) + slice * plane);
                }
            }
        }
        rings.push(ring);
        cur = next;
    }
    Rings { rings }
}

/// Replace WMH voxels with draws from the surrounding WM distribution, then smooth.
pub fn fill_wmh(volume: &Volume3D, wmh: &BinaryMask3D, config: &FillConfig) -> Result<(Volume3D, FillReport)> {
    volume.grid().ensure_matches(wmh.grid(), "volume/wmh")?;
    config.validate(volume)?;
    let mut report = FillReport::default();
    if wmh.is_empty() {
        return Ok((volume.clone(), report));
    }
    let [nx, ny, _] = volume.dims();
    let plane = nx * ny;
    let src = volume.data();
    let in_brain = |idx: usize| match &config.brain_mask {
        Some(b) => b.data()[idx],
        None => src[idx] > 0.0,
    };
    let components = connected_components(wmh, Connectivity::Slice8);
    let mut per_slice: Vec<Vec<Vec<usize>>> = vec![Vec::new(); volume.dims()[2]];
    for voxels in components.voxel_lists() {
        let slice = voxels[0] / plane;
        per_slice[slice].push(voxels);
    }

    let mut out = src.to_vec();
    let mut footprint = BinaryMask3D::empty(volume.grid().clone());
    for (slice, regions) in per_slice.iter().enumerate() {
        if regions.is_empty() {
            continue;
        }
        let slice_range = slice * plane..(slice + 1) * plane;
        let mut fallback_stats: Option<(f64, f64, usize)> = None;
        for (r, region) in regions.iter().enumerate() {
            let rings = grow_rings(region, nx, ny, slice, config.dilation_rounds);
            let sample: Vec<f64> = rings.rings[0]
                .iter()
                .copied()
                .filter(|&i| match &config.wm_mask {
                    Some(wm) => wm.data()[i],
                    None => !wmh.data()[i],
                })
                .map(|i| src[i])
                .collect();
            let (mean, std, n, fallback) = if sample.is_empty() {
                let (m, s, n) = match fallback_stats {
                    Some(st) => st,
                    None => {
                        let values: Vec<f64> =
                            slice_range.clone().filter(|&i| !wmh.data()[i] && in_brain(i)).map(|i| src[i]).collect();
                        if values.is_empty() {
                            return Err(Error::FullyWmhSlice { slice });
                        }
                        let (m, s) = sample_stats(&values);
                        fallback_stats = Some((m, s, values.len()));
                        (m, s, values.len())
                    }
                };
                (m, s, n, true)
            } else {
                let (m, s) = sample_stats(&sample);
                (m, s, sample.len(), false)
            };
            let normal = Normal::new(mean, std)
                .map_err(|e| Error::EstimationFailed(format!("fill distribution for slice {slice}: {e}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
            rng.set_stream(((slice as u64) << 32) | r as u64);
            for &idx in region {
                out[idx] = normal.sample(&mut rng).max(0.0);
                footprint.data_mut()[idx] = true;
            }
            for ring in &rings.rings {
                for &idx in ring {
                    footprint.data_mut()[idx] = true;
                }
            }
            report.regions.push(RegionFill { slice, region: r, voxels: region.len(), sample_size: n, mean, std, fallback });
        }
    }
    let smoothing_region = match &config.brain_mask {
        Some(b) => footprint.intersection(b)?,
        None => footprint,
    };
    // region voxels always get smoothed, even if a supplied brain mask misses them
    let smoothing_region = smoothing_region.union(wmh)?;
    report.changed_footprint = smoothing_region.count();
    let filled = volume.with_data(out)?;
    let smoothed = gaussian_smooth(&filled, config.sigma_mm(volume), &smoothing_region)?;
    Ok((smoothed, report))
}
