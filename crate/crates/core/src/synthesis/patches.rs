//! Subject preparation and axial patch extraction.

use crate::error::{Error, Result};
use crate::filling::{fill_wmh, FillConfig, FillReport};
use crate::masking::{build_bank, estimate_gm_stats, IntensityLevelBank};
use crate::nn::{Real, Tensor};
use crate::normalize::{normalize, NormalizationParams, DEFAULT_HIGH_PERCENTILE, DEFAULT_LOW_PERCENTILE};
use crate::volume::{BinaryMask3D, Volume3D};

use super::GeneratorConfig;

/// One subject ready for patch extraction: originals, filled images, bank and the
/// per-modality normalization computed from the originals over the brain.
#[derive(Clone, Debug)]
pub struct PreparedSubject {
    /// `[T1, FLAIR]` in raw intensities.
    pub original: [Volume3D; 2],
    /// `[T1, FLAIR]` with WMH in-painted, raw intensities.
    pub filled: [Volume3D; 2],
    pub bank: IntensityLevelBank,
    pub brain: BinaryMask3D,
    pub norm: [NormalizationParams; 2],
}

impl PreparedSubject {
    /// GM statistics, bank, filling of both modalities and normalization.
    /// The FLAIR fill uses `fill.rng_seed + 1` so the two modalities get independent draws.
    pub fn prepare(
        t1: &Volume3D,
        flair: &Volume3D,
        brain: &BinaryMask3D,
        gm: Option<&BinaryMask3D>,
        gammas: &[f64],
        fill: &FillConfig,
    ) -> Result<(Self, [FillReport; 2])> {
        t1.grid().ensure_matches(flair.grid(), "t1/flair")?;
        let stats = estimate_gm_stats(flair, gm, brain)?;
        let bank = build_bank(flair, &stats, gammas, brain)?;
        let (filled_t1, report_t1) = fill_wmh(t1, bank.wmh(), fill)?;
        let flair_fill = FillConfig { rng_seed: fill.rng_seed.wrapping_add(1), ..fill.clone() };
        let (filled_flair, report_flair) = fill_wmh(flair, bank.wmh(), &flair_fill)?;
        let (_, n1) = normalize(t1, brain, DEFAULT_LOW_PERCENTILE, DEFAULT_HIGH_PERCENTILE)?;
        let (_, n2) = normalize(flair, brain, DEFAULT_LOW_PERCENTILE, DEFAULT_HIGH_PERCENTILE)?;
        let subject = Self {
            original: [t1.clone(), flair.clone()],
            filled: [filled_t1, filled_flair],
            bank,
            brain: brain.clone(),
            norm: [n1, n2],
        };
        Ok((subject, [report_t1, report_flair]))
    }
}

/// Top-left corner of a patch on axial slice `slice`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PatchOrigin {
    pub slice: usize,
    pub x: usize,
    pub y: usize,
}

/// Inputs `[T1, FLAIR]` (`channels × P × P`, channel 0 = filled image, then bands in γ
/// order) and targets `[T1, FLAIR]` (`P × P`), all in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub inputs: [Vec<f32>; 2],
    pub targets: [Vec<f32>; 2],
    pub origin: PatchOrigin,
}

/// Window origins `0, stride, 2·stride, … < dim`.
pub(crate) fn origins(dim: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..dim).step_by(stride)
}

/// Copy a `P×P` window of slice `k` into `dst` (row = y), zero outside the volume.
pub(crate) fn copy_window(dims: [usize; 3], origin: PatchOrigin, p: usize, dst: &mut [f32], value: impl Fn(usize) -> f32) {
    let [nx, ny, _] = dims;
    let base = origin.slice * nx * ny;
    for r in 0..p {
        let y = origin.y + r;
        for c in 0..p {
            let x = origin.x + c;
            dst[r * p + c] = if x < nx && y < ny { value(base + x + nx * y) } else { 0.0 };
        }
    }
}

/// Normalized, clamped intensities of `volume`.
fn normalized(volume: &Volume3D, norm: &NormalizationParams) -> Vec<f32> {
    volume.data().iter().map(|&v| norm.forward(v) as f32).collect()
}

/// Fill the input channels of one modality for a window.
pub(crate) fn input_window(
    image: &[f32],
    bank: &IntensityLevelBank,
    dims: [usize; 3],
    origin: PatchOrigin,
    p: usize,
    dst: &mut [f32],
) {
    let plane = p * p;
    copy_window(dims, origin, p, &mut dst[..plane], |i| image[i]);
    for (b, mask) in bank.masks().iter().enumerate() {
        let m = mask.data();
        copy_window(dims, origin, p, &mut dst[(b + 1) * plane..(b + 2) * plane], |i| m[i] as u8 as f32);
    }
}

/// Axial `P×P` windows at the configured stride whose centre voxel lies in the brain.
/// Windows are emitted slice by slice, rows before columns.
pub fn extract_patches(subject: &PreparedSubject, config: &GeneratorConfig) -> Result<Vec<TrainingSample>> {
    config.validate()?;
    let grid = subject.brain.grid();
    for v in subject.original.iter().chain(&subject.filled) {
        grid.ensure_matches(v.grid(), "subject volumes/brain")?;
    }
    grid.ensure_matches(subject.bank.grid(), "bank/brain")?;
    if subject.brain.is_empty() {
        return Err(Error::EmptyMask("brain"));
    }
    if subject.bank.len() != config.bands() {
        return Err(Error::InvalidConfig(format!(
            "bank has {} bands but the generator expects {}",
            subject.bank.len(),
            config.bands()
        )));
    }
    let dims = grid.dims();
    let p = config.patch_size;
    let inputs: Vec<Vec<f32>> = (0..2).map(|m| normalized(&subject.filled[m], &subject.norm[m])).collect();
    let targets: Vec<Vec<f32>> = (0..2).map(|m| normalized(&subject.original[m], &subject.norm[m])).collect();
    let brain = subject.brain.data();
    let mut samples = Vec::new();
    for slice in 0..dims[2] {
        for y in origins(dims[1], config.patch_stride) {
            for x in origins(dims[0], config.patch_stride) {
                let (cx, cy) = (x + p / 2, y + p / 2);
                if cx >= dims[0] || cy >= dims[1] || !brain[grid.index(cx, cy, slice)] {
                    continue;
                }
                let origin = PatchOrigin { slice, x, y };
                let mut sample = TrainingSample {
                    inputs: [vec![0.0; config.input_channels * p * p], vec![0.0; config.input_channels * p * p]],
                    targets: [vec![0.0; p * p], vec![0.0; p * p]],
                    origin,
                };
                for m in 0..2 {
                    input_window(&inputs[m], &subject.bank, dims, origin, p, &mut sample.inputs[m]);
                    copy_window(dims, origin, p, &mut sample.targets[m], |i| targets[m][i]);
                }
                samples.push(sample);
            }
        }
    }
    Ok(samples)
}

/// Stack samples into `([T1 input, FLAIR input], [T1 target, FLAIR target])` tensors.
pub fn make_batch<T: Real>(samples: &[&TrainingSample], channels: usize, p: usize) -> ([Tensor<T>; 2], [Tensor<T>; 2]) {
    let n = samples.len();
    let plane = p * p;
    let build = |c: usize, get: &dyn Fn(&TrainingSample) -> &[f32]| {
        let mut t = Tensor::zeros(c, n, p, p);
        for (s, sample) in samples.iter().enumerate() {
            let src = get(sample);
            for ch in 0..c {
                for (d, &v) in t.plane_mut(ch, s).iter_mut().zip(&src[ch * plane..(ch + 1) * plane]) {
                    *d = T::of(v as f64);
                }
            }
        }
        t
    };
    let inputs = [build(channels, &|s| &s.inputs[0]), build(channels, &|s| &s.inputs[1])];
    let targets = [build(1, &|s| &s.targets[0]), build(1, &|s| &s.targets[1])];
    (inputs, targets)
}
