//! Whole-volume inference by overlapping tiles.

use crate::error::{Error, Result};
use crate::masking::IntensityLevelBank;
use crate::nn::{Real, Tensor};
use crate::normalize::NormalizationParams;
use crate::volume::{BinaryMask3D, Volume3D};

use super::patches::{input_window, origins, PatchOrigin};
use super::GeneratorModel;

/// Generate `[T1, FLAIR]` from filled images and a (possibly edited) bank.
///
/// Every axial window at the configured stride that touches the brain is passed through
/// the fused pathway; overlapping predictions are averaged. Brain voxels receive the
/// denormalized prediction, all other voxels are copied from the filled input.
pub fn synthesize<T: Real>(
    model: &GeneratorModel<T>,
    filled: [&Volume3D; 2],
    bank: &IntensityLevelBank,
    brain: &BinaryMask3D,
    norm: [NormalizationParams; 2],
) -> Result<[Volume3D; 2]> {
    let grid = brain.grid();
    grid.ensure_matches(filled[0].grid(), "t1/brain")?;
    grid.ensure_matches(filled[1].grid(), "flair/brain")?;
    grid.ensure_matches(bank.grid(), "bank/brain")?;
    let c = model.config();
    if bank.len() != c.bands() {
        return Err(Error::InvalidConfig(format!("bank has {} bands but the generator expects {}", bank.len(), c.bands())));
    }
    let dims = grid.dims();
    let p = c.patch_size;
    let images: Vec<Vec<f32>> =
        (0..2).map(|m| filled[m].data().iter().map(|&v| norm[m].forward(v) as f32).collect()).collect();
    let brain_data = brain.data();

    let mut tiles = Vec::new();
    for slice in 0..dims[2] {
        for y in origins(dims[1], c.patch_stride) {
            for x in origins(dims[0], c.patch_stride) {
                let origin = PatchOrigin { slice, x, y };
                let touches_brain = (y..(y + p).min(dims[1]))
                    .any(|yy| (x..(x + p).min(dims[0])).any(|xx| brain_data[grid.index(xx, yy, slice)]));
                if touches_brain {
                    tiles.push(origin);
                }
            }
        }
    }

    let n = grid.len();
    let mut sums = [vec![0.0f64; n], vec![0.0f64; n]];
    let mut counts = vec![0u32; n];
    let plane = p * p;
    let mut buf = vec![0.0f32; c.input_channels * plane];
    for chunk in tiles.chunks(c.batch_size) {
        let mut inputs = [
            Tensor::<T>::zeros(c.input_channels, chunk.len(), p, p),
            Tensor::<T>::zeros(c.input_channels, chunk.len(), p, p),
        ];
        for (s, &origin) in chunk.iter().enumerate() {
            for m in 0..2 {
                input_window(&images[m], bank, dims, origin, p, &mut buf);
                for ch in 0..c.input_channels {
                    for (d, &v) in inputs[m].plane_mut(ch, s).iter_mut().zip(&buf[ch * plane..(ch + 1) * plane]) {
                        *d = T::of(v as f64);
                    }
                }
            }
        }
        let outputs = model.infer(&inputs[0], &inputs[1])?;
        for (s, origin) in chunk.iter().enumerate() {
            for r in 0..p {
                let y = origin.y + r;
                if y >= dims[1] {
                    break;
                }
                for col in 0..p {
                    let x = origin.x + col;
                    if x >= dims[0] {
                        break;
                    }
                    let idx = grid.index(x, y, origin.slice);
                    for m in 0..2 {
                        sums[m][idx] += outputs[m].plane(0, s)[r * p + col].f64();
                    }
                    counts[idx] += 1;
                }
            }
        }
    }

    let mut result = [filled[0].clone(), filled[1].clone()];
    for m in 0..2 {
        let out = result[m].data_mut();
        for idx in brain.indices() {
            // every brain voxel lies in at least one tile that touches the brain
            out[idx] = norm[m].inverse(sums[m][idx] / counts[idx] as f64);
        }
    }
    Ok(result)
}
