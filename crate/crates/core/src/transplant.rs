//! Lesion transplantation: resample a source subject's lesion mask and intensity bands
//! into a target space, copy the bands into the target bank around each lesion, and
//! re-synthesize the target with the edited bank.

use crate::error::Result;
use crate::masking::IntensityLevelBank;
use crate::morphology::{connected_components, dilate, Components, Connectivity};
use crate::nn::Real;
use crate::normalize::NormalizationParams;
use crate::synthesis::{synthesize, GeneratorModel};
use crate::transform::{resample_mask, SpatialTransform};
use crate::volume::{BinaryMask3D, Grid, Volume3D};

/// How payload bands replace target bands inside the graft region.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraftMode {
    /// Copy set and cleared bits.
    #[default]
    Overwrite,
    /// Only copy voxels the payload places in some band.
    Additive,
}

#[derive(Clone, Debug)]
pub struct TransplantSpec {
    /// Lesion mask in source space.
    pub source_lesion_mask: BinaryMask3D,
    pub source_bank: IntensityLevelBank,
    /// Source → target.
    pub transform: SpatialTransform,
    pub lesion_dilation_rounds: usize,
    pub mode: GraftMode,
}

impl TransplantSpec {
    pub fn new(source_lesion_mask: BinaryMask3D, source_bank: IntensityLevelBank, transform: SpatialTransform) -> Self {
        Self { source_lesion_mask, source_bank, transform, lesion_dilation_rounds: 1, mode: GraftMode::Overwrite }
    }
}

/// Source content expressed on the target grid.
#[derive(Clone, Debug)]
pub struct LesionPayload {
    /// Resampled lesion mask (not dilated): the ground truth of the synthetic image.
    pub lesion: BinaryMask3D,
    /// 26-connected lesion components of `lesion`.
    pub components: Components,
    /// Union of the dilated components: where bands are copied.
    pub region: BinaryMask3D,
    /// Resampled source bands, `IL_1..IL_n`.
    pub bands: Vec<BinaryMask3D>,
    pub mode: GraftMode,
}

impl LesionPayload {
    pub fn is_empty(&self) -> bool {
        self.lesion.is_empty()
    }

    /// Dilated mask of component `label` (1-based).
    pub fn dilated_component(&self, label: u32, rounds: usize) -> BinaryMask3D {
        dilate(&self.components.mask(label), rounds, Connectivity::Volume26)
    }

    /// Restrict the graft region, e.g. to the target brain.
    pub fn restrict_region(&mut self, mask: &BinaryMask3D) -> Result<()> {
        self.region = self.region.intersection(mask)?;
        Ok(())
    }
}

/// Nearest-neighbour resampling of the lesion mask and bands, component split and
/// dilation. An empty resampled lesion mask gives an empty payload (not an error).
pub fn resample_lesion_payload(spec: &TransplantSpec, target: &Grid) -> Result<LesionPayload> {
    spec.source_lesion_mask.grid().ensure_matches(spec.source_bank.grid(), "source lesion/bank")?;
    spec.transform.validate()?;
    let lesion = resample_mask(&spec.source_lesion_mask, &spec.transform, target)?;
    let bands = spec
        .source_bank
        .masks()
        .iter()
        .map(|m| resample_mask(m, &spec.transform, target))
        .collect::<Result<Vec<_>>>()?;
    let components = connected_components(&lesion, Connectivity::Volume26);
    let region = dilate(&lesion, spec.lesion_dilation_rounds, Connectivity::Volume26);
    Ok(LesionPayload { lesion, components, region, bands, mode: spec.mode })
}

/// Copy payload bands into `target` inside the payload region; the WMH mask is the union
/// of the resulting bands. Voxels outside the region are untouched.
pub fn graft_bank(target: &IntensityLevelBank, payload: &LesionPayload) -> Result<IntensityLevelBank> {
    target.grid().ensure_matches(payload.region.grid(), "target bank/payload")?;
    if payload.bands.len() != target.len() {
        return Err(crate::Error::InvalidConfig(format!(
            "payload has {} bands, target bank has {}",
            payload.bands.len(),
            target.len()
        )));
    }
    let mut out = target.clone();
    for idx in payload.region.indices() {
        let band = payload.bands.iter().position(|m| m.data()[idx]);
        match (payload.mode, band) {
            (GraftMode::Additive, None) => {}
            _ => out.assign(idx, band),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TransplantResult {
    /// Synthetic `[T1, FLAIR]`.
    pub images: [Volume3D; 2],
    /// Ground-truth lesion mask in target space.
    pub lesion: BinaryMask3D,
    pub bank: IntensityLevelBank,
    pub warnings: Vec<String>,
}

/// Resample → graft (restricted to the target brain) → synthesize.
pub fn transplant<T: Real>(
    model: &GeneratorModel<T>,
    filled: [&Volume3D; 2],
    target_bank: &IntensityLevelBank,
    brain: &BinaryMask3D,
    norm: [NormalizationParams; 2],
    spec: &TransplantSpec,
) -> Result<TransplantResult> {
    let mut payload = resample_lesion_payload(spec, brain.grid())?;
    let mut warnings = Vec::new();
    if payload.is_empty() {
        warnings.push("lesion mask is empty after resampling; nothing was grafted".to_string());
    }
    payload.restrict_region(brain)?;
    let bank = graft_bank(target_bank, &payload)?;
    let images = synthesize(model, filled, &bank, brain, norm)?;
    Ok(TransplantResult { images, lesion: payload.lesion, bank, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::{build_bank, TissueStats, DEFAULT_GAMMAS};
    use proptest::prelude::*;

    fn grid() -> Grid {
        Grid::with_spacing([16, 16, 6], [1.0, 1.0, 2.0]).unwrap()
    }

    fn blob(g: &Grid, c: [usize; 3], r: usize) -> BinaryMask3D {
        BinaryMask3D::from_fn(g.clone(), |i, j, k| i.abs_diff(c[0]) <= r && j.abs_diff(c[1]) <= r && k.abs_diff(c[2]) <= r / 2)
    }

    fn bank_with(g: &Grid, lesion: &BinaryMask3D, seed: u64) -> IntensityLevelBank {
        let flair = Volume3D::from_fn(g.clone(), |i, j, k| {
            if lesion.get(i, j, k) {
                106.0 + ((i * 7 + j * 3 + k + seed as usize) % 25) as f64
            } else {
                90.0
            }
        });
        build_bank(&flair, &TissueStats::new(100.0, 10.0).unwrap(), &DEFAULT_GAMMAS, &BinaryMask3D::full(g.clone())).unwrap()
    }

    #[test]
    fn identity_payload_keeps_components() {
        let g = grid();
        let lesion = blob(&g, [4, 4, 2], 1).union(&blob(&g, [11, 11, 3], 2)).unwrap();
        let spec = TransplantSpec::new(lesion.clone(), bank_with(&g, &lesion, 0), SpatialTransform::identity());
        let p = resample_lesion_payload(&spec, &g).unwrap();
        assert_eq!(p.lesion, lesion);
        assert_eq!(p.components.count(), 2);
        assert_eq!(p.region, dilate(&lesion, 1, Connectivity::Volume26));
        assert_eq!(p.bands, spec.source_bank.masks());
    }

    #[test]
    fn grafting_own_content_is_identity() {
        let g = grid();
        let lesion = blob(&g, [8, 8, 3], 2);
        let bank = bank_with(&g, &lesion, 0);
        let spec = TransplantSpec::new(lesion, bank.clone(), SpatialTransform::identity());
        let p = resample_lesion_payload(&spec, &g).unwrap();
        assert_eq!(graft_bank(&bank, &p).unwrap(), bank);
    }

    #[test]
    fn empty_payload_leaves_bank_unchanged() {
        let g = grid();
        let target = bank_with(&g, &blob(&g, [8, 8, 3], 2), 1);
        let source_bank = bank_with(&g, &BinaryMask3D::empty(g.clone()), 0);
        let spec = TransplantSpec::new(BinaryMask3D::empty(g.clone()), source_bank, SpatialTransform::identity());
        let p = resample_lesion_payload(&spec, &g).unwrap();
        assert!(p.is_empty());
        assert_eq!(graft_bank(&target, &p).unwrap(), target);
    }

    #[test]
    fn translated_graft_lands_shifted() {
        let g = grid();
        let lesion = blob(&g, [4, 4, 2], 1);
        let spec = TransplantSpec::new(lesion.clone(), bank_with(&g, &lesion, 0), SpatialTransform::translation([5.0, 6.0, 0.0]));
        let target = bank_with(&g, &BinaryMask3D::empty(g.clone()), 0);
        let p = resample_lesion_payload(&spec, &g).unwrap();
        assert_eq!(p.lesion.count(), lesion.count());
        assert!(p.lesion.get(9, 10, 2) && !p.lesion.get(4, 4, 2));
        let out = graft_bank(&target, &p).unwrap();
        assert_eq!(out.wmh(), &p.lesion);
    }

    #[test]
    fn additive_mode_keeps_target_bands() {
        let g = grid();
        let target_lesion = blob(&g, [8, 8, 3], 2);
        let target = bank_with(&g, &target_lesion, 3);
        let src_lesion = blob(&g, [8, 8, 3], 0);
        let mut spec = TransplantSpec::new(src_lesion.clone(), bank_with(&g, &src_lesion, 0), SpatialTransform::identity());
        spec.mode = GraftMode::Additive;
        let out = graft_bank(&target, &resample_lesion_payload(&spec, &g).unwrap()).unwrap();
        assert_eq!(out.wmh(), target.wmh());
        spec.mode = GraftMode::Overwrite;
        let out = graft_bank(&target, &resample_lesion_payload(&spec, &g).unwrap()).unwrap();
        assert!(out.wmh().count() < target.wmh().count());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn grafts_keep_bands_disjoint_and_local(seed in 0u64..1000, shift in -4i32..4, cx in 3usize..13, cy in 3usize..13) {
            let g = grid();
            let target = bank_with(&g, &blob(&g, [cy, cx, 2], 2), seed);
            let lesion = blob(&g, [cx, cy, 3], 1 + (seed % 2) as usize);
            let spec = TransplantSpec::new(lesion.clone(), bank_with(&g, &lesion, seed + 1), SpatialTransform::translation([shift as f64, 0.0, 0.0]));
            let p = resample_lesion_payload(&spec, &g).unwrap();
            let out = graft_bank(&target, &p).unwrap();
            prop_assert_eq!(out.overlap_count(), 0);
            let total: usize = out.masks().iter().map(|m| m.count()).sum();
            prop_assert_eq!(total, out.wmh().count());
            for idx in 0..g.len() {
                if !p.region.data()[idx] {
                    prop_assert_eq!(out.band_at(idx), target.band_at(idx));
                }
            }
            // resampled bands stay disjoint
            for idx in 0..g.len() {
                prop_assert!(p.bands.iter().filter(|m| m.data()[idx]).count() <= 1);
            }
        }
    }
}
