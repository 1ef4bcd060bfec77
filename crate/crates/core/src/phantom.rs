//! Procedural brain phantoms with known tissue and lesion ground truth.
//!
//! The brain is a layered ellipsoid (CSF shell, GM ribbon, WM core) with two ventricles.
//! Ellipsoidal lesions sit inside WM; they are hyperintense on FLAIR and hypointense on T1
//! with an intensity that fades towards the lesion border. Tissue means are jittered per
//! seed and every voxel receives Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask3D, Grid, Volume3D};

/// Mean and noise standard deviation of one tissue class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TissueIntensity {
    pub mean: f64,
    pub std: f64,
}

const fn ti(mean: f64, std: f64) -> TissueIntensity {
    TissueIntensity { mean, std }
}

/// Intensities of one modality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityIntensities {
    pub background: TissueIntensity,
    pub csf: TissueIntensity,
    pub gm: TissueIntensity,
    pub wm: TissueIntensity,
    /// Added to WM at the lesion centre (positive on FLAIR, negative on T1).
    pub lesion_offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Semi-axes of the outer brain surface in mm.
    pub brain_radii_mm: [f64; 3],
    pub t1: ModalityIntensities,
    pub flair: ModalityIntensities,
    /// Inclusive range of lesion counts.
    pub lesion_count: [usize; 2],
    pub lesion_radius_mm: [f64; 2],
    /// Relative per-seed jitter of every tissue mean.
    pub intensity_jitter: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [48, 48, 8],
            spacing: [1.0, 1.0, 2.0],
            brain_radii_mm: [21.0, 22.5, 10.0],
            t1: ModalityIntensities {
                background: ti(0.0, 0.0),
                csf: ti(40.0, 3.0),
                gm: ti(90.0, 4.0),
                wm: ti(120.0, 4.0),
                lesion_offset: -40.0,
            },
            flair: ModalityIntensities {
                background: ti(0.0, 0.0),
                csf: ti(30.0, 3.0),
                gm: ti(100.0, 4.0),
                wm: ti(80.0, 4.0),
                lesion_offset: 55.0,
            },
            lesion_count: [4, 7],
            lesion_radius_mm: [1.5, 3.0],
            intensity_jitter: 0.06,
        }
    }
}

impl PhantomSpec {
    /// Same anatomy without lesions.
    pub fn lesion_free(&self) -> Self {
        Self { lesion_count: [0, 0], ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("phantom: {m}")));
        if self.dims.contains(&0) || self.spacing.iter().any(|&s| !(s > 0.0)) {
            return bad("dims and spacing must be positive");
        }
        if self.brain_radii_mm.iter().any(|&r| !(r > 0.0)) {
            return bad("brain radii must be positive");
        }
        if self.lesion_count[0] > self.lesion_count[1] || !(self.lesion_radius_mm[0] > 0.0)
            || self.lesion_radius_mm[0] > self.lesion_radius_mm[1]
        {
            return bad("lesion ranges must be ordered and positive");
        }
        if !(0.0..0.5).contains(&self.intensity_jitter) {
            return bad("intensity_jitter must lie in [0, 0.5)");
        }
        let (t, f) = (&self.t1, &self.flair);
        if !(t.csf.mean < t.gm.mean && t.gm.mean < t.wm.mean && t.lesion_offset < 0.0) {
            return bad("T1 needs CSF < GM < WM and a negative lesion offset");
        }
        if !(f.csf.mean < f.wm.mean && f.wm.mean < f.gm.mean && f.lesion_offset > 0.0) {
            return bad("FLAIR needs CSF < WM < GM and a positive lesion offset");
        }
        Ok(())
    }
}

/// Generated volumes and their ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub t1: Volume3D,
    pub flair: Volume3D,
    pub lesion: BinaryMask3D,
    pub gm: BinaryMask3D,
    /// WM including lesions.
    pub wm: BinaryMask3D,
    pub brain: BinaryMask3D,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Tissue {
    Background,
    Csf,
    Gm,
    Wm,
}

const PLACEMENT_ATTEMPTS: usize = 500;

fn jitter(rng: &mut impl Rng, m: &ModalityIntensities, amount: f64) -> ModalityIntensities {
    let mut j = |t: TissueIntensity| TissueIntensity { mean: t.mean * (1.0 + rng.random_range(-amount..=amount)), ..t };
    ModalityIntensities {
        background: m.background,
        csf: j(m.csf),
        gm: j(m.gm),
        wm: j(m.wm),
        lesion_offset: m.lesion_offset * (1.0 + rng.random_range(-amount..=amount)),
    }
}

struct Lesion {
    centre: [f64; 3],
    radius: f64,
}

/// Deterministic phantom for `(spec, seed)`.
pub fn make_phantom(spec: &PhantomSpec, seed: u64) -> Result<Phantom> {
    spec.validate()?;
    let grid = Grid::with_spacing(spec.dims, spec.spacing)?;
    let sp = spec.spacing;
    let centre: [f64; 3] = std::array::from_fn(|a| (spec.dims[a] as f64 - 1.0) * sp[a] / 2.0);
    let pos = |i: usize, j: usize, k: usize| [i as f64 * sp[0], j as f64 * sp[1], k as f64 * sp[2]];
    let rho = |p: [f64; 3]| {
        (0..3).map(|a| ((p[a] - centre[a]) / spec.brain_radii_mm[a]).powi(2)).sum::<f64>().sqrt()
    };
    let ventricle = |p: [f64; 3]| {
        [-4.0, 4.0].iter().any(|&dx| {
            let q = [(p[0] - centre[0] - dx) / 2.5, (p[1] - centre[1]) / 6.0, (p[2] - centre[2]) / 4.0];
            q.iter().map(|v| v * v).sum::<f64>() <= 1.0
        })
    };
    let tissue = |p: [f64; 3]| {
        let r = rho(p);
        if r > 1.0 {
            Tissue::Background
        } else if r > 0.88 || ventricle(p) {
            Tissue::Csf
        } else if r > 0.72 {
            Tissue::Gm
        } else {
            Tissue::Wm
        }
    };
    let labels: Vec<Tissue> = (0..grid.len())
        .map(|idx| {
            let [i, j, k] = grid.coords(idx);
            tissue(pos(i, j, k))
        })
        .collect();
    let wm = BinaryMask3D::new(grid.clone(), labels.iter().map(|&t| t == Tissue::Wm).collect())?;
    let gm = BinaryMask3D::new(grid.clone(), labels.iter().map(|&t| t == Tissue::Gm).collect())?;
    let brain = BinaryMask3D::new(grid.clone(), labels.iter().map(|&t| t != Tissue::Background).collect())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t1 = jitter(&mut rng, &spec.t1, spec.intensity_jitter);
    let flair = jitter(&mut rng, &spec.flair, spec.intensity_jitter);

    // lesions: ellipsoid (in mm) plus a one-voxel margin must lie in WM and clear of others
    let mut lesion_rng = ChaCha8Rng::seed_from_u64(seed);
    lesion_rng.set_stream(1);
    let n_lesions = lesion_rng.random_range(spec.lesion_count[0]..=spec.lesion_count[1]);
    let wm_voxels: Vec<usize> = wm.indices().collect();
    let mut lesions: Vec<Lesion> = Vec::with_capacity(n_lesions);
    let mut lesion = BinaryMask3D::empty(grid.clone());
    let mut profile = vec![0.0f64; grid.len()];
    for index in 0..n_lesions {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            if wm_voxels.is_empty() {
                break;
            }
            let [ci, cj, ck] = grid.coords(wm_voxels[lesion_rng.random_range(0..wm_voxels.len())]);
            let c = pos(ci, cj, ck);
            let radius = lesion_rng.random_range(spec.lesion_radius_mm[0]..=spec.lesion_radius_mm[1]);
            let clear = lesions.iter().all(|l| {
                let d = (0..3).map(|a| (l.centre[a] - c[a]).powi(2)).sum::<f64>().sqrt();
                d > l.radius + radius + 2.0 * sp[0].max(sp[1])
            });
            if !clear {
                continue;
            }
            let reach: [usize; 3] = std::array::from_fn(|a| ((radius + sp[a]) / sp[a]).ceil() as usize);
            let mut inside = Vec::new();
            let mut fits = true;
            'scan: for k in ck.saturating_sub(reach[2])..=(ck + reach[2]).min(spec.dims[2] - 1) {
                for j in cj.saturating_sub(reach[1])..=(cj + reach[1]).min(spec.dims[1] - 1) {
                    for i in ci.saturating_sub(reach[0])..=(ci + reach[0]).min(spec.dims[0] - 1) {
                        let p = pos(i, j, k);
                        let d = (0..3).map(|a| (p[a] - c[a]).powi(2)).sum::<f64>().sqrt();
                        let idx = grid.index(i, j, k);
                        let near = (0..3).all(|a| (p[a] - c[a]).abs() <= radius + sp[a]);
                        if d <= radius {
                            inside.push((idx, d));
                        }
                        if (d <= radius || near && d <= radius + sp[0]) && labels[idx] != Tissue::Wm {
                            fits = false;
                            break 'scan;
                        }
                    }
                }
            }
            // boundary voxels of the volume must also be WM-backed
            if !fits || inside.is_empty() {
                continue;
            }
            for (idx, d) in inside {
                lesion.data_mut()[idx] = true;
                profile[idx] = 1.0 - 0.4 * (d / radius).powi(2);
            }
            lesions.push(Lesion { centre: c, radius });
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::PlacementFailed { index, attempts: PLACEMENT_ATTEMPTS });
        }
    }

    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(2);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut render = |m: &ModalityIntensities| -> Result<Volume3D> {
        let data = labels
            .iter()
            .zip(&profile)
            .map(|(&t, &p)| {
                let class = match t {
                    Tissue::Background => m.background,
                    Tissue::Csf => m.csf,
                    Tissue::Gm => m.gm,
                    Tissue::Wm => m.wm,
                };
                let z: f64 = std_normal.sample(&mut noise_rng);
                (class.mean + p * m.lesion_offset + class.std * z).max(0.0)
            })
            .collect();
        Volume3D::new(grid.clone(), data)
    };
    let t1_vol = render(&t1)?;
    let flair_vol = render(&flair)?;
    Ok(Phantom { t1: t1_vol, flair: flair_vol, lesion, gm, wm, brain })
}
