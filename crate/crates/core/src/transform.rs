//! Spatial transforms and resampling onto a target grid.
//!
//! A [`SpatialTransform`] maps source world coordinates to target world coordinates.
//! Resampling pulls values: for a target voxel `v` with world position `p = A_t v`,
//! the sampled source position is `A_s⁻¹ T⁻¹ (p + d(v))`, where `d` is the optional
//! displacement field (mm) defined on the target grid.

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask3D, Grid, Volume3D};

const SNAP: f64 = 1e-6;

/// Dense per-voxel displacement in mm on a fixed grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    grid: Grid,
    vectors: Vec<[f64; 3]>,
}

impl DisplacementField {
    pub fn new(grid: Grid, vectors: Vec<[f64; 3]>) -> Result<Self> {
        if vectors.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![grid.len()],
                found: vec![vectors.len()],
            });
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTransform("displacement field has non-finite entries".into()));
        }
        Ok(Self { grid, vectors })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.vectors
    }
}

/// Source→target world transform: affine plus optional displacement field.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialTransform {
    pub affine: Matrix4<f64>,
    pub displacement: Option<DisplacementField>,
}

impl Default for SpatialTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SpatialTransform {
    pub fn identity() -> Self {
        Self { affine: Matrix4::identity(), displacement: None }
    }

    pub fn from_affine(affine: Matrix4<f64>) -> Self {
        Self { affine, displacement: None }
    }

    /// Pure translation in mm.
    pub fn translation(t: [f64; 3]) -> Self {
        let mut a = Matrix4::identity();
        a[(0, 3)] = t[0];
        a[(1, 3)] = t[1];
        a[(2, 3)] = t[2];
        Self::from_affine(a)
    }

    pub fn with_displacement(mut self, field: DisplacementField) -> Self {
        self.displacement = Some(field);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.affine.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTransform("affine has non-finite entries".into()));
        }
        if self.affine.try_inverse().is_none() {
            return Err(Error::InvalidTransform("affine is not invertible".into()));
        }
        Ok(())
    }
}

/// Computes fractional source voxel coordinates for each target voxel.
struct Mapper<'a> {
    to_source: Matrix4<f64>,
    target_affine: Matrix4<f64>,
    target: &'a Grid,
    displacement: Option<&'a DisplacementField>,
}

impl<'a> Mapper<'a> {
    fn new(source: &Grid, transform: &'a SpatialTransform, target: &'a Grid) -> Result<Self> {
        transform.validate()?;
        let inv_t = transform.affine.try_inverse().expect("validated");
        let inv_s = source
            .affine()
            .try_inverse()
            .ok_or_else(|| Error::InvalidTransform("source orientation not invertible".into()))?;
        if let Some(d) = &transform.displacement {
            target.ensure_matches(d.grid(), "displacement field vs target grid")?;
        }
        Ok(Self {
            to_source: inv_s * inv_t,
            target_affine: *target.affine(),
            target,
            displacement: transform.displacement.as_ref(),
        })
    }

    fn source_coords(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.target.coords(idx);
        let mut p = self.target_affine * Vector4::new(i as f64, j as f64, k as f64, 1.0);
        if let Some(d) = self.displacement {
            let v = d.vectors()[idx];
            p.x += v[0];
            p.y += v[1];
            p.z += v[2];
        }
        let s = self.to_source * p;
        [snap(s.x), snap(s.y), snap(s.z)]
    }
}

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < SNAP {
        r
    } else {
        x
    }
}

/// Trilinear resampling; target voxels that map outside the source get 0.
pub fn resample(source: &Volume3D, transform: &SpatialTransform, target: &Grid) -> Result<Volume3D> {
    let mapper = Mapper::new(source.grid(), transform, target)?;
    let dims = source.dims();
    let sg = source.grid();
    let src = source.data();
    let data = (0..target.len())
        .map(|idx| {
            let c = mapper.source_coords(idx);
            let mut base = [0usize; 3];
            let mut frac = [0.0f64; 3];
            for a in 0..3 {
                if !(c[a] >= 0.0 && c[a] <= (dims[a] - 1) as f64) {
                    return 0.0;
                }
                let f = c[a].floor();
                base[a] = f as usize;
                frac[a] = c[a] - f;
            }
            let mut acc = 0.0;
            for corner in 0..8usize {
                let mut w = 1.0;
                let mut pos = [0usize; 3];
                for a in 0..3 {
                    let up = (corner >> a) & 1 == 1;
                    w *= if up { frac[a] } else { 1.0 - frac[a] };
                    pos[a] = base[a] + up as usize;
                }
                if w != 0.0 {
                    acc += w * src[sg.index(pos[0], pos[1], pos[2])];
                }
            }
            acc
        })
        .collect();
    Volume3D::new(target.clone(), data)
}

/// Nearest-neighbor resampling of a mask; the output is strictly binary.
pub fn resample_mask(source: &BinaryMask3D, transform: &SpatialTransform, target: &Grid) -> Result<BinaryMask3D> {
    let mapper = Mapper::new(source.grid(), transform, target)?;
    let dims = source.dims();
    let sg = source.grid();
    let src = source.data();
    let data = (0..target.len())
        .map(|idx| {
            let c = mapper.source_coords(idx);
            let mut pos = [0usize; 3];
            for a in 0..3 {
                let r = (c[a] + 0.5).floor();
                if !(r >= 0.0 && r <= (dims[a] - 1) as f64) {
                    return false;
                }
                pos[a] = r as usize;
            }
            src[sg.index(pos[0], pos[1], pos[2])]
        })
        .collect();
    BinaryMask3D::new(target.clone(), data)
}
