//! Geometry-aware 3-D scalar volumes and binary masks.
//!
//! Voxels are stored x-fastest (`i + nx * (j + ny * k)`), the NIfTI on-disk order.

use nalgebra::Matrix4;

use crate::error::{Error, Result};

/// Relative tolerance used when deciding whether two grids describe the same space.
pub const GRID_TOLERANCE: f64 = 1e-6;

/// Voxel lattice: counts, spacing in mm and voxel-to-world transform.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dims: [usize; 3],
    spacing: [f64; 3],
    affine: Matrix4<f64>,
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], affine: Matrix4<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidGeometry(format!("dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be finite and > 0, got {spacing:?}"
            )));
        }
        if affine.iter().any(|v| !v.is_finite()) || affine.try_inverse().is_none() {
            return Err(Error::InvalidGeometry("orientation matrix is not invertible".into()));
        }
        Ok(Self { dims, spacing, affine })
    }

    /// Axis-aligned grid whose affine is `diag(spacing, 1)`.
    pub fn with_spacing(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let affine = Matrix4::new(
            spacing[0], 0.0, 0.0, 0.0, //
            0.0, spacing[1], 0.0, 0.0, //
            0.0, 0.0, spacing[2], 0.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        Self::new(dims, spacing, affine)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &Matrix4<f64> {
        &self.affine
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Voxels per axial slice.
    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Same dims, spacing and orientation within [`GRID_TOLERANCE`] (relative).
    pub fn matches(&self, other: &Grid) -> bool {
        fn close(a: f64, b: f64) -> bool {
            (a - b).abs() <= GRID_TOLERANCE * a.abs().max(b.abs()).max(1.0)
        }
        self.dims == other.dims
            && self.spacing.iter().zip(&other.spacing).all(|(a, b)| close(*a, *b))
            && self.affine.iter().zip(other.affine.iter()).all(|(a, b)| close(*a, *b))
    }

    pub fn ensure_matches(&self, other: &Grid, what: &str) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{what}: dims {:?} / {:?}, spacing {:?} / {:?}",
                self.dims, other.dims, self.spacing, other.spacing
            )))
        }
    }
}

/// Scalar volume (raw or normalized intensities).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    grid: Grid,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![grid.len()],
                found: vec![data.len()],
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "non-finite intensity at voxel {:?}",
                grid.coords(pos)
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn filled(grid: Grid, value: f64) -> Self {
        let data = vec![value; grid.len()];
        Self { grid, data }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let [nx, ny, nz] = grid.dims();
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.grid.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.grid.index(i, j, k);
        self.data[idx] = v;
    }

    /// Replace the data keeping the grid; lengths must agree.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.grid.clone(), data)
    }

    /// Values of the voxels selected by `mask`, in storage order.
    pub fn values_in(&self, mask: &BinaryMask3D) -> Result<Vec<f64>> {
        self.grid.ensure_matches(mask.grid(), "volume/mask")?;
        Ok(mask.indices().map(|idx| self.data[idx]).collect())
    }
}

/// Boolean voxel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask3D {
    grid: Grid,
    data: Vec<bool>,
}

impl BinaryMask3D {
    pub fn new(grid: Grid, data: Vec<bool>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![grid.len()],
                found: vec![data.len()],
            });
        }
        Ok(Self { grid, data })
    }

    pub fn empty(grid: Grid) -> Self {
        let data = vec![false; grid.len()];
        Self { grid, data }
    }

    pub fn full(grid: Grid) -> Self {
        let data = vec![true; grid.len()];
        Self { grid, data }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let [nx, ny, nz] = grid.dims();
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { grid, data }
    }

    /// Voxels of `volume` satisfying `pred`.
    pub fn threshold(volume: &Volume3D, pred: impl Fn(f64) -> bool) -> Self {
        let data = volume.data().iter().map(|&v| pred(v)).collect();
        Self { grid: volume.grid().clone(), data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.data[self.grid.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: bool) {
        let idx = self.grid.index(i, j, k);
        self.data[idx] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Linear indices of set voxels.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.data.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    fn zip_with(&self, other: &Self, what: &str, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        self.grid.ensure_matches(&other.grid, what)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { grid: self.grid.clone(), data })
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mask union", |a, b| a || b)
    }

    pub fn intersection(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mask intersection", |a, b| a && b)
    }

    /// `self \ other`
    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mask difference", |a, b| a && !b)
    }

    pub fn is_subset_of(&self, other: &Self) -> Result<bool> {
        self.grid.ensure_matches(&other.grid, "mask subset")?;
        Ok(self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b))
    }

    pub fn intersects(&self, other: &Self) -> Result<bool> {
        self.grid.ensure_matches(&other.grid, "mask intersects")?;
        Ok(self.data.iter().zip(&other.data).any(|(&a, &b)| a && b))
    }

    /// Mask as 0/1 floats.
    pub fn to_volume(&self) -> Volume3D {
        let data = self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Volume3D { grid: self.grid.clone(), data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_geometry() {
        assert!(Grid::with_spacing([0, 2, 2], [1.0; 3]).is_err());
        assert!(Grid::with_spacing([2, 2, 2], [1.0, 0.0, 1.0]).is_err());
        assert!(Grid::new([2, 2, 2], [1.0; 3], Matrix4::zeros()).is_err());
    }

    #[test]
    fn index_round_trip() {
        let g = Grid::with_spacing([3, 4, 5], [1.0; 3]).unwrap();
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
    }

    #[test]
    fn grid_tolerance() {
        let a = Grid::with_spacing([2, 2, 2], [1.0, 1.0, 3.0]).unwrap();
        let b = Grid::with_spacing([2, 2, 2], [1.0, 1.0, 3.0 + 1e-9]).unwrap();
        let c = Grid::with_spacing([2, 2, 2], [1.0, 1.0, 3.1]).unwrap();
        assert!(a.matches(&b));
        assert!(!a.matches(&c));
    }

    #[test]
    fn non_finite_rejected() {
        let g = Grid::with_spacing([2, 1, 1], [1.0; 3]).unwrap();
        assert!(Volume3D::new(g, vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn set_algebra() {
        let g = Grid::with_spacing([4, 1, 1], [1.0; 3]).unwrap();
        let a = BinaryMask3D::new(g.clone(), vec![true, true, false, false]).unwrap();
        let b = BinaryMask3D::new(g, vec![false, true, true, false]).unwrap();
        assert_eq!(a.union(&b).unwrap().count(), 3);
        assert_eq!(a.intersection(&b).unwrap().count(), 1);
        assert_eq!(a.difference(&b).unwrap().data(), &[true, false, false, false]);
        assert!(!a.is_subset_of(&b).unwrap());
    }
}
