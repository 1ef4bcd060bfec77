//! Connected-component labeling and binary dilation.

use serde::{Deserialize, Serialize};

use crate::volume::{BinaryMask3D, Grid};

/// Neighborhood used for labeling and dilation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Connectivity {
    /// 3×3 in-plane neighborhood; slices are independent.
    Slice8,
    /// Full 3×3×3 neighborhood.
    Volume26,
}

impl Connectivity {
    fn reaches_z(self) -> bool {
        matches!(self, Connectivity::Volume26)
    }
}

/// Labeled components of a mask. Label 0 is background; components are `1..=count`
/// numbered in storage order of their first voxel.
#[derive(Clone, Debug)]
pub struct Components {
    grid: Grid,
    labels: Vec<u32>,
    sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Voxel count of component `label` (1-based).
    pub fn size(&self, label: u32) -> usize {
        self.sizes[label as usize - 1]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn mask(&self, label: u32) -> BinaryMask3D {
        let data = self.labels.iter().map(|&l| l == label).collect();
        BinaryMask3D::new(self.grid.clone(), data).expect("label grid")
    }

    /// Linear indices for every component, indexed by `label - 1`.
    pub fn voxel_lists(&self) -> Vec<Vec<usize>> {
        let mut lists: Vec<Vec<usize>> = self.sizes.iter().map(|&n| Vec::with_capacity(n)).collect();
        for (idx, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                lists[l as usize - 1].push(idx);
            }
        }
        lists
    }
}

/// Label maximal connected sets of `mask` under `connectivity`.
pub fn connected_components(mask: &BinaryMask3D, connectivity: Connectivity) -> Components {
    let grid = mask.grid().clone();
    let [nx, ny, nz] = grid.dims();
    let data = mask.data();
    let mut labels = vec![0u32; data.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    let dz: &[isize] = if connectivity.reaches_z() { &[-1, 0, 1] } else { &[0] };

    for start in 0..data.len() {
        if !data[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        stack.push(start);
        let mut size = 0usize;
        while let Some(idx) = stack.pop() {
            size += 1;
            let [i, j, k] = grid.coords(idx);
            for &oz in dz {
                let kk = k as isize + oz;
                if kk < 0 || kk >= nz as isize {
                    continue;
                }
                for oy in -1isize..=1 {
                    let jj = j as isize + oy;
                    if jj < 0 || jj >= ny as isize {
                        continue;
                    }
                    for ox in -1isize..=1 {
                        let ii = i as isize + ox;
                        if ii < 0 || ii >= nx as isize {
                            continue;
                        }
                        let n = grid.index(ii as usize, jj as usize, kk as usize);
                        if data[n] && labels[n] == 0 {
                            labels[n] = label;
                            stack.push(n);
                        }
                    }
                }
            }
        }
        sizes.push(size);
    }
    Components { grid, labels, sizes }
}

/// Binary dilation by the connectivity's structuring element, `rounds` times.
pub fn dilate(mask: &BinaryMask3D, rounds: usize, connectivity: Connectivity) -> BinaryMask3D {
    let mut out = mask.clone();
    if rounds == 0 {
        return out;
    }
    let [nx, ny, nz] = mask.dims();
    let strides = [1usize, nx, nx * ny];
    let mut scratch = vec![false; out.data().len()];
    let axes: &[usize] = if connectivity.reaches_z() { &[0, 1, 2] } else { &[0, 1] };
    for _ in 0..rounds {
        // The square/cube element is separable into per-axis 3-wide maxima.
        for &axis in axes {
            let n = [nx, ny, nz][axis];
            let stride = strides[axis];
            let src = out.data();
            for (idx, dst) in scratch.iter_mut().enumerate() {
                let pos = (idx / stride) % n;
                let mut v = src[idx];
                if !v && pos > 0 {
                    v = src[idx - stride];
                }
                if !v && pos + 1 < n {
                    v = src[idx + stride];
                }
                *dst = v;
            }
            out.data_mut().copy_from_slice(&scratch);
        }
    }
    out
}
