//! Shared fixtures for the criterion benchmarks.

use lesiongen::nn::Tensor;
use lesiongen::{BinaryMask3D, Grid, Volume3D};

/// Smooth deterministic test volume on a unit-spacing grid.
pub fn ramp_volume(dims: [usize; 3]) -> Volume3D {
    let grid = Grid::with_spacing(dims, [1.0; 3]).expect("valid bench grid");
    Volume3D::from_fn(grid, |i, j, k| ((i * 7 + j * 13 + k * 29) % 97) as f64 / 97.0)
}

/// Sparse blob pattern: roughly one voxel in nine set, in small clusters.
pub fn blob_mask(dims: [usize; 3]) -> BinaryMask3D {
    let grid = Grid::with_spacing(dims, [1.0; 3]).expect("valid bench grid");
    BinaryMask3D::from_fn(grid, |i, j, k| (i / 2 + j / 2 + k) % 3 == 0 && (i + j) % 5 != 0)
}

/// Deterministic `c × n × p × p` input batch with values in `[0, 1)`.
pub fn input_batch(c: usize, n: usize, p: usize) -> Tensor<f32> {
    let len = c * n * p * p;
    Tensor::from_vec(c, n, p, p, (0..len).map(|i| ((i * 37) % 101) as f32 / 101.0).collect())
}
