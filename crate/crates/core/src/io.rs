//! NIfTI-1 reading/writing of volumes, masks and displacement fields, plus the plain-text
//! affine matrix format (4 rows × 4 whitespace-separated numbers, world coordinates).
//!
//! Writing with a reference header copies every header field except `dim`, `datatype`,
//! `bitpix` and scaling, so orientation of untouched volumes survives a round trip
//! bit-for-bit. Masks are stored as `uint8` {0,1}.

use std::path::Path;

use nalgebra::Matrix4;
use ndarray::{Array, IxDyn};
use nifti::{IntoNdArray, NiftiHeader, NiftiObject, NiftiType, ReaderOptions};
use nifti::writer::WriterOptions;

use crate::error::{Error, Result};
use crate::transform::DisplacementField;
use crate::volume::{BinaryMask3D, Grid, Volume3D};

pub use nifti::NiftiHeader as Header;

fn nifti_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Nifti { path: path.to_path_buf(), detail: e.to_string() }
}

/// Voxel-to-world matrix from sform, then qform, then pixdim scaling.
pub fn header_affine(h: &NiftiHeader) -> Matrix4<f64> {
    if h.sform_code > 0 {
        let r = [h.srow_x, h.srow_y, h.srow_z];
        let mut m = Matrix4::identity();
        for (row, vals) in r.iter().enumerate() {
            for col in 0..4 {
                m[(row, col)] = vals[col] as f64;
            }
        }
        return m;
    }
    let px = [h.pixdim[1] as f64, h.pixdim[2] as f64, h.pixdim[3] as f64];
    if h.qform_code > 0 {
        let (b, c, d) = (h.quatern_b as f64, h.quatern_c as f64, h.quatern_d as f64);
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let qfac = if h.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let r = [
            [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
            [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
            [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ];
        let scale = [px[0], px[1], qfac * px[2]];
        let off = [h.quatern_x as f64, h.quatern_y as f64, h.quatern_z as f64];
        let mut m = Matrix4::identity();
        for row in 0..3 {
            for col in 0..3 {
                m[(row, col)] = r[row][col] * scale[col];
            }
            m[(row, 3)] = off[row];
        }
        return m;
    }
    let mut m = Matrix4::identity();
    for a in 0..3 {
        m[(a, a)] = if px[a] > 0.0 { px[a] } else { 1.0 };
    }
    m
}

fn header_grid(h: &NiftiHeader, path: &Path) -> Result<Grid> {
    let dim = h.dim;
    let dims = [dim[1].max(1) as usize, dim[2].max(1) as usize, dim[3].max(1) as usize];
    let spacing = [1, 2, 3].map(|a| {
        let s = (h.pixdim[a] as f64).abs();
        if s > 0.0 { s } else { 1.0 }
    });
    Grid::new(dims, spacing, header_affine(h)).map_err(|e| nifti_err(path, e))
}

/// Minimal header describing `grid` (sform only, mm units, little endian).
pub fn header_for_grid(grid: &Grid) -> NiftiHeader {
    let mut h = NiftiHeader::default();
    let a = grid.affine();
    let rows = [&mut h.srow_x, &mut h.srow_y, &mut h.srow_z];
    for (r, row) in rows.into_iter().enumerate() {
        for c in 0..4 {
            row[c] = a[(r, c)] as f32;
        }
    }
    let s = grid.spacing();
    h.pixdim = [1.0, s[0] as f32, s[1] as f32, s[2] as f32, 1.0, 1.0, 1.0, 1.0];
    h.qform_code = 0;
    h.sform_code = 1;
    h.xyzt_units = 2;
    h.endianness = nifti::Endianness::Little;
    h
}

fn read_object(path: &Path) -> Result<(NiftiHeader, Array<f64, IxDyn>)> {
    let obj = ReaderOptions::new().read_file(path).map_err(|e| nifti_err(path, e))?;
    let header = obj.header().clone();
    let arr = obj.into_volume().into_ndarray::<f64>().map_err(|e| nifti_err(path, e))?;
    Ok((header, arr))
}

fn index_nd(shape_len: usize, i: usize, j: usize, k: usize, rest: &[usize]) -> Vec<usize> {
    let mut ix = vec![0usize; shape_len.max(3)];
    ix[0] = i;
    ix[1] = j;
    ix[2] = k;
    for (n, &r) in rest.iter().enumerate() {
        ix[3 + n] = r;
    }
    ix.truncate(shape_len.max(3));
    ix
}

/// Read a scalar volume; returns the header so outputs can reuse it.
pub fn read_volume(path: impl AsRef<Path>) -> Result<(Volume3D, NiftiHeader)> {
    let path = path.as_ref();
    let (header, arr) = read_object(path)?;
    let grid = header_grid(&header, path)?;
    let shape = arr.shape().to_vec();
    if shape.len() > 3 && shape[3..].iter().any(|&d| d > 1) {
        return Err(nifti_err(path, format!("expected a 3-D volume, got shape {shape:?}")));
    }
    let mut arr = arr;
    if shape.len() < 3 {
        let mut s = shape.clone();
        s.resize(3, 1);
        arr = arr.into_shape_with_order(IxDyn(&s)).map_err(|e| nifti_err(path, e))?;
    }
    let ndim = arr.ndim();
    let vol = Volume3D::from_fn(grid, |i, j, k| arr[IxDyn(&index_nd(ndim, i, j, k, &[]))]);
    if vol.data().iter().any(|v| !v.is_finite()) {
        return Err(nifti_err(path, "non-finite intensities"));
    }
    Ok((vol, header))
}

/// Read a mask: any non-zero voxel is set.
pub fn read_mask(path: impl AsRef<Path>) -> Result<(BinaryMask3D, NiftiHeader)> {
    let (vol, h) = read_volume(path)?;
    Ok((BinaryMask3D::threshold(&vol, |v| v != 0.0), h))
}

fn to_array<T: Copy + Default>(grid: &Grid, extra: &[usize], mut f: impl FnMut(usize, &[usize]) -> T) -> Array<T, IxDyn> {
    let [nx, ny, nz] = grid.dims();
    let mut shape = vec![nx, ny, nz];
    let shape_len = 3 + extra.len();
    shape.extend_from_slice(extra);
    Array::from_shape_fn(IxDyn(&shape), |ix| {
        let idx = grid.index(ix[0], ix[1], ix[2]);
        let rest: Vec<usize> = (3..shape_len).map(|d| ix[d]).collect();
        f(idx, &rest)
    })
}

fn writer<'a>(path: &'a Path, header: &'a NiftiHeader) -> WriterOptions<'a> {
    WriterOptions::new(path).reference_header(header)
}

/// Write a volume, keeping the reference header's orientation and (numeric) datatype.
pub fn write_volume(path: impl AsRef<Path>, volume: &Volume3D, reference: Option<&NiftiHeader>) -> Result<()> {
    let path = path.as_ref();
    let own;
    let header = match reference {
        Some(h) => h,
        None => {
            own = header_for_grid(volume.grid());
            &own
        }
    };
    let data = volume.data();
    let g = volume.grid();
    let dtype = header.data_type().ok();
    let res = match dtype {
        Some(NiftiType::Uint8) => writer(path, header)
            .write_nifti(&to_array(g, &[], |i, _| data[i].round().clamp(0.0, 255.0) as u8)),
        Some(NiftiType::Int16) => writer(path, header)
            .write_nifti(&to_array(g, &[], |i, _| data[i].round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)),
        Some(NiftiType::Int32) => writer(path, header)
            .write_nifti(&to_array(g, &[], |i, _| data[i].round() as i32)),
        Some(NiftiType::Float64) => writer(path, header).write_nifti(&to_array(g, &[], |i, _| data[i])),
        _ => writer(path, header).write_nifti(&to_array(g, &[], |i, _| data[i] as f32)),
    };
    res.map_err(|e| nifti_err(path, e))
}

/// Write a mask as uint8 {0,1}.
pub fn write_mask(path: impl AsRef<Path>, mask: &BinaryMask3D, reference: Option<&NiftiHeader>) -> Result<()> {
    let path = path.as_ref();
    let mut header = reference.cloned().unwrap_or_else(|| header_for_grid(mask.grid()));
    header.datatype = NiftiType::Uint8 as i16;
    header.cal_min = 0.0;
    header.cal_max = 1.0;
    let data = mask.data();
    writer(path, &header)
        .write_nifti(&to_array(mask.grid(), &[], |i, _| data[i] as u8))
        .map_err(|e| nifti_err(path, e))
}

/// Read a displacement field stored as `(x, y, z, 1, 3)` (vector intent) or `(x, y, z, 3)`.
pub fn read_displacement(path: impl AsRef<Path>) -> Result<DisplacementField> {
    let path = path.as_ref();
    let (header, arr) = read_object(path)?;
    let grid = header_grid(&header, path)?;
    let shape = arr.shape().to_vec();
    let ndim = shape.len();
    let rest: fn(usize) -> Vec<usize> = match (ndim, shape.get(3), shape.get(4)) {
        (4, Some(3), None) => |c| vec![c],
        (5, Some(1), Some(3)) => |c| vec![0, c],
        _ => return Err(nifti_err(path, format!("expected a 3-component field, got shape {shape:?}"))),
    };
    let mut vectors = vec![[0.0; 3]; grid.len()];
    for (idx, v) in vectors.iter_mut().enumerate() {
        let [i, j, k] = grid.coords(idx);
        for c in 0..3 {
            v[c] = arr[IxDyn(&index_nd(ndim, i, j, k, &rest(c)))];
        }
    }
    DisplacementField::new(grid, vectors)
}

/// Write a displacement field as a 5-D vector-intent float32 image.
pub fn write_displacement(path: impl AsRef<Path>, field: &DisplacementField, reference: Option<&NiftiHeader>) -> Result<()> {
    let path = path.as_ref();
    let mut header = reference.cloned().unwrap_or_else(|| header_for_grid(field.grid()));
    header.intent_code = 1007;
    let v = field.vectors();
    writer(path, &header)
        .write_nifti(&to_array(field.grid(), &[1, 3], |i, rest| v[i][rest[1]] as f32))
        .map_err(|e| nifti_err(path, e))
}

/// Parse a 4×4 row-major affine from text. Blank lines and `#` comments are ignored.
pub fn parse_affine(text: &str) -> std::result::Result<Matrix4<f64>, String> {
    let nums: Vec<f64> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split_whitespace())
        .map(|t| t.parse::<f64>().map_err(|e| format!("bad number {t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if nums.len() != 16 {
        return Err(format!("expected 16 numbers, found {}", nums.len()));
    }
    Ok(Matrix4::from_row_slice(&nums))
}

pub fn read_affine(path: impl AsRef<Path>) -> Result<Matrix4<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_affine(&text).map_err(|detail| Error::Parse { path: path.to_path_buf(), detail })
}

pub fn format_affine(m: &Matrix4<f64>) -> String {
    let mut s = String::new();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{:?}", m[(r, c)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_affine(path: impl AsRef<Path>, m: &Matrix4<f64>) -> Result<()> {
    std::fs::write(path, format_affine(m))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oblique_grid() -> Grid {
        let a = Matrix4::new(
            0.9, 0.1, 0.0, -40.5, //
            -0.1, 0.95, 0.02, 12.25, //
            0.0, 0.0, 3.0, 7.0, //
            0.0, 0.0, 0.0, 1.0,
        );
        Grid::new([5, 4, 3], [0.9, 0.95, 3.0], a).unwrap()
    }

    #[test]
    fn volume_round_trip_preserves_data_and_orientation() {
        let dir = tempfile::tempdir().unwrap();
        let g = oblique_grid();
        let v = Volume3D::from_fn(g, |i, j, k| (i as f32 * 0.5 + j as f32 * 3.25 - k as f32) as f64);
        let p1 = dir.path().join("a.nii.gz");
        write_volume(&p1, &v, None).unwrap();
        let (back, h) = read_volume(&p1).unwrap();
        assert_eq!(back.data(), v.data());
        assert_eq!(back.grid().dims(), v.grid().dims());
        // second generation through the reference header is bit-identical
        let p2 = dir.path().join("b.nii.gz");
        write_volume(&p2, &back, Some(&h)).unwrap();
        let (again, h2) = read_volume(&p2).unwrap();
        assert_eq!(again.data(), back.data());
        assert_eq!((h2.srow_x, h2.srow_y, h2.srow_z), (h.srow_x, h.srow_y, h.srow_z));
        assert_eq!(again.grid(), back.grid());
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = BinaryMask3D::from_fn(oblique_grid(), |i, j, k| (i + j + k) % 2 == 0);
        let p = dir.path().join("m.nii");
        write_mask(&p, &m, None).unwrap();
        let (back, h) = read_mask(&p).unwrap();
        assert_eq!(h.datatype, NiftiType::Uint8 as i16);
        assert_eq!(back.data(), m.data());
    }

    #[test]
    fn qform_only_header() {
        let mut h = NiftiHeader {
            sform_code: 0,
            qform_code: 1,
            pixdim: [1.0, 2.0, 2.0, 3.0, 1.0, 1.0, 1.0, 1.0],
            ..NiftiHeader::default()
        };
        h.quatern_x = 10.0;
        let m = header_affine(&h);
        assert_eq!(m[(0, 0)], 2.0);
        assert_eq!(m[(2, 2)], 3.0);
        assert_eq!(m[(0, 3)], 10.0);
    }

    #[test]
    fn displacement_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = oblique_grid();
        let vecs = (0..g.len()).map(|i| [i as f64, -(i as f64) * 0.5, 0.25]).collect();
        let f = DisplacementField::new(g, vecs).unwrap();
        let p = dir.path().join("d.nii.gz");
        write_displacement(&p, &f, None).unwrap();
        assert_eq!(read_displacement(&p).unwrap().vectors(), f.vectors());
    }

    #[test]
    fn affine_text() {
        let m = parse_affine("# comment\n1 0 0 2\n0 1 0 0\n0 0 1 -1.5\n0 0 0 1\n").unwrap();
        assert_eq!(m[(0, 3)], 2.0);
        assert_eq!(m[(2, 3)], -1.5);
        assert_eq!(parse_affine(&format_affine(&m)).unwrap(), m);
        assert!(parse_affine("1 2 3").is_err());
    }

    #[test]
    fn truncated_file_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.nii");
        std::fs::write(&p, [0u8; 100]).unwrap();
        assert!(read_volume(&p).is_err());
    }
}
