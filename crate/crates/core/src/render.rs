//! PNG rendering: jet-colormap slice montages and simple metric curve plots.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask3D, Volume3D};

/// Jet colormap for `v` in `[0, 1]` (values outside are clamped).
pub fn jet(v: f64) -> [u8; 3] {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let channel = |c: f64| ((1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [channel(3.0), channel(2.0), channel(1.0)]
}

#[derive(Clone, Debug, PartialEq)]
pub struct MontageOptions {
    /// Axial slices to show; all slices when `None`.
    pub slices: Option<Vec<usize>>,
    /// Intensity window; the volume's min/max when `None`.
    pub range: Option<(f64, f64)>,
    /// Integer upscaling of every voxel.
    pub scale: u32,
    pub columns: Option<usize>,
}

impl Default for MontageOptions {
    fn default() -> Self {
        Self { slices: None, range: None, scale: 4, columns: None }
    }
}

/// Axial slices of `volume` tiled left to right, top to bottom, in jet colors. Voxels on
/// the in-plane boundary of `outline` are drawn white.
pub fn montage(volume: &Volume3D, outline: Option<&BinaryMask3D>, options: &MontageOptions) -> Result<RgbImage> {
    if let Some(m) = outline {
        volume.grid().ensure_matches(m.grid(), "montage volume/outline")?;
    }
    let [nx, ny, nz] = volume.dims();
    let slices = options.slices.clone().unwrap_or_else(|| (0..nz).collect());
    if slices.is_empty() || slices.iter().any(|&k| k >= nz) {
        return Err(Error::InvalidConfig(format!("slices {slices:?} outside 0..{nz}")));
    }
    if options.scale == 0 {
        return Err(Error::InvalidConfig("montage scale must be positive".into()));
    }
    let (lo, hi) = options.range.unwrap_or_else(|| {
        let d = volume.data();
        (d.iter().copied().fold(f64::INFINITY, f64::min), d.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cols = options.columns.unwrap_or_else(|| (slices.len() as f64).sqrt().ceil() as usize).max(1);
    let rows = slices.len().div_ceil(cols);
    let s = options.scale;
    let mut img = RgbImage::new((cols * nx) as u32 * s, (rows * ny) as u32 * s);
    let edge = |i: usize, j: usize, k: usize| -> bool {
        let Some(m) = outline else { return false };
        if !m.get(i, j, k) {
            return false;
        }
        let inside = |di: isize, dj: isize| {
            let (a, b) = (i as isize + di, j as isize + dj);
            a >= 0 && b >= 0 && (a as usize) < nx && (b as usize) < ny && m.get(a as usize, b as usize, k)
        };
        !(inside(-1, 0) && inside(1, 0) && inside(0, -1) && inside(0, 1))
    };
    for (t, &k) in slices.iter().enumerate() {
        let (ox, oy) = ((t % cols) * nx, (t / cols) * ny);
        for j in 0..ny {
            for i in 0..nx {
                let color = if edge(i, j, k) { [255, 255, 255] } else { jet((volume.get(i, j, k) - lo) / span) };
                // anterior (high j) at the top
                let (px, py) = ((ox + i) as u32 * s, (oy + ny - 1 - j) as u32 * s);
                for dy in 0..s {
                    for dx in 0..s {
                        img.put_pixel(px + dx, py + dy, Rgb(color));
                    }
                }
            }
        }
    }
    Ok(img)
}

pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// One poly-line in data coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub points: Vec<(f64, f64)>,
    pub color: [u8; 3],
}

/// One plot panel; the panels of a figure are laid out side by side.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Panel {
    pub series: Vec<Series>,
    /// y-axis limits; fitted to the data when `None`.
    pub y_range: Option<(f64, f64)>,
}

const PANEL_W: u32 = 320;
const PANEL_H: u32 = 240;
const MARGIN: u32 = 24;

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: [u8; 3]) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
            let (px, py) = (x.round() as i64 + dx, y.round() as i64 + dy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, Rgb(color));
            }
        }
    }
}

/// Line plots on a white background with grey axes and a marker at each point.
pub fn line_plot(panels: &[Panel]) -> RgbImage {
    let mut img = RgbImage::from_pixel(PANEL_W * panels.len().max(1) as u32, PANEL_H, Rgb([255, 255, 255]));
    for (p, panel) in panels.iter().enumerate() {
        let x0 = p as u32 * PANEL_W + MARGIN;
        let (x1, y0, y1) = (x0 + PANEL_W - 2 * MARGIN, MARGIN, PANEL_H - MARGIN);
        draw_line(&mut img, (x0 as f64, y1 as f64), (x1 as f64, y1 as f64), [128, 128, 128]);
        draw_line(&mut img, (x0 as f64, y0 as f64), (x0 as f64, y1 as f64), [128, 128, 128]);
        let pts = panel.series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
        let (mut xl, mut xh, mut yl, mut yh) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            (xl, xh, yl, yh) = (xl.min(x), xh.max(x), yl.min(y), yh.max(y));
        }
        if !xl.is_finite() {
            continue;
        }
        if let Some((lo, hi)) = panel.y_range {
            (yl, yh) = (lo, hi);
        }
        let xs = if xh > xl { xh - xl } else { 1.0 };
        let ys = if yh > yl { yh - yl } else { 1.0 };
        let map = |(x, y): (f64, f64)| {
            (x0 as f64 + (x - xl) / xs * (x1 - x0) as f64, y1 as f64 - (y - yl) / ys * (y1 - y0) as f64)
        };
        for s in &panel.series {
            let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).map(map).collect();
            for w in pts.windows(2) {
                draw_line(&mut img, w[0], w[1], s.color);
            }
            for &(x, y) in &pts {
                draw_line(&mut img, (x - 2.0, y - 2.0), (x + 2.0, y + 2.0), s.color);
                draw_line(&mut img, (x - 2.0, y + 2.0), (x + 2.0, y - 2.0), s.color);
            }
        }
    }
    img
}
