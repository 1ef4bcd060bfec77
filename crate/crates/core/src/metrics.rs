//! Similarity (MSE, SSIM) and segmentation/detection (DSC, lesion-wise sensitivity and
//! precision) metrics, plus CSV export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{connected_components, Connectivity};
use crate::volume::{BinaryMask3D, Volume3D};

fn paired_values(g: &Volume3D, r: &Volume3D, region: &BinaryMask3D) -> Result<(Vec<f64>, Vec<f64>)> {
    g.grid().ensure_matches(r.grid(), "generated/real")?;
    g.grid().ensure_matches(region.grid(), "image/region")?;
    if region.is_empty() {
        return Err(Error::EmptyMask("metric region"));
    }
    Ok((g.values_in(region)?, r.values_in(region)?))
}

/// `(1/N) Σ (G − R)²` over the region.
pub fn mse(generated: &Volume3D, real: &Volume3D, region: &BinaryMask3D) -> Result<f64> {
    let (g, r) = paired_values(generated, real, region)?;
    Ok(g.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / g.len() as f64)
}

/// Signed `(1/N) Σ (G − R)`; a diagnostic for systematic bias.
pub fn mean_error(generated: &Volume3D, real: &Volume3D, region: &BinaryMask3D) -> Result<f64> {
    let (g, r) = paired_values(generated, real, region)?;
    Ok(g.iter().zip(&r).map(|(a, b)| a - b).sum::<f64>() / g.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    /// Intensity span `L`; `None` uses the joint observed range over the region.
    pub dynamic_range: Option<f64>,
    /// Odd cube side in voxels; 0 selects the single global SSIM over the region.
    pub window: usize,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { k1: 0.01, k2: 0.03, dynamic_range: None, window: 0 }
    }
}

impl SsimParams {
    pub fn windowed(window: usize) -> Self {
        Self { window, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::InvalidConfig("SSIM constants must be positive".into()));
        }
        if matches!(self.dynamic_range, Some(l) if !(l > 0.0)) {
            return Err(Error::InvalidConfig("SSIM dynamic range must be positive".into()));
        }
        if self.window > 0 && self.window.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!("SSIM window {} must be odd", self.window)));
        }
        Ok(())
    }

    /// `(c1, c2)` for span `l`.
    pub fn constants(&self, l: f64) -> (f64, f64) {
        ((self.k1 * l).powi(2), (self.k2 * l).powi(2))
    }
}

/// Joint intensity span of both images over the region (1.0 if flat).
fn observed_range(g: &[f64], r: &[f64]) -> f64 {
    let (lo, hi) = g.iter().chain(r).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

/// SSIM from first and second moments.
pub fn ssim_from_moments(mg: f64, mr: f64, vg: f64, vr: f64, cov: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mg * mr + c1) * (2.0 * cov + c2)) / ((mg * mg + mr * mr + c1) * (vg + vr + c2))
}

/// Global SSIM over the region, or the mean of windowed SSIM over region centres.
pub fn ssim(generated: &Volume3D, real: &Volume3D, region: &BinaryMask3D, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    let (g, r) = paired_values(generated, real, region)?;
    if g.len() < 2 {
        return Err(Error::InsufficientSample { what: "SSIM region", found: g.len(), required: 2 });
    }
    let l = params.dynamic_range.unwrap_or_else(|| observed_range(&g, &r));
    let (c1, c2) = params.constants(l);
    if params.window == 0 {
        let n = g.len() as f64;
        let mg = g.iter().sum::<f64>() / n;
        let mr = r.iter().sum::<f64>() / n;
        let vg = g.iter().map(|v| (v - mg).powi(2)).sum::<f64>() / n;
        let vr = r.iter().map(|v| (v - mr).powi(2)).sum::<f64>() / n;
        let cov = g.iter().zip(&r).map(|(a, b)| (a - mg) * (b - mr)).sum::<f64>() / n;
        return Ok(ssim_from_moments(mg, mr, vg, vr, cov, c1, c2));
    }
    let tables = MomentTables::new(generated.data(), real.data(), generated.dims());
    let rad = params.window / 2;
    let dims = generated.dims();
    let mut total = 0.0;
    for idx in region.indices() {
        let [i, j, k] = generated.grid().coords(idx);
        let lo = [i.saturating_sub(rad), j.saturating_sub(rad), k.saturating_sub(rad)];
        let hi = [(i + rad).min(dims[0] - 1), (j + rad).min(dims[1] - 1), (k + rad).min(dims[2] - 1)];
        let s = tables.sums(lo, hi);
        let n = ((hi[0] - lo[0] + 1) * (hi[1] - lo[1] + 1) * (hi[2] - lo[2] + 1)) as f64;
        let (mg, mr) = (s[0] / n, s[1] / n);
        let vg = (s[2] / n - mg * mg).max(0.0);
        let vr = (s[3] / n - mr * mr).max(0.0);
        let cov = s[4] / n - mg * mr;
        total += ssim_from_moments(mg, mr, vg, vr, cov, c1, c2);
    }
    Ok(total / region.count() as f64)
}

/// 3-D summed-area tables of `g`, `r`, `g²`, `r²`, `g·r`.
struct MomentTables {
    dims: [usize; 3],
    tables: [Vec<f64>; 5],
}

impl MomentTables {
    fn new(g: &[f64], r: &[f64], dims: [usize; 3]) -> Self {
        let (nx, ny, nz) = (dims[0] + 1, dims[1] + 1, dims[2] + 1);
        let len = nx * ny * nz;
        let mut tables: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; len]);
        let at = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
        for k in 1..nz {
            for j in 1..ny {
                for i in 1..nx {
                    let src = (i - 1) + dims[0] * ((j - 1) + dims[1] * (k - 1));
                    let vals = [g[src], r[src], g[src] * g[src], r[src] * r[src], g[src] * r[src]];
                    for (t, v) in tables.iter_mut().zip(vals) {
                        t[at(i, j, k)] = v + t[at(i - 1, j, k)] + t[at(i, j - 1, k)] + t[at(i, j, k - 1)]
                            - t[at(i - 1, j - 1, k)]
                            - t[at(i - 1, j, k - 1)]
                            - t[at(i, j - 1, k - 1)]
                            + t[at(i - 1, j - 1, k - 1)];
                    }
                }
            }
        }
        Self { dims, tables }
    }

    /// Sums over the inclusive box `lo..=hi`.
    fn sums(&self, lo: [usize; 3], hi: [usize; 3]) -> [f64; 5] {
        let (nx, ny) = (self.dims[0] + 1, self.dims[1] + 1);
        let at = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
        let (x0, y0, z0) = (lo[0], lo[1], lo[2]);
        let (x1, y1, z1) = (hi[0] + 1, hi[1] + 1, hi[2] + 1);
        std::array::from_fn(|t| {
            let s = &self.tables[t];
            s[at(x1, y1, z1)] - s[at(x0, y1, z1)] - s[at(x1, y0, z1)] - s[at(x1, y1, z0)]
                + s[at(x0, y0, z1)]
                + s[at(x0, y1, z0)]
                + s[at(x1, y0, z0)]
                - s[at(x0, y0, z0)]
        })
    }
}

/// Region used for "non-background" metrics: the brain mask when given, else voxels > 0
/// of the real image.
pub fn non_background(real: &Volume3D, brain: Option<&BinaryMask3D>) -> BinaryMask3D {
    match brain {
        Some(b) => b.clone(),
        None => BinaryMask3D::threshold(real, |v| v > 0.0),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub region: String,
    pub n_voxels: usize,
    pub mse: f64,
    pub ssim: f64,
    pub mean_error: f64,
}

pub fn similarity(
    generated: &Volume3D,
    real: &Volume3D,
    region: &BinaryMask3D,
    region_name: &str,
    params: &SsimParams,
) -> Result<SimilarityReport> {
    Ok(SimilarityReport {
        region: region_name.to_string(),
        n_voxels: region.count(),
        mse: mse(generated, real, region)?,
        ssim: ssim(generated, real, region, params)?,
        mean_error: mean_error(generated, real, region)?,
    })
}

/// Voxel-wise confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// `2TP / (2TP + FP + FN)`; 1.0 when both masks are empty.
pub fn dsc(seg: &BinaryMask3D, gt: &BinaryMask3D) -> Result<(f64, Counts)> {
    seg.grid().ensure_matches(gt.grid(), "segmentation/ground truth")?;
    let mut c = Counts::default();
    for (&s, &g) in seg.data().iter().zip(gt.data()) {
        match (s, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * c.tp + c.fp + c.fn_;
    let value = if denom == 0 { 1.0 } else { 2.0 * c.tp as f64 / denom as f64 };
    Ok((value, c))
}

/// Lesion-wise detection; `None` marks a ratio with an empty denominator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub sensitivity: Option<f64>,
    pub precision: Option<f64>,
    pub counts: Counts,
}

/// A ground-truth component is detected when some segmentation component shares at least
/// `min_overlap` voxels with it; a segmentation component sharing fewer than
/// `min_overlap` voxels with every ground-truth component is a false positive.
pub fn lesion_detection(
    seg: &BinaryMask3D,
    gt: &BinaryMask3D,
    connectivity: Connectivity,
    min_overlap: usize,
) -> Result<Detection> {
    seg.grid().ensure_matches(gt.grid(), "segmentation/ground truth")?;
    let min_overlap = min_overlap.max(1);
    let sc = connected_components(seg, connectivity);
    let gc = connected_components(gt, connectivity);
    // overlap[g][s] for labels (1-based)
    let mut overlap = vec![vec![0usize; sc.count() + 1]; gc.count() + 1];
    for (&gl, &sl) in gc.labels().iter().zip(sc.labels()) {
        if gl > 0 && sl > 0 {
            overlap[gl as usize][sl as usize] += 1;
        }
    }
    let tp = (1..=gc.count()).filter(|&g| overlap[g].iter().any(|&o| o >= min_overlap)).count();
    let fn_ = gc.count() - tp;
    let fp = (1..=sc.count()).filter(|&s| (1..=gc.count()).all(|g| overlap[g][s] < min_overlap)).count();
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(Detection { sensitivity: ratio(tp, tp + fn_), precision: ratio(tp, tp + fp), counts: Counts { tp, fp, fn_ } })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScore {
    pub dsc: f64,
    pub sensitivity: Option<f64>,
    pub precision: Option<f64>,
    pub voxels: Counts,
    pub lesions: Counts,
}

/// DSC plus 26-connected lesion detection with a one-voxel overlap criterion.
pub fn score_segmentation(seg: &BinaryMask3D, gt: &BinaryMask3D) -> Result<SegmentationScore> {
    let (d, voxels) = dsc(seg, gt)?;
    let det = lesion_detection(seg, gt, Connectivity::Volume26, 1)?;
    Ok(SegmentationScore { dsc: d, sensitivity: det.sensitivity, precision: det.precision, voxels, lesions: det.counts })
}

/// One CSV row; absent values are written as `NA`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub image_id: String,
    pub region: String,
    pub metric: String,
    pub value: Option<f64>,
    pub n_voxels: Option<usize>,
    pub counts: Option<Counts>,
}

impl MetricRow {
    pub fn new(image_id: &str, region: &str, metric: &str, value: Option<f64>) -> Self {
        Self {
            image_id: image_id.into(),
            region: region.into(),
            metric: metric.into(),
            value,
            n_voxels: None,
            counts: None,
        }
    }
}

pub fn similarity_rows(image_id: &str, report: &SimilarityReport) -> Vec<MetricRow> {
    [("mse", report.mse), ("ssim", report.ssim), ("mean_error", report.mean_error)]
        .into_iter()
        .map(|(m, v)| MetricRow { n_voxels: Some(report.n_voxels), ..MetricRow::new(image_id, &report.region, m, Some(v)) })
        .collect()
}

pub fn segmentation_rows(image_id: &str, region: &str, score: &SegmentationScore) -> Vec<MetricRow> {
    vec![
        MetricRow { counts: Some(score.voxels), ..MetricRow::new(image_id, region, "dsc", Some(score.dsc)) },
        MetricRow { counts: Some(score.lesions), ..MetricRow::new(image_id, region, "sensitivity", score.sensitivity) },
        MetricRow { counts: Some(score.lesions), ..MetricRow::new(image_id, region, "precision", score.precision) },
    ]
}

const NA: &str = "NA";

pub fn write_metric_csv(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["image_id", "region", "metric", "value", "n_voxels", "tp", "fp", "fn"])?;
    let opt = |v: Option<usize>| v.map_or_else(|| NA.to_string(), |v| v.to_string());
    for r in rows {
        w.write_record([
            r.image_id.clone(),
            r.region.clone(),
            r.metric.clone(),
            r.value.map_or_else(|| NA.to_string(), |v| format!("{v:.9}")),
            opt(r.n_voxels),
            opt(r.counts.map(|c| c.tp)),
            opt(r.counts.map(|c| c.fp)),
            opt(r.counts.map(|c| c.fn_)),
        ])?;
    }
    w.flush()?;
    Ok(())
}
