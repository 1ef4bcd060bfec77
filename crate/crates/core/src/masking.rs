//! Hyperintensity mask and intensity-level bands from FLAIR thresholding.
//!
//! A threshold is `T(γ) = μ_GM + γ·σ_GM` where `μ_GM`/`σ_GM` describe grey matter on
//! FLAIR. The hyperintensity (WMH) mask is `FLAIR > T(γ₁)`; band `i` holds voxels with
//! `T(γᵢ) < FLAIR ≤ T(γᵢ₊₁)` and the last band is open above `T(γₙ)`, so the bands
//! partition the WMH mask exactly. Everything is restricted to the brain mask.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::normalize::percentile_sorted;
use crate::volume::{BinaryMask3D, Volume3D};

/// γ grid used to cut the intensity bands.
pub const DEFAULT_GAMMAS: [f64; 8] = [0.5, 0.8, 1.1, 1.4, 1.7, 2.1, 2.4, 2.7];

/// Minimum voxels for a user-supplied GM mask.
pub const MIN_GM_VOXELS: usize = 10;

const EM_MAX_ITERATIONS: usize = 500;
const EM_TOLERANCE: f64 = 1e-10;

/// FLAIR grey-matter intensity distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TissueStats {
    pub mu_gm: f64,
    pub sigma_gm: f64,
}

impl TissueStats {
    pub fn new(mu_gm: f64, sigma_gm: f64) -> Result<Self> {
        if !(mu_gm.is_finite() && sigma_gm.is_finite() && sigma_gm > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tissue stats need finite mu and sigma > 0 (mu={mu_gm}, sigma={sigma_gm})"
            )));
        }
        Ok(Self { mu_gm, sigma_gm })
    }
}

/// `μ_GM + γ·σ_GM`.
pub fn threshold_for(stats: &TissueStats, gamma: f64) -> f64 {
    stats.mu_gm + gamma * stats.sigma_gm
}

fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// One-dimensional Gaussian mixture fitted by EM.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture1D {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub iterations: usize,
}

/// Fit a `k`-component mixture with quantile initialization (deterministic).
pub fn fit_mixture(values: &[f64], k: usize) -> Result<Mixture1D> {
    if values.len() < 3 * k {
        return Err(Error::InsufficientSample { what: "mixture sample", found: values.len(), required: 3 * k });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let total_mean = values.iter().sum::<f64>() / n;
    let total_var = values.iter().map(|v| (v - total_mean).powi(2)).sum::<f64>() / n;
    if total_var <= 0.0 {
        return Err(Error::EstimationFailed("intensities are constant".into()));
    }
    let floor = total_var * 1e-8;
    let mut means: Vec<f64> =
        (0..k).map(|c| percentile_sorted(&sorted, 100.0 * (2 * c + 1) as f64 / (2 * k) as f64)).collect();
    let mut variances = vec![total_var / (k * k) as f64; k];
    let mut weights = vec![1.0 / k as f64; k];
    let mut resp = vec![0.0; values.len() * k];
    let mut prev_ll = f64::NEG_INFINITY;
    for iter in 1..=EM_MAX_ITERATIONS {
        let mut ll = 0.0;
        for (x, r) in values.iter().zip(resp.chunks_mut(k)) {
            let mut s = 0.0;
            for c in 0..k {
                let d = x - means[c];
                let p = weights[c] * (-0.5 * d * d / variances[c]).exp()
                    / (2.0 * std::f64::consts::PI * variances[c]).sqrt();
                r[c] = p;
                s += p;
            }
            if s <= 0.0 || !s.is_finite() {
                // numerically isolated sample: assign to the nearest component
                let nearest = (0..k)
                    .min_by(|&a, &b| (x - means[a]).abs().total_cmp(&(x - means[b]).abs()))
                    .unwrap();
                r.iter_mut().enumerate().for_each(|(c, v)| *v = (c == nearest) as u8 as f64);
                continue;
            }
            r.iter_mut().for_each(|v| *v /= s);
            ll += s.ln();
        }
        for c in 0..k {
            let nk: f64 = resp.iter().skip(c).step_by(k).sum();
            if nk < 1e-9 {
                return Err(Error::EstimationFailed(format!("mixture component {c} collapsed")));
            }
            let mu = values.iter().zip(resp.iter().skip(c).step_by(k)).map(|(x, r)| r * x).sum::<f64>() / nk;
            let var = values
                .iter()
                .zip(resp.iter().skip(c).step_by(k))
                .map(|(x, r)| r * (x - mu) * (x - mu))
                .sum::<f64>()
                / nk;
            means[c] = mu;
            variances[c] = var.max(floor);
            weights[c] = nk / n;
        }
        if (ll - prev_ll).abs() <= EM_TOLERANCE * n.max(1.0) * (1.0 + ll.abs() / n) {
            return Ok(Mixture1D { weights, means, variances, iterations: iter });
        }
        prev_ll = ll;
    }
    Err(Error::EstimationFailed(format!("EM did not converge in {EM_MAX_ITERATIONS} iterations")))
}

/// GM statistics from a supplied GM mask (sample mean/std), or, when absent, from the
/// brightest component of a 3-class mixture over brain FLAIR intensities (FLAIR orders the
/// tissues CSF < WM < GM).
pub fn estimate_gm_stats(flair: &Volume3D, gm_mask: Option<&BinaryMask3D>, brain: &BinaryMask3D) -> Result<TissueStats> {
    flair.grid().ensure_matches(brain.grid(), "flair/brain")?;
    if brain.is_empty() {
        return Err(Error::EmptyMask("brain"));
    }
    if let Some(gm) = gm_mask {
        let values = flair.values_in(gm)?;
        if values.len() < MIN_GM_VOXELS {
            return Err(Error::InsufficientSample { what: "GM mask", found: values.len(), required: MIN_GM_VOXELS });
        }
        let (mu, sd) = mean_and_sample_std(&values);
        return TissueStats::new(mu, sd);
    }
    let values = flair.values_in(brain)?;
    let mix = fit_mixture(&values, 3)?;
    let gm = (0..3).max_by(|&a, &b| mix.means[a].total_cmp(&mix.means[b])).expect("three components");
    TissueStats::new(mix.means[gm], mix.variances[gm].sqrt())
}

/// WMH mask plus the intensity-level bands cut at increasing γ thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityLevelBank {
    gammas: Vec<f64>,
    thresholds: Vec<f64>,
    stats: TissueStats,
    masks: Vec<BinaryMask3D>,
    wmh: BinaryMask3D,
}

fn check_gammas(gammas: &[f64]) -> Result<()> {
    if gammas.is_empty() {
        return Err(Error::InvalidConfig("gamma list is empty".into()));
    }
    if gammas.iter().any(|g| !g.is_finite()) || gammas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(format!("gammas must be finite and strictly increasing: {gammas:?}")));
    }
    Ok(())
}

/// Threshold `flair` into the WMH mask and one band per γ.
pub fn build_bank(flair: &Volume3D, stats: &TissueStats, gammas: &[f64], brain: &BinaryMask3D) -> Result<IntensityLevelBank> {
    check_gammas(gammas)?;
    flair.grid().ensure_matches(brain.grid(), "flair/brain")?;
    if brain.is_empty() {
        return Err(Error::EmptyMask("brain"));
    }
    let thresholds: Vec<f64> = gammas.iter().map(|&g| threshold_for(stats, g)).collect();
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("thresholds are not strictly increasing".into()));
    }
    let grid = flair.grid().clone();
    let mut masks = vec![BinaryMask3D::empty(grid.clone()); gammas.len()];
    let mut wmh = BinaryMask3D::empty(grid);
    for idx in brain.indices() {
        let v = flair.data()[idx];
        if let Some(band) = band_index(&thresholds, v) {
            masks[band].data_mut()[idx] = true;
            wmh.data_mut()[idx] = true;
        }
    }
    Ok(IntensityLevelBank { gammas: gammas.to_vec(), thresholds, stats: *stats, masks, wmh })
}

/// Band holding intensity `v`, if any: `T[i] < v <= T[i+1]`, last band open-ended.
pub fn band_index(thresholds: &[f64], v: f64) -> Option<usize> {
    if !(v > thresholds[0]) {
        return None;
    }
    // number of thresholds strictly below v, minus one
    let above = thresholds.partition_point(|&t| t < v);
    Some(above - 1)
}

impl IntensityLevelBank {
    /// Assemble a bank from existing masks (e.g. loaded from disk or edited).
    /// The WMH mask is recomputed as the union of the bands.
    pub fn from_masks(gammas: Vec<f64>, stats: TissueStats, masks: Vec<BinaryMask3D>) -> Result<Self> {
        check_gammas(&gammas)?;
        if masks.len() != gammas.len() {
            return Err(Error::InvalidConfig(format!("{} masks for {} gammas", masks.len(), gammas.len())));
        }
        let grid = masks[0].grid().clone();
        for m in &masks[1..] {
            grid.ensure_matches(m.grid(), "bank masks")?;
        }
        let thresholds = gammas.iter().map(|&g| threshold_for(&stats, g)).collect();
        let mut bank = Self { gammas, thresholds, stats, masks, wmh: BinaryMask3D::empty(grid) };
        bank.check_disjoint()?;
        bank.recompute_wmh();
        Ok(bank)
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn stats(&self) -> &TissueStats {
        &self.stats
    }

    pub fn masks(&self) -> &[BinaryMask3D] {
        &self.masks
    }

    pub fn wmh(&self) -> &BinaryMask3D {
        &self.wmh
    }

    pub fn grid(&self) -> &crate::volume::Grid {
        self.wmh.grid()
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Band index of voxel `idx`, if it lies in the WMH mask.
    pub fn band_at(&self, idx: usize) -> Option<usize> {
        self.masks.iter().position(|m| m.data()[idx])
    }

    /// Set voxel `idx` to `band` (or clear it) keeping the bands disjoint.
    pub fn assign(&mut self, idx: usize, band: Option<usize>) {
        for (b, m) in self.masks.iter_mut().enumerate() {
            m.data_mut()[idx] = Some(b) == band;
        }
        self.wmh.data_mut()[idx] = band.is_some();
    }

    pub fn recompute_wmh(&mut self) {
        let wmh = self.wmh.data_mut();
        wmh.iter_mut().for_each(|v| *v = false);
        for m in &self.masks {
            for (w, &b) in wmh.iter_mut().zip(m.data()) {
                *w |= b;
            }
        }
    }

    /// Number of voxels claimed by more than one band.
    pub fn overlap_count(&self) -> usize {
        (0..self.wmh.data().len())
            .filter(|&i| self.masks.iter().filter(|m| m.data()[i]).count() > 1)
            .count()
    }

    fn check_disjoint(&self) -> Result<()> {
        match self.overlap_count() {
            0 => Ok(()),
            n => Err(Error::InvalidConfig(format!("{n} voxels belong to more than one band"))),
        }
    }

    /// Persist as `wmh` + one mask per band (NIfTI) and a `bank.toml` sidecar.
    pub fn save(&self, dir: impl AsRef<Path>, reference: Option<&io::Header>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let names: Vec<String> = (1..=self.masks.len()).map(|i| format!("il_{i}.nii.gz")).collect();
        io::write_mask(dir.join("wmh.nii.gz"), &self.wmh, reference)?;
        for (m, name) in self.masks.iter().zip(&names) {
            io::write_mask(dir.join(name), m, reference)?;
        }
        let meta = BankMeta {
            gammas: self.gammas.clone(),
            thresholds: self.thresholds.clone(),
            mu_gm: self.stats.mu_gm,
            sigma_gm: self.stats.sigma_gm,
            wmh: "wmh.nii.gz".into(),
            masks: names,
        };
        let text = toml::to_string(&meta).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        std::fs::write(dir.join(BANK_SIDECAR), text)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path: PathBuf = dir.join(BANK_SIDECAR);
        let text = std::fs::read_to_string(&meta_path)?;
        let meta: BankMeta =
            toml::from_str(&text).map_err(|e| Error::Parse { path: meta_path.clone(), detail: e.to_string() })?;
        let stats = TissueStats::new(meta.mu_gm, meta.sigma_gm)?;
        let masks =
            meta.masks.iter().map(|n| io::read_mask(dir.join(n)).map(|(m, _)| m)).collect::<Result<Vec<_>>>()?;
        let bank = Self::from_masks(meta.gammas, stats, masks)?;
        let (stored_wmh, _) = io::read_mask(dir.join(&meta.wmh))?;
        if stored_wmh.data() != bank.wmh.data() {
            return Err(Error::Corrupt { path: dir.join(&meta.wmh), detail: "wmh mask is not the union of the bands".into() });
        }
        Ok(bank)
    }
}

pub const BANK_SIDECAR: &str = "bank.toml";

#[derive(Serialize, Deserialize)]
struct BankMeta {
    gammas: Vec<f64>,
    thresholds: Vec<f64>,
    mu_gm: f64,
    sigma_gm: f64,
    wmh: String,
    masks: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn line(values: &[f64]) -> Volume3D {
        let g = Grid::with_spacing([values.len(), 1, 1], [1.0; 3]).unwrap();
        Volume3D::new(g, values.to_vec()).unwrap()
    }

    #[test]
    fn threshold_arithmetic() {
        let s = TissueStats::new(100.0, 10.0).unwrap();
        assert_eq!(threshold_for(&s, 0.5), 105.0);
        assert_eq!(threshold_for(&s, 0.0), 100.0);
        assert_eq!(threshold_for(&TissueStats::new(0.0, 1.0).unwrap(), 2.7), 2.7);
    }

    #[test]
    fn gm_mask_statistics() {
        let mut values = vec![99.0, 100.0, 101.0];
        values.extend([99.0, 100.0, 101.0, 99.0, 100.0, 101.0, 100.0]);
        let v = line(&values);
        let all = BinaryMask3D::full(v.grid().clone());
        let s = estimate_gm_stats(&v, Some(&all), &all).unwrap();
        assert!((s.mu_gm - 100.0).abs() < 1e-12);
        let expected_sd = (6.0f64 / 9.0).sqrt();
        assert!((s.sigma_gm - expected_sd).abs() < 1e-12);
    }

    #[test]
    fn small_gm_mask_rejected() {
        let v = line(&[1.0, 2.0, 3.0]);
        let all = BinaryMask3D::full(v.grid().clone());
        assert!(matches!(
            estimate_gm_stats(&v, Some(&all), &all),
            Err(Error::InsufficientSample { .. })
        ));
    }

    #[test]
    fn empty_brain_rejected() {
        let v = line(&[1.0, 2.0, 3.0]);
        let none = BinaryMask3D::empty(v.grid().clone());
        assert!(matches!(estimate_gm_stats(&v, None, &none), Err(Error::EmptyMask(_))));
    }

    #[test]
    fn mixture_fallback_picks_brightest_population() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut values = Vec::new();
        for (mean, n) in [(30.0, 2000), (80.0, 4000), (110.0, 3000)] {
            let d = Normal::new(mean, 5.0).unwrap();
            values.extend((0..n).map(|_| d.sample(&mut rng)));
        }
        let v = line(&values);
        let brain = BinaryMask3D::full(v.grid().clone());
        let s = estimate_gm_stats(&v, None, &brain).unwrap();
        assert!((s.mu_gm - 110.0).abs() < 2.0, "mu {}", s.mu_gm);
        assert!((s.sigma_gm - 5.0).abs() < 1.0, "sigma {}", s.sigma_gm);
    }

    #[test]
    fn band_assignment_matches_hand_evaluation() {
        let stats = TissueStats::new(100.0, 10.0).unwrap();
        let v = line(&[106.0, 130.0, 104.0, 105.0, 108.0, 127.0, 127.5]);
        let brain = BinaryMask3D::full(v.grid().clone());
        let bank = build_bank(&v, &stats, &DEFAULT_GAMMAS, &brain).unwrap();
        let expected = [105.0, 108.0, 111.0, 114.0, 117.0, 121.0, 124.0, 127.0];
        for (t, e) in bank.thresholds().iter().zip(expected) {
            assert!((t - e).abs() < 1e-12);
        }
        assert_eq!(bank.band_at(0), Some(0));
        assert_eq!(bank.band_at(1), Some(7));
        assert_eq!(bank.band_at(2), None);
        // boundaries: strict lower, inclusive upper
        assert_eq!(bank.band_at(3), None);
        assert_eq!(bank.band_at(4), Some(0));
        assert_eq!(bank.band_at(5), Some(6));
        assert_eq!(bank.band_at(6), Some(7));
    }

    #[test]
    fn all_below_threshold_gives_empty_bank() {
        let stats = TissueStats::new(100.0, 10.0).unwrap();
        let v = line(&[10.0, 50.0, 104.9]);
        let brain = BinaryMask3D::full(v.grid().clone());
        let bank = build_bank(&v, &stats, &DEFAULT_GAMMAS, &brain).unwrap();
        assert!(bank.wmh().is_empty());
        assert!(bank.masks().iter().all(|m| m.is_empty()));
    }

    #[test]
    fn non_increasing_gammas_rejected() {
        let stats = TissueStats::new(100.0, 10.0).unwrap();
        let v = line(&[1.0]);
        let brain = BinaryMask3D::full(v.grid().clone());
        assert!(matches!(build_bank(&v, &stats, &[0.5, 0.5], &brain), Err(Error::InvalidConfig(_))));
        assert!(matches!(build_bank(&v, &stats, &[0.8, 0.5], &brain), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn outside_brain_never_banded() {
        let stats = TissueStats::new(100.0, 10.0).unwrap();
        let v = line(&[200.0, 200.0]);
        let brain = BinaryMask3D::new(v.grid().clone(), vec![true, false]).unwrap();
        let bank = build_bank(&v, &stats, &DEFAULT_GAMMAS, &brain).unwrap();
        assert_eq!(bank.wmh().data(), &[true, false]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stats = TissueStats::new(100.0, 10.0).unwrap();
        let g = Grid::with_spacing([4, 3, 2], [1.0; 3]).unwrap();
        let v = Volume3D::from_fn(g.clone(), |i, j, k| 95.0 + (i * 5 + j * 3 + k * 7) as f64);
        let bank = build_bank(&v, &stats, &DEFAULT_GAMMAS, &BinaryMask3D::full(g)).unwrap();
        bank.save(dir.path(), None).unwrap();
        let back = IntensityLevelBank::load(dir.path()).unwrap();
        assert_eq!(back, bank);
    }

    proptest! {
        #[test]
        fn bands_partition_wmh(values in proptest::collection::vec(50.0f64..160.0, 1..200),
                               mu in 80.0f64..120.0, sigma in 1.0f64..20.0) {
            let stats = TissueStats::new(mu, sigma).unwrap();
            let v = line(&values);
            let brain = BinaryMask3D::from_fn(v.grid().clone(), |i, _, _| i % 7 != 3);
            let bank = build_bank(&v, &stats, &DEFAULT_GAMMAS, &brain).unwrap();
            prop_assert_eq!(bank.overlap_count(), 0);
            let total: usize = bank.masks().iter().map(|m| m.count()).sum();
            prop_assert_eq!(total, bank.wmh().count());
            let t = bank.thresholds();
            for (b, m) in bank.masks().iter().enumerate() {
                for idx in m.indices() {
                    let f = values[idx];
                    prop_assert!(f > t[b]);
                    if b + 1 < t.len() { prop_assert!(f <= t[b + 1]); }
                    prop_assert!(brain.data()[idx]);
                }
            }
        }
    }
}
