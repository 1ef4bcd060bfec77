//! Phantom-based data-augmentation study.
//!
//! For every seed, a segmenter is trained twice on the same real phantoms: once alone
//! (ORG) and once together with synthetic images made by transplanting their lesions
//! onto lesion-free phantoms (ORG+DA). Both arms are scored on the same held-out
//! phantoms. The generator is trained beforehand on its own phantom pool.

use std::path::Path;

use nalgebra::{Matrix4, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::filling::FillConfig;
use crate::io::{write_mask, write_volume};
use crate::masking::DEFAULT_GAMMAS;
use crate::metrics::score_segmentation;
use crate::nn::OptimizerConfig;
use crate::phantom::{make_phantom, Phantom, PhantomSpec};
use crate::render::{line_plot, save_png, Panel, Series};
use crate::segmenter::{train_segmenter, LabeledImage, SegmenterConfig};
use crate::synthesis::{extract_patches, train_with, EpochRecord, GeneratorConfig, GeneratorModel, PreparedSubject, TrainingHistory};
use crate::transform::{DisplacementField, SpatialTransform};
use crate::transplant::{transplant, TransplantSpec};
use crate::volume::Grid;

/// Ranges of the random source → target transforms used for augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformJitter {
    /// In-plane rotation about the grid centre, degrees.
    pub max_rotation_deg: f64,
    /// In-plane translation, mm.
    pub max_translation_mm: f64,
    /// In-plane relative scaling.
    pub max_scale: f64,
    /// Peak amplitude of the smooth in-plane displacement, mm.
    pub displacement_amplitude_mm: f64,
    pub displacement_wavelength_mm: f64,
}

impl Default for TransformJitter {
    fn default() -> Self {
        Self {
            max_rotation_deg: 8.0,
            max_translation_mm: 2.0,
            max_scale: 0.05,
            displacement_amplitude_mm: 1.5,
            displacement_wavelength_mm: 24.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Real (lesioned) training phantoms per seed.
    pub n_train_real: usize,
    /// Synthetic images per real image; even copies use an affine transform, odd copies
    /// add a smooth displacement field.
    pub augmentations_per_image: usize,
    pub n_test: usize,
    pub seeds: Vec<u64>,
    /// Phantoms used to train the generator (disjoint from every segmenter phantom).
    pub generator_pool: usize,
    pub generator_pool_seed: u64,
    pub gammas: Vec<f64>,
    pub phantom: PhantomSpec,
    pub generator: GeneratorConfig,
    pub segmenter: SegmenterConfig,
    pub transform: TransformJitter,
    /// Write the synthetic images and their lesion masks next to the reports.
    pub write_volumes: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_train_real: 1,
            augmentations_per_image: 2,
            n_test: 3,
            seeds: vec![1, 2, 3, 4, 5],
            generator_pool: 4,
            generator_pool_seed: 0,
            gammas: DEFAULT_GAMMAS.to_vec(),
            phantom: PhantomSpec::default(),
            generator: desk_generator(),
            segmenter: SegmenterConfig::default(),
            transform: TransformJitter::default(),
            write_volumes: false,
        }
    }
}

/// Generator size that trains in minutes on one CPU core for the default phantoms.
pub fn desk_generator() -> GeneratorConfig {
    GeneratorConfig {
        patch_size: 16,
        patch_stride: 8,
        base_width: 8,
        batch_size: 16,
        max_epochs: 100,
        patience: 10,
        optimizer: OptimizerConfig { learning_rate: 3e-3, ..OptimizerConfig::default() },
        ..GeneratorConfig::default()
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let config: Self = toml::from_str(&text).map_err(|e| Error::Parse { path: path.into(), detail: e.to_string() })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("experiment: {m}")));
        if self.n_train_real == 0 || self.n_test == 0 || self.generator_pool == 0 {
            return bad("n_train_real, n_test and generator_pool must be at least 1".into());
        }
        if self.seeds.len() < 3 {
            return bad(format!("at least 3 seeds are needed for paired statistics, got {}", self.seeds.len()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.gammas.len() != self.generator.bands() {
            return bad(format!("{} gammas for a generator with {} bands", self.gammas.len(), self.generator.bands()));
        }
        let t = &self.transform;
        if [t.max_rotation_deg, t.max_translation_mm, t.max_scale, t.displacement_amplitude_mm].iter().any(|v| !(*v >= 0.0))
            || !(t.displacement_wavelength_mm > 0.0)
            || t.max_scale >= 1.0
        {
            return bad(format!("invalid transform ranges {t:?}"));
        }
        self.phantom.validate()?;
        self.generator.validate()?;
        self.segmenter.validate()
    }
}

/// Stage tags mixed into every derived seed.
#[derive(Clone, Copy, Debug)]
enum Stage {
    GeneratorPool = 1,
    TrainPhantom = 2,
    TargetPhantom = 3,
    TestPhantom = 4,
    Segmenter = 5,
    Transform = 6,
    Fill = 7,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, stage: Stage, index: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ stage as u64) ^ index)
}

/// Bank, filling and normalization of a phantom using its own WM and brain masks.
pub fn prepare_phantom(p: &Phantom, gammas: &[f64], fill_seed: u64) -> Result<PreparedSubject> {
    let fill = FillConfig { wm_mask: Some(p.wm.clone()), brain_mask: Some(p.brain.clone()), ..FillConfig::with_seed(fill_seed) };
    let (subject, _) = PreparedSubject::prepare(&p.t1, &p.flair, &p.brain, Some(&p.gm), gammas, &fill)?;
    Ok(subject)
}

/// Seeds of the generator's phantom pool.
pub fn generator_pool_seeds(config: &ExperimentConfig) -> Vec<u64> {
    (0..config.generator_pool as u64).map(|i| derive_seed(config.generator_pool_seed, Stage::GeneratorPool, i)).collect()
}

/// Prepared subjects of the generator pool.
pub fn generator_pool(config: &ExperimentConfig) -> Result<Vec<(Phantom, PreparedSubject)>> {
    generator_pool_seeds(config)
        .into_iter()
        .map(|s| {
            let p = make_phantom(&config.phantom, s)?;
            let subject = prepare_phantom(&p, &config.gammas, derive_seed(s, Stage::Fill, 0))?;
            Ok((p, subject))
        })
        .collect()
}

/// Train the generator on the generator pool.
pub fn train_experiment_generator(
    config: &ExperimentConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(GeneratorModel<f32>, TrainingHistory)> {
    config.validate()?;
    let mut samples = Vec::new();
    for (_, subject) in generator_pool(config)? {
        samples.extend(extract_patches(&subject, &config.generator)?);
    }
    train_with(&samples, &config.generator, on_epoch)
}

/// Random affine about the grid centre, optionally followed by a smooth displacement.
pub fn random_transform(grid: &Grid, jitter: &TransformJitter, nonlinear: bool, seed: u64) -> Result<SpatialTransform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sym = |m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    let angle = sym(jitter.max_rotation_deg).to_radians();
    let scale = 1.0 + sym(jitter.max_scale);
    let shift = [sym(jitter.max_translation_mm), sym(jitter.max_translation_mm)];
    let phases = [sym(std::f64::consts::PI), sym(std::f64::consts::PI)];
    let dims = grid.dims();
    let centre = grid.affine().transform_point(&nalgebra::Point3::new(
        (dims[0] as f64 - 1.0) / 2.0,
        (dims[1] as f64 - 1.0) / 2.0,
        (dims[2] as f64 - 1.0) / 2.0,
    ));
    let c = Vector3::new(centre.x, centre.y, centre.z);
    let rs = Rotation3::from_axis_angle(&Vector3::z_axis(), angle).to_homogeneous()
        * Matrix4::new_nonuniform_scaling(&Vector3::new(scale, scale, 1.0));
    let affine = Matrix4::new_translation(&(c + Vector3::new(shift[0], shift[1], 0.0))) * rs * Matrix4::new_translation(&-c);
    let mut transform = SpatialTransform::from_affine(affine);
    if nonlinear && jitter.displacement_amplitude_mm > 0.0 {
        let a = jitter.displacement_amplitude_mm;
        let f = 2.0 * std::f64::consts::PI / jitter.displacement_wavelength_mm;
        let vectors = (0..grid.len())
            .map(|idx| {
                let [i, j, k] = grid.coords(idx);
                let p = grid.affine().transform_point(&nalgebra::Point3::new(i as f64, j as f64, k as f64));
                [a * (f * p.y + phases[0]).sin(), a * (f * p.x + phases[1]).sin(), 0.0]
            })
            .collect();
        transform = transform.with_displacement(DisplacementField::new(grid.clone(), vectors)?);
    }
    Ok(transform)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "ORG")]
    Org,
    #[serde(rename = "ORG+DA")]
    Da,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Org => "ORG",
            Arm::Da => "ORG+DA",
        }
    }
}

/// Scores of one trained segmenter, averaged over the test phantoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub seed: u64,
    pub arm: Arm,
    pub n_train_images: usize,
    pub dsc: f64,
    /// Mean over test images where it is defined.
    pub sensitivity: Option<f64>,
    pub precision: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub org: ArmResult,
    pub da: ArmResult,
    /// Lesion voxels in the synthetic training images.
    pub transplanted_voxels: usize,
    pub warnings: Vec<String>,
}

/// Paired ORG vs ORG+DA comparison of one metric across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedSummary {
    pub metric: String,
    pub n: usize,
    pub mean_org: f64,
    pub mean_da: f64,
    pub mean_delta: f64,
    pub std_delta: f64,
    /// Seeds with DA − ORG > 0.
    pub positive: usize,
    /// Paired t statistic and two-sided p-value; `None` when the deltas have no spread.
    pub t_statistic: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub n_train_real: usize,
    pub augmentations_per_image: usize,
    pub seeds: Vec<SeedResult>,
    pub summary: Vec<PairedSummary>,
}

pub const METRICS: [&str; 3] = ["dsc", "sensitivity", "precision"];

fn metric_value(r: &ArmResult, metric: &str) -> Option<f64> {
    match metric {
        "dsc" => Some(r.dsc),
        "sensitivity" => r.sensitivity,
        "precision" => r.precision,
        _ => None,
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean, sample standard deviation, paired t statistic and two-sided p-value of `deltas`.
pub fn paired_t(deltas: &[f64]) -> (f64, f64, Option<f64>, Option<f64>) {
    let n = deltas.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, None, None);
    }
    let m = mean(deltas);
    if n < 2 {
        return (m, f64::NAN, None, None);
    }
    let sd = (deltas.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    if !(sd > 0.0) {
        return (m, sd, None, None);
    }
    let t = m / (sd / (n as f64).sqrt());
    let p = StudentsT::new(0.0, 1.0, (n - 1) as f64).ok().map(|d| 2.0 * (1.0 - d.cdf(t.abs())));
    (m, sd, Some(t), p)
}

impl ExperimentReport {
    /// Every trained model, ORG before ORG+DA for each seed.
    pub fn entries(&self) -> Vec<&ArmResult> {
        self.seeds.iter().flat_map(|s| [&s.org, &s.da]).collect()
    }

    pub fn summary_for(&self, metric: &str) -> Option<&PairedSummary> {
        self.summary.iter().find(|s| s.metric == metric)
    }

    fn summarize(seeds: &[SeedResult]) -> Vec<PairedSummary> {
        METRICS
            .iter()
            .map(|&metric| {
                let pairs: Vec<(f64, f64)> = seeds
                    .iter()
                    .filter_map(|s| Some((metric_value(&s.org, metric)?, metric_value(&s.da, metric)?)))
                    .collect();
                let deltas: Vec<f64> = pairs.iter().map(|(o, d)| d - o).collect();
                let (mean_delta, std_delta, t_statistic, p_value) = paired_t(&deltas);
                PairedSummary {
                    metric: metric.into(),
                    n: pairs.len(),
                    mean_org: mean(&pairs.iter().map(|p| p.0).collect::<Vec<_>>()),
                    mean_da: mean(&pairs.iter().map(|p| p.1).collect::<Vec<_>>()),
                    mean_delta,
                    std_delta,
                    positive: deltas.iter().filter(|&&d| d > 0.0).count(),
                    t_statistic,
                    p_value,
                }
            })
            .collect()
    }

    /// One row per trained model: `seed,arm,n_train_images,dsc,sensitivity,precision,best_epoch,epochs_run`.
    pub fn write_results_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["seed", "arm", "n_train_images", "dsc", "sensitivity", "precision", "best_epoch", "epochs_run"])?;
        for r in self.entries() {
            w.write_record([
                r.seed.to_string(),
                r.arm.name().to_string(),
                r.n_train_images.to_string(),
                fmt(Some(r.dsc)),
                fmt(r.sensitivity),
                fmt(r.precision),
                r.best_epoch.to_string(),
                r.epochs_run.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["metric", "n", "mean_org", "mean_da", "mean_delta", "std_delta", "positive", "t_statistic", "p_value"])?;
        for s in &self.summary {
            w.write_record([
                s.metric.clone(),
                s.n.to_string(),
                fmt(Some(s.mean_org)),
                fmt(Some(s.mean_da)),
                fmt(Some(s.mean_delta)),
                fmt(Some(s.std_delta)),
                s.positive.to_string(),
                fmt(s.t_statistic),
                fmt(s.p_value),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

fn fmt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.6}"),
        _ => "NA".into(),
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| mean(&v))
}

fn run_arm(
    seed: u64,
    arm: Arm,
    images: &[LabeledImage],
    tests: &[LabeledImage],
    segmenter: &SegmenterConfig,
) -> Result<ArmResult> {
    let (model, history) = train_segmenter(images, segmenter)?;
    let mut scores = Vec::with_capacity(tests.len());
    for t in tests {
        let seg = model.predict(&t.t1, &t.flair, &t.brain)?;
        scores.push(score_segmentation(&seg, &t.lesion)?);
    }
    Ok(ArmResult {
        seed,
        arm,
        n_train_images: images.len(),
        dsc: mean(&scores.iter().map(|s| s.dsc).collect::<Vec<_>>()),
        sensitivity: mean_defined(scores.iter().map(|s| s.sensitivity)),
        precision: mean_defined(scores.iter().map(|s| s.precision)),
        best_epoch: history.best_epoch,
        epochs_run: history.epochs.len(),
    })
}

fn labeled(p: Phantom) -> LabeledImage {
    LabeledImage { t1: p.t1, flair: p.flair, brain: p.brain, lesion: p.lesion }
}

fn run_seed(config: &ExperimentConfig, generator: &GeneratorModel<f32>, seed: u64, out_dir: Option<&Path>) -> Result<SeedResult> {
    let mut real = Vec::with_capacity(config.n_train_real);
    let mut synthetic = Vec::new();
    let mut warnings = Vec::new();
    let seed_dir = out_dir.map(|d| d.join(format!("seed_{seed}")));
    if let (Some(dir), true) = (&seed_dir, config.write_volumes) {
        std::fs::create_dir_all(dir)?;
    }
    let lesion_free = config.phantom.lesion_free();
    for r in 0..config.n_train_real as u64 {
        let source = make_phantom(&config.phantom, derive_seed(seed, Stage::TrainPhantom, r))?;
        let prepared = prepare_phantom(&source, &config.gammas, derive_seed(seed, Stage::Fill, r))?;
        for a in 0..config.augmentations_per_image as u64 {
            let index = r * config.augmentations_per_image as u64 + a;
            let target = make_phantom(&lesion_free, derive_seed(seed, Stage::TargetPhantom, index))?;
            let target_prepared = prepare_phantom(&target, &config.gammas, derive_seed(seed, Stage::Fill, 1 << 32 | index))?;
            let transform =
                random_transform(target.brain.grid(), &config.transform, a % 2 == 1, derive_seed(seed, Stage::Transform, index))?;
            let spec = TransplantSpec::new(source.lesion.clone(), prepared.bank.clone(), transform);
            let t = &target_prepared;
            let result = transplant(generator, [&t.filled[0], &t.filled[1]], &t.bank, &t.brain, t.norm, &spec)?;
            warnings.extend(result.warnings.iter().map(|w| format!("train {r} copy {a}: {w}")));
            let [t1, flair] = result.images;
            if let (Some(dir), true) = (&seed_dir, config.write_volumes) {
                write_volume(dir.join(format!("synthetic_{r}_{a}_t1.nii.gz")), &t1, None)?;
                write_volume(dir.join(format!("synthetic_{r}_{a}_flair.nii.gz")), &flair, None)?;
                write_mask(dir.join(format!("synthetic_{r}_{a}_lesion.nii.gz")), &result.lesion, None)?;
            }
            synthetic.push(LabeledImage { t1, flair, brain: target.brain, lesion: result.lesion });
        }
        real.push(labeled(source));
    }
    let tests: Vec<LabeledImage> = (0..config.n_test as u64)
        .map(|t| make_phantom(&config.phantom, derive_seed(seed, Stage::TestPhantom, t)).map(labeled))
        .collect::<Result<_>>()?;
    let segmenter = SegmenterConfig { rng_seed: derive_seed(seed, Stage::Segmenter, 0), ..config.segmenter.clone() };
    let org = run_arm(seed, Arm::Org, &real, &tests, &segmenter)?;
    let transplanted_voxels = synthetic.iter().map(|s| s.lesion.count()).sum();
    let mut augmented = real;
    augmented.extend(synthetic);
    let da = run_arm(seed, Arm::Da, &augmented, &tests, &segmenter)?;
    Ok(SeedResult { seed, org, da, transplanted_voxels, warnings })
}

/// ORG vs ORG+DA for every configured seed. Reports (and volumes when enabled) are
/// written to `out_dir` when given.
pub fn run_one_image_experiment(
    config: &ExperimentConfig,
    generator: &GeneratorModel<f32>,
    out_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    config.validate()?;
    if generator.config().bands() != config.gammas.len() {
        return Err(Error::InvalidConfig(format!(
            "generator expects {} bands, experiment uses {}",
            generator.config().bands(),
            config.gammas.len()
        )));
    }
    let seeds = config.seeds.iter().map(|&s| run_seed(config, generator, s, out_dir)).collect::<Result<Vec<_>>>()?;
    let report = ExperimentReport {
        n_train_real: config.n_train_real,
        augmentations_per_image: config.augmentations_per_image,
        summary: ExperimentReport::summarize(&seeds),
        seeds,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        report.write_results_csv(dir.join("results.csv"))?;
        report.write_summary_csv(dir.join("summary.csv"))?;
        report.write_json(dir.join("report.json"))?;
    }
    Ok(report)
}

/// One curve point: a metric of one arm for one seed at one training-set size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub size: usize,
    pub arm: Arm,
    pub metric: String,
    pub seed: u64,
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub reports: Vec<ExperimentReport>,
}

impl SweepReport {
    pub fn curves(&self) -> Vec<CurveRow> {
        let mut rows = Vec::new();
        for report in &self.reports {
            for r in report.entries() {
                for metric in METRICS {
                    rows.push(CurveRow {
                        size: report.n_train_real,
                        arm: r.arm,
                        metric: metric.into(),
                        seed: r.seed,
                        value: metric_value(r, metric),
                    });
                }
            }
        }
        rows
    }

    pub fn write_curves_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["size", "arm", "metric", "seed", "value"])?;
        for r in self.curves() {
            w.write_record([r.size.to_string(), r.arm.name().into(), r.metric, r.seed.to_string(), fmt(r.value)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// DSC, sensitivity and precision panels; ORG in blue, ORG+DA in red, seed means.
    pub fn plot(&self) -> image::RgbImage {
        let panels: Vec<Panel> = METRICS
            .iter()
            .map(|&metric| {
                let series = [(Arm::Org, [30, 90, 200]), (Arm::Da, [210, 40, 40])]
                    .into_iter()
                    .map(|(arm, color)| {
                        let points = self
                            .reports
                            .iter()
                            .map(|rep| {
                                let vals = rep.entries().into_iter().filter(|r| r.arm == arm).map(|r| metric_value(r, metric));
                                (rep.n_train_real as f64, mean_defined(vals).unwrap_or(f64::NAN))
                            })
                            .collect();
                        Series { points, color }
                    })
                    .collect();
                Panel { series, y_range: Some((0.0, 1.0)) }
            })
            .collect();
        line_plot(&panels)
    }
}

/// Repeat the comparison for each training-set size; writes `curves.csv` and
/// `curves.png` (plus each size's reports under `size_<n>/`) when `out_dir` is given.
pub fn sweep_training_size(
    config: &ExperimentConfig,
    generator: &GeneratorModel<f32>,
    sizes: &[usize],
    out_dir: Option<&Path>,
) -> Result<SweepReport> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::InvalidConfig("sweep sizes must be non-empty and positive".into()));
    }
    let mut reports = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let c = ExperimentConfig { n_train_real: size, ..config.clone() };
        let dir = out_dir.map(|d| d.join(format!("size_{size}")));
        reports.push(run_one_image_experiment(&c, generator, dir.as_deref())?);
    }
    let sweep = SweepReport { reports };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        sweep.write_curves_csv(dir.join("curves.csv"))?;
        save_png(&sweep.plot(), dir.join("curves.png"))?;
    }
    Ok(sweep)
}
