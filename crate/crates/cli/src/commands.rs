//! Subcommand implementations.

use std::path::{Path, PathBuf};

use lesiongen::experiment::{run_one_image_experiment, sweep_training_size, train_experiment_generator, ExperimentConfig};
use lesiongen::io::{self, Header};
use lesiongen::metrics::{non_background, score_segmentation, segmentation_rows, similarity, similarity_rows, write_metric_csv};
use lesiongen::normalize::{DEFAULT_HIGH_PERCENTILE, DEFAULT_LOW_PERCENTILE};
use lesiongen::phantom::{make_phantom, PhantomSpec};
use lesiongen::render::{montage, save_png, MontageOptions};
use lesiongen::synthesis::{extract_patches, load_model, save_model, synthesize, train_with, PreparedSubject};
use lesiongen::transplant::{transplant, GraftMode};
use lesiongen::{
    build_bank, estimate_gm_stats, fill_wmh, normalize, BinaryMask3D, FillConfig, GeneratorConfig, GeneratorModel,
    IntensityLevelBank, NormalizationParams, SpatialTransform, SsimParams, TransplantSpec, Volume3D, DEFAULT_GAMMAS,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::{PipelineManifest, Subject};
use crate::provenance::Provenance;
use crate::{Command, ImageArgs};

const FILLED_T1: &str = "filled_t1.nii.gz";
const FILLED_FLAIR: &str = "filled_flair.nii.gz";
const NORMALIZATION: &str = "normalization.json";
const PROVENANCE: &str = "provenance.json";

/// Intensity mapping stored by `fill` and read back by `synthesize`/`transplant`.
#[derive(Debug, Serialize, Deserialize)]
struct NormalizationFile {
    t1: NormalizationParams,
    flair: NormalizationParams,
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::MakeMasks { flair, brain, gm, gammas, out_dir } => make_masks(&flair, brain.as_deref(), gm.as_deref(), gammas, &out_dir),
        Command::Fill { images, bank_dir, wm, seed, out_dir } => fill(&images, &bank_dir, wm.as_deref(), seed, &out_dir),
        Command::Train { manifest, t1, flair, brain, gm, wm, gammas, config, seed, out_dir } => {
            let subjects = match (manifest, t1, flair) {
                (Some(m), _, _) => PipelineManifest::load(&m)?.subjects,
                (None, Some(t1), Some(flair)) => {
                    vec![Subject { id: "subject".into(), t1, flair, gm, brain, wm, ..Subject::default() }]
                }
                _ => return Err(CliError::Usage("train needs --manifest or --t1 and --flair".into())),
            };
            train(subjects, gammas, config.as_deref(), seed, &out_dir)
        }
        Command::Synthesize { model, fill_dir, bank_dir, brain, out_dir } => {
            synthesize_cmd(&model, &fill_dir, &bank_dir, brain.as_deref(), &out_dir)
        }
        Command::Transplant {
            model,
            fill_dir,
            bank_dir,
            brain,
            source_lesion,
            source_bank_dir,
            affine,
            displacement,
            dilation,
            additive,
            out_dir,
        } => transplant_cmd(TransplantArgs {
            model,
            fill_dir,
            bank_dir,
            brain,
            source_lesion,
            source_bank_dir,
            affine,
            displacement,
            dilation,
            additive,
            out_dir,
        }),
        Command::Evaluate { seg, gt, generated, real, brain, window, image_id, out_dir } => {
            evaluate(seg.zip(gt), generated.zip(real), brain.as_deref(), window, &image_id, &out_dir)
        }
        Command::Experiment { config, model, sizes, out_dir } => experiment(config.as_deref(), model.as_deref(), sizes, &out_dir),
        Command::Phantom { config, seed, count, lesion_free, out_dir } => phantom(config.as_deref(), seed, count, lesion_free, &out_dir),
        Command::Render { volume, outline, slices, range, scale, out } => {
            render(&volume, outline.as_deref(), slices, range, scale, &out)
        }
    }
}

/// Fail with exit code 3 before doing any work if an input is absent.
fn require<'a>(paths: impl IntoIterator<Item = &'a Path>) -> CliResult<()> {
    match paths.into_iter().find(|p| !p.exists()) {
        Some(p) => Err(CliError::MissingInput(p.to_path_buf())),
        None => Ok(()),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn read_text(path: Option<&Path>) -> CliResult<String> {
    Ok(match path {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    })
}

fn parse_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>, text: &str) -> CliResult<T> {
    match path {
        Some(p) => {
            toml::from_str(text).map_err(|e| lesiongen::Error::Parse { path: p.into(), detail: e.to_string() }.into())
        }
        None => Ok(T::default()),
    }
}

/// Brain mask from a file, else the voxels of `fallback` above zero.
fn brain_or(path: Option<&Path>, fallback: &Volume3D) -> CliResult<BinaryMask3D> {
    Ok(match path {
        Some(p) => io::read_mask(p)?.0,
        None => BinaryMask3D::threshold(fallback, |v| v > 0.0),
    })
}

fn read_mask_opt(path: Option<&Path>) -> CliResult<Option<BinaryMask3D>> {
    Ok(match path {
        Some(p) => Some(io::read_mask(p)?.0),
        None => None,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(lesiongen::Error::from)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn make_masks(flair_path: &Path, brain: Option<&Path>, gm: Option<&Path>, gammas: Option<Vec<f64>>, out_dir: &Path) -> CliResult<()> {
    require([Some(flair_path), brain, gm].into_iter().flatten())?;
    let gammas = gammas.unwrap_or_else(|| DEFAULT_GAMMAS.to_vec());
    let (flair, header) = io::read_volume(flair_path)?;
    let brain_mask = brain_or(brain, &flair)?;
    let gm_mask = read_mask_opt(gm)?;
    let stats = estimate_gm_stats(&flair, gm_mask.as_ref(), &brain_mask)?;
    let bank = build_bank(&flair, &stats, &gammas, &brain_mask)?;
    create_dir(out_dir)?;
    bank.save(out_dir, Some(&header))?;
    let mut prov = Provenance::new("make-masks", &format!("{gammas:?}"), vec![]).input(flair_path);
    for p in [brain, gm].into_iter().flatten() {
        prov = prov.input(p);
    }
    prov.output(out_dir);
    prov.write(&out_dir.join(PROVENANCE))
}

fn fill(images: &ImageArgs, bank_dir: &Path, wm: Option<&Path>, seed: u64, out_dir: &Path) -> CliResult<()> {
    require([Some(images.t1.as_path()), Some(images.flair.as_path()), Some(bank_dir), images.brain.as_deref(), wm].into_iter().flatten())?;
    let (t1, t1_header) = io::read_volume(&images.t1)?;
    let (flair, flair_header) = io::read_volume(&images.flair)?;
    t1.grid().ensure_matches(flair.grid(), "t1/flair")?;
    let bank = IntensityLevelBank::load(bank_dir)?;
    bank.grid().ensure_matches(flair.grid(), "bank/flair")?;
    let brain = brain_or(images.brain.as_deref(), &flair)?;
    let config = FillConfig { wm_mask: read_mask_opt(wm)?, brain_mask: Some(brain.clone()), ..FillConfig::with_seed(seed) };
    let (filled_t1, report_t1) = fill_wmh(&t1, bank.wmh(), &config)?;
    let flair_config = FillConfig { rng_seed: seed.wrapping_add(1), ..config };
    let (filled_flair, report_flair) = fill_wmh(&flair, bank.wmh(), &flair_config)?;
    let (_, n_t1) = normalize(&t1, &brain, DEFAULT_LOW_PERCENTILE, DEFAULT_HIGH_PERCENTILE)?;
    let (_, n_flair) = normalize(&flair, &brain, DEFAULT_LOW_PERCENTILE, DEFAULT_HIGH_PERCENTILE)?;

    create_dir(out_dir)?;
    let mut prov = Provenance::new("fill", "", vec![seed, seed.wrapping_add(1)])
        .input(&images.t1)
        .input(&images.flair)
        .input(bank_dir);
    for p in [images.brain.as_deref(), wm].into_iter().flatten() {
        prov = prov.input(p);
    }
    let outputs = [
        (out_dir.join(FILLED_T1), &filled_t1, &t1_header),
        (out_dir.join(FILLED_FLAIR), &filled_flair, &flair_header),
    ];
    for (path, vol, header) in &outputs {
        io::write_volume(path, vol, Some(header))?;
        prov.output(path);
    }
    let norm_path = out_dir.join(NORMALIZATION);
    write_json(&norm_path, &NormalizationFile { t1: n_t1, flair: n_flair })?;
    prov.output(&norm_path);
    let report_path = out_dir.join("fill_report.json");
    write_json(&report_path, &serde_json::json!({ "t1": report_t1, "flair": report_flair }))?;
    prov.output(&report_path);
    prov.write(&out_dir.join(PROVENANCE))
}

/// Filled images, normalization and reference header from a `fill` directory.
fn load_fill_dir(dir: &Path) -> CliResult<([Volume3D; 2], [NormalizationParams; 2], Header)> {
    let paths = [dir.join(FILLED_T1), dir.join(FILLED_FLAIR), dir.join(NORMALIZATION)];
    require(paths.iter().map(PathBuf::as_path))?;
    let (t1, header) = io::read_volume(&paths[0])?;
    let (flair, _) = io::read_volume(&paths[1])?;
    let text = std::fs::read_to_string(&paths[2])?;
    let norm: NormalizationFile = serde_json::from_str(&text).map_err(|e| lesiongen::Error::Parse { path: paths[2].clone(), detail: e.to_string() })?;
    Ok(([t1, flair], [norm.t1, norm.flair], header))
}

fn train(
    subjects: Vec<Subject>,
    gammas: Option<Vec<f64>>,
    config_path: Option<&Path>,
    seed: Option<u64>,
    out_dir: &Path,
) -> CliResult<()> {
    if subjects.is_empty() {
        return Err(CliError::Usage("no subjects to train on".into()));
    }
    let mut files: Vec<PathBuf> = config_path.into_iter().map(Path::to_path_buf).collect();
    for s in &subjects {
        files.extend([s.t1.clone(), s.flair.clone()]);
        files.extend([&s.gm, &s.brain, &s.wm, &s.bank_dir, &s.fill_dir].into_iter().flatten().cloned());
    }
    require(files.iter().map(PathBuf::as_path))?;
    let config_text = read_text(config_path)?;
    let mut config: GeneratorConfig = parse_toml(config_path, &config_text)?;
    if let Some(s) = seed {
        config.rng_seed = s;
    }
    let gammas = gammas.unwrap_or_else(|| DEFAULT_GAMMAS.to_vec());
    if gammas.len() != config.bands() {
        return Err(lesiongen::Error::InvalidConfig(format!(
            "{} gammas but the generator expects {} bands",
            gammas.len(),
            config.bands()
        ))
        .into());
    }
    config.validate()?;
    let fill_seed = seed.unwrap_or(0);

    let mut samples = Vec::new();
    for s in &subjects {
        let (t1, _) = io::read_volume(&s.t1)?;
        let (flair, _) = io::read_volume(&s.flair)?;
        let brain = brain_or(s.brain.as_deref(), &flair)?;
        let subject = match (&s.bank_dir, &s.fill_dir) {
            (Some(bank_dir), Some(fill_dir)) => {
                let bank = IntensityLevelBank::load(bank_dir)?;
                let (filled, norm, _) = load_fill_dir(fill_dir)?;
                PreparedSubject { original: [t1, flair], filled, bank, brain, norm }
            }
            _ => {
                let fill = FillConfig { wm_mask: read_mask_opt(s.wm.as_deref())?, brain_mask: Some(brain.clone()), ..FillConfig::with_seed(fill_seed) };
                let gm = read_mask_opt(s.gm.as_deref())?;
                PreparedSubject::prepare(&t1, &flair, &brain, gm.as_ref(), &gammas, &fill)?.0
            }
        };
        if subject.bank.len() != config.bands() {
            return Err(lesiongen::Error::InvalidConfig(format!("subject {} has {} bands", s.id, subject.bank.len())).into());
        }
        samples.extend(extract_patches(&subject, &config)?);
    }
    let (model, history) = train_with::<f32>(&samples, &config, |r| {
        eprintln!("epoch {:>3}  train {:.6}  val {:.6}", r.epoch, r.train_loss, r.val_loss);
    })?;

    create_dir(out_dir)?;
    let effective = toml::to_string(&config).map_err(|e| lesiongen::Error::InvalidConfig(e.to_string()))?;
    let mut prov = Provenance::new("train", &effective, vec![config.rng_seed, fill_seed]);
    for f in &files {
        prov = prov.input(f);
    }
    let model_path = out_dir.join("model.lgm");
    save_model(&model_path, &model)?;
    prov.output(&model_path);
    for (name, csv) in [("history.csv", true), ("history.json", false)] {
        let path = out_dir.join(name);
        if csv {
            history.write_csv(&path)?;
        } else {
            history.write_json(&path)?;
        }
        prov.output(&path);
    }
    let config_out = out_dir.join("generator.toml");
    std::fs::write(&config_out, &effective)?;
    prov.output(&config_out);
    prov.write(&out_dir.join(PROVENANCE))
}

fn synthesize_cmd(model_path: &Path, fill_dir: &Path, bank_dir: &Path, brain: Option<&Path>, out_dir: &Path) -> CliResult<()> {
    require([Some(model_path), Some(fill_dir), Some(bank_dir), brain].into_iter().flatten())?;
    let model: GeneratorModel<f32> = load_model(model_path)?;
    let (filled, norm, header) = load_fill_dir(fill_dir)?;
    let bank = IntensityLevelBank::load(bank_dir)?;
    let brain_mask = brain_or(brain, &filled[1])?;
    let [t1, flair] = synthesize(&model, [&filled[0], &filled[1]], &bank, &brain_mask, norm)?;

    create_dir(out_dir)?;
    let mut prov = Provenance::new("synthesize", "", vec![]).input(model_path).input(fill_dir).input(bank_dir);
    if let Some(b) = brain {
        prov = prov.input(b);
    }
    for (name, vol) in [("synthetic_t1.nii.gz", &t1), ("synthetic_flair.nii.gz", &flair)] {
        let path = out_dir.join(name);
        io::write_volume(&path, vol, Some(&header))?;
        prov.output(&path);
    }
    prov.write(&out_dir.join(PROVENANCE))
}

struct TransplantArgs {
    model: PathBuf,
    fill_dir: PathBuf,
    bank_dir: PathBuf,
    brain: Option<PathBuf>,
    source_lesion: PathBuf,
    source_bank_dir: PathBuf,
    affine: Option<PathBuf>,
    displacement: Option<PathBuf>,
    dilation: usize,
    additive: bool,
    out_dir: PathBuf,
}

fn transplant_cmd(a: TransplantArgs) -> CliResult<()> {
    let inputs: Vec<&Path> = [
        Some(a.model.as_path()),
        Some(a.fill_dir.as_path()),
        Some(a.bank_dir.as_path()),
        Some(a.source_lesion.as_path()),
        Some(a.source_bank_dir.as_path()),
        a.brain.as_deref(),
        a.affine.as_deref(),
        a.displacement.as_deref(),
    ]
    .into_iter()
    .flatten()
    .collect();
    require(inputs.iter().copied())?;
    let model: GeneratorModel<f32> = load_model(&a.model)?;
    let (filled, norm, header) = load_fill_dir(&a.fill_dir)?;
    let bank = IntensityLevelBank::load(&a.bank_dir)?;
    let brain = brain_or(a.brain.as_deref(), &filled[1])?;
    let (source_lesion, _) = io::read_mask(&a.source_lesion)?;
    let source_bank = IntensityLevelBank::load(&a.source_bank_dir)?;
    let mut transform = match &a.affine {
        Some(p) => SpatialTransform::from_affine(io::read_affine(p)?),
        None => SpatialTransform::identity(),
    };
    if let Some(p) = &a.displacement {
        transform = transform.with_displacement(io::read_displacement(p)?);
    }
    let spec = TransplantSpec {
        lesion_dilation_rounds: a.dilation,
        mode: if a.additive { GraftMode::Additive } else { GraftMode::Overwrite },
        ..TransplantSpec::new(source_lesion, source_bank, transform)
    };
    let result = transplant(&model, [&filled[0], &filled[1]], &bank, &brain, norm, &spec)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }

    create_dir(&a.out_dir)?;
    let mut prov = Provenance::new("transplant", &format!("dilation={} additive={}", a.dilation, a.additive), vec![]);
    for p in &inputs {
        prov = prov.input(p);
    }
    for (name, vol) in [("synthetic_t1.nii.gz", &result.images[0]), ("synthetic_flair.nii.gz", &result.images[1])] {
        let path = a.out_dir.join(name);
        io::write_volume(&path, vol, Some(&header))?;
        prov.output(&path);
    }
    let lesion_path = a.out_dir.join("lesion.nii.gz");
    io::write_mask(&lesion_path, &result.lesion, Some(&header))?;
    prov.output(&lesion_path);
    let bank_out = a.out_dir.join("bank");
    create_dir(&bank_out)?;
    result.bank.save(&bank_out, Some(&header))?;
    prov.output(&bank_out);
    let report_path = a.out_dir.join("transplant.json");
    write_json(&report_path, &serde_json::json!({ "lesion_voxels": result.lesion.count(), "warnings": result.warnings }))?;
    prov.output(&report_path);
    prov.write(&a.out_dir.join(PROVENANCE))
}

fn evaluate(
    seg: Option<(PathBuf, PathBuf)>,
    images: Option<(PathBuf, PathBuf)>,
    brain: Option<&Path>,
    window: usize,
    image_id: &str,
    out_dir: &Path,
) -> CliResult<()> {
    if seg.is_none() && images.is_none() {
        return Err(CliError::Usage("evaluate needs --seg/--gt and/or --generated/--real".into()));
    }
    let mut inputs: Vec<&Path> = Vec::new();
    for (a, b) in [&seg, &images].into_iter().flatten() {
        inputs.extend([a.as_path(), b.as_path()]);
    }
    inputs.extend(brain);
    require(inputs.iter().copied())?;

    let mut rows = Vec::new();
    if let Some((seg_path, gt_path)) = &seg {
        let (s, _) = io::read_mask(seg_path)?;
        let (g, _) = io::read_mask(gt_path)?;
        rows.extend(segmentation_rows(image_id, "lesion", &score_segmentation(&s, &g)?));
    }
    if let Some((gen_path, real_path)) = &images {
        let (generated, _) = io::read_volume(gen_path)?;
        let (real, _) = io::read_volume(real_path)?;
        let brain_mask = read_mask_opt(brain)?;
        let region = non_background(&real, brain_mask.as_ref());
        let params = if window == 0 { SsimParams::default() } else { SsimParams::windowed(window) };
        let report = similarity(&generated, &real, &region, if brain.is_some() { "brain" } else { "foreground" }, &params)?;
        rows.extend(similarity_rows(image_id, &report));
    }

    create_dir(out_dir)?;
    let mut prov = Provenance::new("evaluate", &format!("window={window}"), vec![]);
    for p in &inputs {
        prov = prov.input(p);
    }
    let csv_path = out_dir.join("metrics.csv");
    write_metric_csv(&csv_path, &rows)?;
    prov.output(&csv_path);
    prov.write(&out_dir.join(PROVENANCE))
}

fn experiment(config_path: Option<&Path>, model_path: Option<&Path>, sizes: Option<Vec<usize>>, out_dir: &Path) -> CliResult<()> {
    require([config_path, model_path].into_iter().flatten())?;
    let config = match config_path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    config.validate()?;
    let effective = config.to_toml_string()?;
    create_dir(out_dir)?;
    let mut prov = Provenance::new("experiment", &effective, config.seeds.clone());
    for p in [config_path, model_path].into_iter().flatten() {
        prov = prov.input(p);
    }
    let config_out = out_dir.join("experiment.toml");
    std::fs::write(&config_out, &effective)?;
    prov.output(&config_out);

    let generator: GeneratorModel<f32> = match model_path {
        Some(p) => load_model(p)?,
        None => {
            let (model, history) = train_experiment_generator(&config, |r| {
                eprintln!("generator epoch {:>3}  train {:.6}  val {:.6}", r.epoch, r.train_loss, r.val_loss);
            })?;
            let path = out_dir.join("generator.lgm");
            save_model(&path, &model)?;
            prov.output(&path);
            let hist = out_dir.join("generator_history.csv");
            history.write_csv(&hist)?;
            prov.output(&hist);
            model
        }
    };

    match sizes {
        Some(sizes) => {
            sweep_training_size(&config, &generator, &sizes, Some(out_dir))?;
            for name in ["curves.csv", "curves.png"] {
                prov.output(&out_dir.join(name));
            }
        }
        None => {
            let report = run_one_image_experiment(&config, &generator, Some(out_dir))?;
            for metric in ["dsc", "sensitivity", "precision"] {
                if let Some(s) = report.summary_for(metric) {
                    eprintln!("{metric}: ORG {:.4}  ORG+DA {:.4}  delta {:+.4}", s.mean_org, s.mean_da, s.mean_delta);
                }
            }
            for name in ["results.csv", "summary.csv", "report.json"] {
                prov.output(&out_dir.join(name));
            }
        }
    }
    prov.write(&out_dir.join(PROVENANCE))
}

fn phantom(config_path: Option<&Path>, seed: u64, count: u64, lesion_free: bool, out_dir: &Path) -> CliResult<()> {
    require(config_path)?;
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let text = read_text(config_path)?;
    let mut spec: PhantomSpec = parse_toml(config_path, &text)?;
    if lesion_free {
        spec = spec.lesion_free();
    }
    create_dir(out_dir)?;
    let seeds: Vec<u64> = (seed..seed + count).collect();
    let effective = toml::to_string(&spec).map_err(|e| lesiongen::Error::InvalidConfig(e.to_string()))?;
    let mut prov = Provenance::new("phantom", &effective, seeds.clone());
    if let Some(p) = config_path {
        prov = prov.input(p);
    }
    let mut manifest = PipelineManifest::default();
    for s in seeds {
        let p = make_phantom(&spec, s)?;
        let id = format!("phantom_{s}");
        let dir = out_dir.join(&id);
        create_dir(&dir)?;
        let header = io::header_for_grid(p.t1.grid());
        let rel = |name: &str| PathBuf::from(&id).join(name);
        for (name, vol) in [("t1.nii.gz", &p.t1), ("flair.nii.gz", &p.flair)] {
            io::write_volume(dir.join(name), vol, Some(&header))?;
            prov.output(&dir.join(name));
        }
        for (name, mask) in [("lesion.nii.gz", &p.lesion), ("gm.nii.gz", &p.gm), ("wm.nii.gz", &p.wm), ("brain.nii.gz", &p.brain)] {
            io::write_mask(dir.join(name), mask, Some(&header))?;
            prov.output(&dir.join(name));
        }
        manifest.subjects.push(Subject {
            id: id.clone(),
            t1: rel("t1.nii.gz"),
            flair: rel("flair.nii.gz"),
            gm: Some(rel("gm.nii.gz")),
            brain: Some(rel("brain.nii.gz")),
            wm: Some(rel("wm.nii.gz")),
            lesion: Some(rel("lesion.nii.gz")),
            ..Subject::default()
        });
    }
    let manifest_path = out_dir.join("manifest.toml");
    manifest.save(&manifest_path)?;
    prov.output(&manifest_path);
    prov.write(&out_dir.join(PROVENANCE))
}

fn render(volume: &Path, outline: Option<&Path>, slices: Option<Vec<usize>>, range: Option<Vec<f64>>, scale: u32, out: &Path) -> CliResult<()> {
    require([Some(volume), outline].into_iter().flatten())?;
    let (vol, _) = io::read_volume(volume)?;
    let mask = read_mask_opt(outline)?;
    let options = MontageOptions { slices, range: range.map(|r| (r[0], r[1])), scale, columns: None };
    let img = montage(&vol, mask.as_ref(), &options)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_png(&img, out)?;
    let mut prov = Provenance::new("render", &format!("{options:?}"), vec![]).input(volume);
    if let Some(p) = outline {
        prov = prov.input(p);
    }
    prov.output(out);
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    prov.write(&out.with_file_name(name))
}
