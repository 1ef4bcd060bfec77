use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::masking::{build_bank, TissueStats, DEFAULT_GAMMAS};
use crate::normalize::NormalizationParams;
use crate::volume::{BinaryMask3D, Grid, Volume3D};

fn tiny() -> GeneratorConfig {
    GeneratorConfig { base_width: 4, patch_size: 16, patch_stride: 8, batch_size: 4, ..GeneratorConfig::default() }
}

fn random_input<T: Real>(c: &GeneratorConfig, n: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = c.input_channels * n * c.patch_size * c.patch_size;
    Tensor::from_vec(c.input_channels, n, c.patch_size, c.patch_size, (0..len).map(|_| T::of(rng.random())).collect())
}

fn random_target<T: Real>(c: &GeneratorConfig, n: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = n * c.patch_size * c.patch_size;
    Tensor::from_vec(1, n, c.patch_size, c.patch_size, (0..len).map(|_| T::of(rng.random())).collect())
}

#[test]
fn default_config_matches_training_protocol() {
    let c = GeneratorConfig::default();
    assert_eq!((c.patch_size, c.patch_stride, c.batch_size), (64, 32, 32));
    assert_eq!((c.max_epochs, c.patience), (200, 15));
    assert_eq!((c.input_channels, c.latent_channels, c.levels), (9, 32, 3));
    assert_eq!(c.train_fraction, 0.70);
    c.validate().unwrap();
}

#[test]
fn invalid_configs_rejected() {
    let bad_patch = GeneratorConfig { patch_size: 20, ..tiny() };
    assert!(bad_patch.validate().is_err());
    let bad_fraction = GeneratorConfig { train_fraction: 1.0, ..tiny() };
    assert!(bad_fraction.validate().is_err());
}

#[test]
fn latent_shape_and_determinism() {
    let c = tiny();
    let model = GeneratorModel::<f32>::new(c.clone()).unwrap();
    let x = random_input::<f32>(&c, 2, 1);
    let z = model.encode(Modality::T1, &x).unwrap();
    assert_eq!(z.shape(), [32, 2, 16, 16]);
    assert_eq!(z, model.encode(Modality::T1, &x).unwrap());
    let wrong = Tensor::<f32>::zeros(8, 1, 16, 16);
    assert!(matches!(model.encode(Modality::T1, &wrong), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn zero_head_gives_zero_latent() {
    let c = tiny();
    let mut model = GeneratorModel::<f64>::new(c.clone()).unwrap();
    model.param_mut("encoder_flair.head.weight").unwrap().fill(0.0);
    model.param_mut("encoder_flair.head.bias").unwrap().fill(0.0);
    let z = model.encode(Modality::Flair, &random_input(&c, 3, 2)).unwrap();
    assert!(z.data.iter().all(|&v| v == 0.0));
}

#[test]
fn six_outputs_with_expected_shapes() {
    let c = tiny();
    let model = GeneratorModel::<f32>::new(c.clone()).unwrap();
    let out = model.forward(&random_input(&c, 2, 3), &random_input(&c, 2, 4)).unwrap();
    assert_eq!(out.iter().count(), 6);
    assert!(out.iter().all(|t| t.shape() == [1, 2, 16, 16]));
    let again = model.forward(&random_input(&c, 2, 3), &random_input(&c, 2, 4)).unwrap();
    assert_eq!(out, again);
    let inferred = model.infer(&random_input(&c, 2, 3), &random_input(&c, 2, 4)).unwrap();
    assert_eq!(&inferred[0], out.fused(Modality::T1));
    assert_eq!(&inferred[1], out.fused(Modality::Flair));
}

#[test]
fn coinciding_latents_give_identical_decoder_outputs() {
    let c = tiny();
    let mut model = GeneratorModel::<f64>::new(c.clone()).unwrap();
    // copy the T1 encoder into the FLAIR encoder so both latents coincide
    let names: Vec<String> = model
        .layout()
        .entries()
        .iter()
        .filter(|e| e.name.starts_with("encoder_t1."))
        .map(|e| e.name.clone())
        .collect();
    for name in names {
        let src = model.layout().get(&name).unwrap().range();
        let dst = model.layout().get(&name.replace("encoder_t1.", "encoder_flair.")).unwrap().range();
        let values = model.params()[src].to_vec();
        model.params_mut()[dst].copy_from_slice(&values);
    }
    let x = random_input(&c, 1, 5);
    let out = model.forward(&x, &x).unwrap();
    for d in Modality::ALL {
        let a = out.get(d, LatentSource::T1);
        assert_eq!(a, out.get(d, LatentSource::Flair));
        assert_eq!(a, out.get(d, LatentSource::Fused));
    }
}

fn outputs_from(t: &[Tensor<f64>; 6]) -> GeneratorOutputs<f64> {
    GeneratorOutputs {
        outputs: [[t[0].clone(), t[1].clone(), t[2].clone()], [t[3].clone(), t[4].clone(), t[5].clone()]],
    }
}

#[test]
fn loss_reference_values() {
    let c = tiny();
    let t1 = random_target::<f64>(&c, 2, 1);
    let fl = random_target::<f64>(&c, 2, 2);
    let exact = [t1.clone(), t1.clone(), t1.clone(), fl.clone(), fl.clone(), fl.clone()];
    assert_eq!(loss(&outputs_from(&exact), &t1, &fl).unwrap(), 0.0);
    let plus_one = exact.clone().map(|t| t.map(|v| v + 1.0));
    assert!((loss(&outputs_from(&plus_one), &t1, &fl).unwrap() - 1.0).abs() < 1e-12);
    let delta = 0.3;
    let mut one_off = exact.clone();
    one_off[4] = one_off[4].map(|v| v + delta);
    assert!((loss(&outputs_from(&one_off), &t1, &fl).unwrap() - delta * delta / 6.0).abs() < 1e-12);
}

#[test]
fn gradient_matches_central_differences() {
    let c = tiny();
    let model = GeneratorModel::<f64>::new(c.clone()).unwrap();
    let (t1, fl) = (random_input::<f64>(&c, 2, 10), random_input::<f64>(&c, 2, 11));
    let (t1t, flt) = (random_target::<f64>(&c, 2, 12), random_target::<f64>(&c, 2, 13));
    let (_, grad) = model.loss_and_gradient(&t1, &fl, &t1t, &flt).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let h = 1e-4;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < 120 {
        let i = rng.random_range(0..model.params().len());
        let eval = |delta: f64| {
            let mut m = model.clone();
            m.params_mut()[i] += delta;
            loss(&m.forward(&t1, &fl).unwrap(), &t1t, &flt).unwrap()
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let scale = fd.abs().max(grad[i].abs()).max(1e-7);
        worst = worst.max((fd - grad[i]).abs() / scale);
        checked += 1;
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn skip_connections_carry_signal() {
    let c = tiny();
    let mut model = GeneratorModel::<f64>::new(c.clone()).unwrap();
    let names: Vec<String> =
        model.layout().entries().iter().filter(|e| e.name.contains(".bottleneck.")).map(|e| e.name.clone()).collect();
    assert_eq!(names.len(), 16);
    for n in names {
        model.param_mut(&n).unwrap().fill(0.0);
    }
    let out = model.forward(&random_input(&c, 1, 20), &random_input(&c, 1, 21)).unwrap();
    assert!(out.iter().all(|t| t.data.iter().any(|&v| v.abs() > 1e-9)));
}

proptest! {
    #[test]
    fn fuse_laws(a in proptest::collection::vec(-5.0f64..5.0, 12), b in proptest::collection::vec(-5.0f64..5.0, 12)) {
        let x = Tensor::from_vec(3, 1, 2, 2, a);
        let y = Tensor::from_vec(3, 1, 2, 2, b);
        prop_assert_eq!(fuse(&x, &x).unwrap(), x.clone());
        prop_assert_eq!(fuse(&x, &y).unwrap(), fuse(&y, &x).unwrap());
        prop_assert_eq!(fuse(&x, &x.map(|v| v - 1.0)).unwrap(), x.clone());
        let f = fuse(&x, &y).unwrap();
        let bigger = fuse(&x.map(|v| v + 0.5), &y).unwrap();
        prop_assert!(f.data.iter().zip(&bigger.data).all(|(p, q)| q >= p));
    }
}

#[test]
fn fuse_rejects_shape_mismatch() {
    let a = Tensor::<f32>::zeros(2, 1, 2, 2);
    let b = Tensor::<f32>::zeros(3, 1, 2, 2);
    assert!(fuse(&a, &b).is_err());
}

/// Subject on a `dims` grid whose FLAIR has a bright block; brain given by `brain`.
fn subject(dims: [usize; 3], brain: impl Fn(usize, usize, usize) -> bool) -> PreparedSubject {
    let g = Grid::with_spacing(dims, [1.0; 3]).unwrap();
    let brain = BinaryMask3D::from_fn(g.clone(), brain);
    let lesion = |i: usize, j: usize| (10..14).contains(&i) && (10..14).contains(&j);
    let t1 = Volume3D::from_fn(g.clone(), |i, j, _| if lesion(i, j) { 40.0 } else { 80.0 + (i % 3) as f64 });
    let flair = Volume3D::from_fn(g.clone(), |i, j, _| if lesion(i, j) { 160.0 } else { 90.0 + (j % 3) as f64 });
    let bank = build_bank(&flair, &TissueStats::new(100.0, 10.0).unwrap(), &DEFAULT_GAMMAS, &brain).unwrap();
    let norm = [NormalizationParams::new(30.0, 90.0).unwrap(), NormalizationParams::new(80.0, 170.0).unwrap()];
    PreparedSubject { original: [t1.clone(), flair.clone()], filled: [t1, flair], bank, brain, norm }
}

#[test]
fn patch_origins_follow_centre_rule() {
    let s = subject([64, 64, 1], |_, _, _| true);
    let samples = extract_patches(&s, &GeneratorConfig::default()).unwrap();
    // origins {0,32}²; windows at 32 have their centre at 64, outside the volume
    let origins: Vec<(usize, usize)> = samples.iter().map(|p| (p.origin.x, p.origin.y)).collect();
    assert_eq!(origins, vec![(0, 0)]);

    let c = tiny();
    let s = subject([32, 32, 2], |i, _, _| i < 20);
    let samples = extract_patches(&s, &c).unwrap();
    let mut expected = Vec::new();
    for k in 0..2 {
        for y in [0, 8, 16, 24] {
            for x in [0, 8, 16, 24] {
                if x + 8 < 20 && y + 8 < 32 {
                    expected.push((k, x, y));
                }
            }
        }
    }
    let got: Vec<(usize, usize, usize)> = samples.iter().map(|p| (p.origin.slice, p.origin.x, p.origin.y)).collect();
    assert_eq!(got, expected);
    for p in &samples {
        for t in &p.targets {
            assert_eq!(t.len(), 16 * 16);
            assert!(t.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(p.inputs[0].len(), 9 * 256);
    }
}

#[test]
fn patch_channels_hold_bands_in_order() {
    let c = tiny();
    let s = subject([32, 32, 1], |_, _, _| true);
    let samples = extract_patches(&s, &c).unwrap();
    let first = &samples[0];
    assert_eq!(first.origin, PatchOrigin { slice: 0, x: 0, y: 0 });
    // FLAIR 160 with mu 100 sigma 10 lies above 127: top band (channel 8)
    let plane = 256;
    let at = |ch: usize, x: usize, y: usize| first.inputs[1][ch * plane + y * 16 + x];
    assert_eq!(at(8, 11, 11), 1.0);
    assert_eq!(at(1, 11, 11), 0.0);
    assert_eq!(at(8, 2, 2), 0.0);
    assert!((at(0, 11, 11) - 80.0 / 90.0).abs() < 1e-6);
}

#[test]
fn empty_brain_yields_error() {
    let mut s = subject([32, 32, 1], |_, _, _| true);
    s.brain = BinaryMask3D::empty(s.brain.grid().clone());
    assert!(matches!(extract_patches(&s, &tiny()), Err(Error::EmptyMask(_))));
}

#[test]
fn early_stopping_after_flat_epochs() {
    let mut es = EarlyStopping::new(15);
    assert_eq!(es.observe(0, 1.0), StopDecision::Improved);
    for e in 1..15 {
        assert_eq!(es.observe(e, 1.0), StopDecision::Continue, "epoch {e}");
    }
    assert_eq!(es.observe(15, 1.0), StopDecision::Stop);
    assert_eq!(es.best(), (0, 1.0));
}

#[test]
fn overfits_a_repeated_sample() {
    let s = subject([16, 16, 1], |_, _, _| true);
    let c = GeneratorConfig {
        max_epochs: 1000,
        patience: 1000,
        batch_size: 2,
        optimizer: crate::nn::OptimizerConfig { learning_rate: 3e-3, ..Default::default() },
        ..tiny()
    };
    let sample = extract_patches(&s, &c).unwrap().remove(0);
    let samples = vec![sample.clone(), sample.clone(), sample];
    let (_, history) = train::<f32>(&samples, &c).unwrap();
    let last = history.epochs.last().unwrap();
    assert!(last.train_loss <= 1e-3, "final train loss {}", last.train_loss);
}

#[test]
fn training_is_deterministic() {
    let s = subject([32, 32, 1], |_, _, _| true);
    let c = GeneratorConfig { max_epochs: 1, ..tiny() };
    let samples = extract_patches(&s, &c).unwrap();
    let (m1, h1) = train::<f32>(&samples, &c).unwrap();
    let (m2, h2) = train::<f32>(&samples, &c).unwrap();
    assert_eq!(h1.epochs[0].train_loss.to_bits(), h2.epochs[0].train_loss.to_bits());
    let checksum = |m: &GeneratorModel<f32>| m.params().iter().fold(0u64, |acc, v| acc.rotate_left(5) ^ v.to_bits() as u64);
    assert_eq!(checksum(&m1), checksum(&m2));
    assert_eq!((h1.n_train, h1.n_val), (6, 3));
}

#[test]
fn training_needs_two_samples() {
    let s = subject([16, 16, 1], |_, _, _| true);
    let samples = extract_patches(&s, &tiny()).unwrap();
    assert_eq!(samples.len(), 1);
    assert!(train::<f32>(&samples, &tiny()).is_err());
}

#[test]
fn constant_model_output_fills_brain() {
    let c = tiny();
    let mut model = GeneratorModel::<f64>::new(c.clone()).unwrap();
    for d in ["decoder_t1", "decoder_flair"] {
        model.param_mut(&format!("{d}.head.weight")).unwrap().fill(0.0);
        model.param_mut(&format!("{d}.head.bias")).unwrap().fill(0.25);
    }
    let s = subject([20, 24, 2], |i, j, _| (3..17).contains(&i) && j > 2);
    let out = synthesize(&model, [&s.filled[0], &s.filled[1]], &s.bank, &s.brain, s.norm).unwrap();
    for m in 0..2 {
        let expected = s.norm[m].inverse(0.25);
        for idx in 0..s.brain.data().len() {
            if s.brain.data()[idx] {
                assert!((out[m].data()[idx] - expected).abs() < 1e-9);
            } else {
                assert_eq!(out[m].data()[idx], s.filled[m].data()[idx]);
            }
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    let c = tiny();
    let model = GeneratorModel::<f32>::new(c.clone()).unwrap();
    save_model(&path, &model).unwrap();
    let back = load_model::<f32>(&path).unwrap();
    assert_eq!(back.params(), model.params());
    let (a, b) = (random_input::<f32>(&c, 2, 1), random_input::<f32>(&c, 2, 2));
    assert_eq!(model.forward(&a, &b).unwrap(), back.forward(&a, &b).unwrap());

    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.bin");
    std::fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
    assert!(matches!(load_model::<f32>(&cut), Err(Error::Corrupt { .. })));

    let other = GeneratorConfig { base_width: 8, ..c.clone() };
    assert!(matches!(load_model_expecting::<f32>(&path, &other), Err(Error::InvalidConfig(_))));
    load_model_expecting::<f32>(&path, &GeneratorConfig { max_epochs: 3, ..c }).unwrap();

    let mut wrong_version = bytes.clone();
    wrong_version[8] = 9;
    std::fs::write(&cut, &wrong_version).unwrap();
    assert!(matches!(load_model::<f32>(&cut), Err(Error::VersionMismatch { found: 9, .. })));
    assert!(load_model::<f64>(&path).is_err());
}
