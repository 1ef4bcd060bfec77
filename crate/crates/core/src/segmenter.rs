//! Small fully convolutional lesion segmenter used to measure augmentation effects.
//!
//! A stack of same-padded 3×3 convolutions with ELU and a 1×1 logit head, trained on
//! axial patches of normalized `[T1, FLAIR]` with a positive-weighted binary
//! cross-entropy restricted to brain voxels. Patch selection, the train/validation split
//! and early stopping follow the generator's conventions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{elu, elu_backward, Adam, Conv2d, OptimizerConfig, ParamLayout, Tensor};
use crate::normalize::{normalize, DEFAULT_HIGH_PERCENTILE, DEFAULT_LOW_PERCENTILE};
use crate::synthesis::{copy_window, origins, split, EarlyStopping, EpochRecord, PatchOrigin, StopDecision, TrainingHistory};
use crate::volume::{BinaryMask3D, Volume3D};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    pub patch_size: usize,
    pub patch_stride: usize,
    /// Channels of every hidden layer.
    pub width: usize,
    /// Number of 3×3 convolutions before the head.
    pub depth: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub train_fraction: f64,
    /// Weight of lesion voxels in the loss; `None` uses `sqrt(negatives / positives)`.
    pub positive_weight: Option<f64>,
    /// Probability cut-off for the binary prediction.
    pub threshold: f64,
    pub rng_seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            patch_size: 32,
            patch_stride: 16,
            width: 12,
            depth: 3,
            batch_size: 16,
            max_epochs: 30,
            patience: 6,
            train_fraction: 0.70,
            positive_weight: None,
            threshold: 0.5,
            rng_seed: 0,
            optimizer: OptimizerConfig { learning_rate: 3e-3, ..OptimizerConfig::default() },
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("segmenter: {m}")));
        if self.patch_size == 0 || self.patch_stride == 0 || self.width == 0 || self.depth == 0 || self.batch_size == 0 {
            return bad("sizes must be positive");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        if self.positive_weight.is_some_and(|w| !(w > 0.0 && w.is_finite())) {
            return bad("positive_weight must be positive");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        Ok(())
    }
}

/// One training image with its lesion ground truth.
#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub t1: Volume3D,
    pub flair: Volume3D,
    pub brain: BinaryMask3D,
    pub lesion: BinaryMask3D,
}

/// Per-patch inputs `[T1, FLAIR]`, labels and loss weights (1 inside the brain).
#[derive(Clone, Debug)]
struct SegSample {
    input: Vec<f32>,
    target: Vec<f32>,
    weight: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct ToySegmenter {
    config: SegmenterConfig,
    convs: Vec<Conv2d>,
    params: Vec<f32>,
}

/// Normalized `[T1, FLAIR]` planes of every axial slice as a `2 × nz × ny × nx` tensor.
fn image_tensor(t1: &Volume3D, flair: &Volume3D, brain: &BinaryMask3D) -> Result<Tensor<f32>> {
    t1.grid().ensure_matches(flair.grid(), "t1/flair")?;
    t1.grid().ensure_matches(brain.grid(), "image/brain")?;
    let [nx, ny, nz] = t1.dims();
    let mut data = Vec::with_capacity(2 * t1.data().len());
    for v in [t1, flair] {
        let (n, _) = normalize(v, brain, DEFAULT_LOW_PERCENTILE, DEFAULT_HIGH_PERCENTILE)?;
        data.extend(n.data().iter().map(|&x| x as f32));
    }
    Ok(Tensor::from_vec(2, nz, ny, nx, data))
}

fn softplus(x: f32) -> f32 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl ToySegmenter {
    pub fn new(config: SegmenterConfig) -> Result<Self> {
        config.validate()?;
        let mut layout = ParamLayout::new();
        let mut convs = Vec::with_capacity(config.depth + 1);
        let mut cin = 2;
        for l in 0..config.depth {
            convs.push(Conv2d::new(&mut layout, &format!("segmenter.conv{l}"), cin, config.width, 3));
            cin = config.width;
        }
        convs.push(Conv2d::new(&mut layout, "segmenter.head", cin, 1, 1));
        let mut params = vec![0.0f32; layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        for c in &convs {
            c.init(&mut params, &mut rng);
        }
        Ok(Self { config, convs, params })
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    /// Activations after every layer; the last entry holds the logits.
    fn forward_cached(&self, x: Tensor<f32>) -> Vec<Tensor<f32>> {
        let mut acts = vec![x];
        let last = self.convs.len() - 1;
        for (l, conv) in self.convs.iter().enumerate() {
            let mut y = conv.forward(&self.params, &acts[l]);
            if l < last {
                elu(&mut y);
            }
            acts.push(y);
        }
        acts
    }

    /// Weighted BCE over the batch and its parameter gradient.
    fn loss_and_gradient(&self, x: Tensor<f32>, target: &[f32], weight: &[f32], pos_weight: f32) -> (f64, Vec<f32>) {
        let acts = self.forward_cached(x);
        let logits = acts.last().expect("head output");
        let total_w: f32 = weight.iter().sum::<f32>().max(1.0);
        let mut loss = 0.0f64;
        let mut dy = Tensor::zeros(1, logits.n, logits.h, logits.w);
        for (i, &z) in logits.data.iter().enumerate() {
            let (y, w) = (target[i], weight[i]);
            if w == 0.0 {
                continue;
            }
            loss += (w * (pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z))) as f64;
            dy.data[i] = w * (-pos_weight * y * sigmoid(-z) + (1.0 - y) * sigmoid(z)) / total_w;
        }
        let mut grads = vec![0.0f32; self.params.len()];
        for l in (0..self.convs.len()).rev() {
            let dx = self.convs[l].backward(&self.params, &mut grads, &acts[l], &dy, l > 0);
            if let Some(mut dx) = dx {
                elu_backward(&acts[l], &mut dx);
                dy = dx;
            }
        }
        (loss / total_w as f64, grads)
    }

    fn batch(&self, samples: &[&SegSample]) -> (Tensor<f32>, Vec<f32>, Vec<f32>) {
        let p = self.config.patch_size;
        let plane = p * p;
        let n = samples.len();
        let mut x = Tensor::zeros(2, n, p, p);
        let mut target = Vec::with_capacity(n * plane);
        let mut weight = Vec::with_capacity(n * plane);
        for (s, sample) in samples.iter().enumerate() {
            for c in 0..2 {
                x.plane_mut(c, s).copy_from_slice(&sample.input[c * plane..(c + 1) * plane]);
            }
            target.extend_from_slice(&sample.target);
            weight.extend_from_slice(&sample.weight);
        }
        (x, target, weight)
    }

    fn evaluate(&self, samples: &[SegSample], idx: &[usize], pos_weight: f32) -> f64 {
        let mut total = 0.0;
        let mut weight = 0.0;
        for chunk in idx.chunks(self.config.batch_size) {
            let refs: Vec<&SegSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (x, t, w) = self.batch(&refs);
            let logits = self.forward_cached(x).pop().expect("head output");
            for (i, &z) in logits.data.iter().enumerate() {
                if w[i] > 0.0 {
                    total += (w[i] * (pos_weight * t[i] * softplus(-z) + (1.0 - t[i]) * softplus(z))) as f64;
                    weight += w[i] as f64;
                }
            }
        }
        total / weight.max(1.0)
    }

    /// Lesion probability for every voxel; zero outside the brain.
    pub fn predict_probability(&self, t1: &Volume3D, flair: &Volume3D, brain: &BinaryMask3D) -> Result<Volume3D> {
        let x = image_tensor(t1, flair, brain)?;
        let logits = self.forward_cached(x).pop().expect("head output");
        let data = logits
            .data
            .iter()
            .zip(brain.data())
            .map(|(&z, &b)| if b { sigmoid(z) as f64 } else { 0.0 })
            .collect();
        Volume3D::new(t1.grid().clone(), data)
    }

    /// Binary lesion mask at the configured threshold.
    pub fn predict(&self, t1: &Volume3D, flair: &Volume3D, brain: &BinaryMask3D) -> Result<BinaryMask3D> {
        let prob = self.predict_probability(t1, flair, brain)?;
        Ok(BinaryMask3D::threshold(&prob, |p| p > self.config.threshold))
    }
}

fn extract(image: &LabeledImage, config: &SegmenterConfig) -> Result<Vec<SegSample>> {
    image.lesion.grid().ensure_matches(image.brain.grid(), "lesion/brain")?;
    let x = image_tensor(&image.t1, &image.flair, &image.brain)?;
    let dims = image.t1.dims();
    let [nx, ny, nz] = dims;
    let p = config.patch_size;
    let plane = p * p;
    let channel = x.channel_len();
    let brain = image.brain.data();
    let lesion = image.lesion.data();
    let mut out = Vec::new();
    for slice in 0..nz {
        for y in origins(ny, config.patch_stride) {
            for xo in origins(nx, config.patch_stride) {
                let (cx, cy) = (xo + p / 2, y + p / 2);
                if cx >= nx || cy >= ny || !brain[cx + nx * (cy + ny * slice)] {
                    continue;
                }
                let origin = PatchOrigin { slice, x: xo, y };
                let mut input = vec![0.0f32; 2 * plane];
                for c in 0..2 {
                    let src = &x.data[c * channel..(c + 1) * channel];
                    copy_window(dims, origin, p, &mut input[c * plane..(c + 1) * plane], |i| src[i]);
                }
                let mut target = vec![0.0f32; plane];
                copy_window(dims, origin, p, &mut target, |i| lesion[i] as u8 as f32);
                let mut weight = vec![0.0f32; plane];
                copy_window(dims, origin, p, &mut weight, |i| brain[i] as u8 as f32);
                out.push(SegSample { input, target, weight });
            }
        }
    }
    Ok(out)
}

/// Train on the patches of all `images`; returns the best-validation parameters.
pub fn train_segmenter(images: &[LabeledImage], config: &SegmenterConfig) -> Result<(ToySegmenter, TrainingHistory)> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::InsufficientSample { what: "labeled images", found: 0, required: 1 });
    }
    let mut samples = Vec::new();
    for image in images {
        samples.extend(extract(image, config)?);
    }
    if samples.len() < 2 {
        return Err(Error::InsufficientSample { what: "segmenter patches", found: samples.len(), required: 2 });
    }
    let (mut pos, mut neg) = (0.0f64, 0.0f64);
    for s in &samples {
        for (&t, &w) in s.target.iter().zip(&s.weight) {
            if w > 0.0 {
                if t > 0.5 {
                    pos += 1.0
                } else {
                    neg += 1.0
                }
            }
        }
    }
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::DegenerateLabels(format!("{pos} lesion and {neg} background voxels in the training patches")));
    }
    let pos_weight = config.positive_weight.unwrap_or_else(|| (neg / pos).sqrt()) as f32;

    let mut model = ToySegmenter::new(config.clone())?;
    let (train_idx, val_idx) = split(samples.len(), config.train_fraction, config.rng_seed);
    let mut adam = Adam::new(config.optimizer, model.params.len());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_params = model.params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(2);
    let mut order = train_idx.clone();
    let mut records = Vec::new();
    let mut stopped_early = false;
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut train_total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&SegSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (x, t, w) = model.batch(&refs);
            let (l, grads) = model.loss_and_gradient(x, &t, &w, pos_weight);
            if !l.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, detail: format!("segmenter loss {l}") });
            }
            adam.step(&mut model.params, &grads);
            train_total += l * chunk.len() as f64;
        }
        let record = EpochRecord {
            epoch,
            train_loss: train_total / order.len() as f64,
            val_loss: model.evaluate(&samples, &val_idx, pos_weight),
        };
        if !record.val_loss.is_finite() {
            return Err(Error::Divergence { epoch, detail: format!("segmenter validation loss {}", record.val_loss) });
        }
        records.push(record);
        match stopper.observe(epoch, record.val_loss) {
            StopDecision::Improved => best_params.copy_from_slice(&model.params),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_epoch, best_val_loss) = stopper.best();
    model.params = best_params;
    let history = TrainingHistory {
        epochs: records,
        best_epoch,
        best_val_loss,
        stopped_early,
        n_train: train_idx.len(),
        n_val: val_idx.len(),
        optimizer: config.optimizer,
        initialization: "he-normal fan-in, zero bias".into(),
    };
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dsc;
    use crate::phantom::{make_phantom, PhantomSpec};

    fn labeled(seed: u64) -> LabeledImage {
        let p = make_phantom(&PhantomSpec::default(), seed).unwrap();
        LabeledImage { t1: p.t1, flair: p.flair, brain: p.brain, lesion: p.lesion }
    }

    #[test]
    fn overfits_single_phantom() {
        let image = labeled(11);
        let (model, _) = train_segmenter(std::slice::from_ref(&image), &SegmenterConfig::default()).unwrap();
        let seg = model.predict(&image.t1, &image.flair, &image.brain).unwrap();
        let (d, _) = dsc(&seg, &image.lesion).unwrap();
        assert!(d >= 0.7, "DSC {d}");
    }

    #[test]
    fn no_lesions_is_degenerate() {
        let p = make_phantom(&PhantomSpec::default().lesion_free(), 2).unwrap();
        let image = LabeledImage { t1: p.t1, flair: p.flair, brain: p.brain, lesion: p.lesion };
        assert!(matches!(train_segmenter(&[image], &SegmenterConfig::default()), Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn epoch_zero_loss_reproducible() {
        let image = labeled(5);
        let config = SegmenterConfig { max_epochs: 1, ..SegmenterConfig::default() };
        let (a, ha) = train_segmenter(std::slice::from_ref(&image), &config).unwrap();
        let (b, hb) = train_segmenter(std::slice::from_ref(&image), &config).unwrap();
        assert_eq!(ha.epochs[0], hb.epochs[0]);
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let config = SegmenterConfig { width: 3, depth: 2, patch_size: 6, ..SegmenterConfig::default() };
        let model = ToySegmenter::new(config).unwrap();
        let n = 2 * 36;
        let x: Vec<f32> = (0..2 * n).map(|i| ((i * 37 % 101) as f32) / 101.0).collect();
        let target: Vec<f32> = (0..n).map(|i| (i % 5 == 0) as u8 as f32).collect();
        let weight: Vec<f32> = (0..n).map(|i| (i % 7 != 0) as u8 as f32).collect();
        let tensor = || Tensor::from_vec(2, 2, 6, 6, x.clone());
        let (_, grads) = model.loss_and_gradient(tensor(), &target, &weight, 2.0);
        let mut probe = model.clone();
        let h = 1e-2f32;
        for i in (0..model.params.len()).step_by(5) {
            probe.params[i] = model.params[i] + h;
            let (lp, _) = probe.loss_and_gradient(tensor(), &target, &weight, 2.0);
            probe.params[i] = model.params[i] - h;
            let (lm, _) = probe.loss_and_gradient(tensor(), &target, &weight, 2.0);
            probe.params[i] = model.params[i];
            let fd = (lp - lm) / (2.0 * h as f64);
            assert!((fd - grads[i] as f64).abs() < 2e-3 + 2e-2 * fd.abs(), "param {i}: fd {fd} vs {}", grads[i]);
        }
    }
}
