//! Two-encoder/two-decoder latent-fusion generator.
//!
//! Each modality has its own U-shaped encoder mapping `1 + bands` channels (filled image
//! plus intensity-level masks) to a full-resolution latent. The latents are fused by an
//! elementwise maximum, and each modality's decoder is applied to the T1 latent, the
//! FLAIR latent and the fused latent. Inference uses the fused pathway.

mod checkpoint;
mod infer;
mod patches;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{OptimizerConfig, ParamLayout, Real, Tensor, UNet};

pub use checkpoint::{load_model, load_model_expecting, save_model, CHECKPOINT_VERSION};
pub use infer::synthesize;
pub use patches::{extract_patches, make_batch, PatchOrigin, PreparedSubject, TrainingSample};
pub use train::{train, train_with, EarlyStopping, EpochRecord, StopDecision, TrainingHistory};
pub(crate) use patches::{copy_window, origins};
pub(crate) use train::split;

/// Image modality; also the index of the encoder/decoder pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    T1,
    Flair,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::T1, Modality::Flair];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::T1 => "t1",
            Modality::Flair => "flair",
        }
    }
}

/// Which latent a decoder consumed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentSource {
    T1,
    Flair,
    Fused,
}

impl LatentSource {
    pub const ALL: [LatentSource; 3] = [LatentSource::T1, LatentSource::Flair, LatentSource::Fused];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Square patch side in voxels.
    pub patch_size: usize,
    pub patch_stride: usize,
    /// Filled image plus one channel per intensity band.
    pub input_channels: usize,
    pub latent_channels: usize,
    /// Number of down/upsampling steps.
    pub levels: usize,
    pub base_width: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub train_fraction: f64,
    pub rng_seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            patch_size: 64,
            patch_stride: 32,
            input_channels: 9,
            latent_channels: 32,
            levels: 3,
            base_width: 32,
            batch_size: 32,
            max_epochs: 200,
            patience: 15,
            train_fraction: 0.70,
            rng_seed: 0,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl GeneratorConfig {
    /// Small network for tests and desk-scale experiments.
    pub fn tiny() -> Self {
        Self { patch_size: 16, patch_stride: 8, base_width: 4, batch_size: 8, max_epochs: 20, patience: 5, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(1 << self.levels) {
            return bad(format!("patch_size {} is not divisible by 2^{}", self.patch_size, self.levels));
        }
        if self.patch_stride == 0 || self.batch_size == 0 || self.base_width == 0 || self.latent_channels == 0 {
            return bad("patch_stride, batch_size, base_width and latent_channels must be positive".into());
        }
        if self.input_channels < 2 {
            return bad("input_channels must include the image and at least one band".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} is outside (0, 1)", self.train_fraction));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.epsilon > 0.0) {
            return bad(format!("invalid optimizer settings {o:?}"));
        }
        Ok(())
    }

    /// Bands encoded in the input (channels after the filled image).
    pub fn bands(&self) -> usize {
        self.input_channels - 1
    }

    /// True when two configs describe the same parameter layout.
    pub fn same_architecture(&self, other: &Self) -> bool {
        (self.patch_size, self.input_channels, self.latent_channels, self.levels, self.base_width)
            == (other.patch_size, other.input_channels, other.latent_channels, other.levels, other.base_width)
    }
}

/// The six decoder outputs, indexed `[decoder modality][latent source]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorOutputs<T> {
    pub outputs: [[Tensor<T>; 3]; 2],
}

impl<T: Real> GeneratorOutputs<T> {
    pub fn get(&self, decoder: Modality, latent: LatentSource) -> &Tensor<T> {
        &self.outputs[decoder.index()][latent as usize]
    }

    /// Inference output for `decoder` (fused latent).
    pub fn fused(&self, decoder: Modality) -> &Tensor<T> {
        self.get(decoder, LatentSource::Fused)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.outputs.iter().flatten()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorModel<T: Real = f32> {
    config: GeneratorConfig,
    layout: ParamLayout,
    params: Vec<T>,
    encoders: [UNet; 2],
    decoders: [UNet; 2],
}

fn build_architecture(config: &GeneratorConfig) -> (ParamLayout, [UNet; 2], [UNet; 2]) {
    let mut layout = ParamLayout::new();
    let (c, z, l, w) = (config.input_channels, config.latent_channels, config.levels, config.base_width);
    let encoders = [
        UNet::new(&mut layout, "encoder_t1", c, z, l, w),
        UNet::new(&mut layout, "encoder_flair", c, z, l, w),
    ];
    let decoders = [
        UNet::new(&mut layout, "decoder_t1", z, 1, l, w),
        UNet::new(&mut layout, "decoder_flair", z, 1, l, w),
    ];
    (layout, encoders, decoders)
}

/// Elementwise maximum of two latents.
pub fn fuse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch { expected: a.shape().to_vec(), found: b.shape().to_vec() });
    }
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| if y > x { y } else { x }).collect();
    Ok(Tensor::from_vec(a.c, a.n, a.h, a.w, data))
}

/// Mean over the six (output, same-modality target) mean squared errors.
pub fn loss<T: Real>(outputs: &GeneratorOutputs<T>, t1_target: &Tensor<T>, flair_target: &Tensor<T>) -> Result<f64> {
    let targets = [t1_target, flair_target];
    let mut total = 0.0;
    for (d, row) in outputs.outputs.iter().enumerate() {
        for out in row {
            if out.shape() != targets[d].shape() {
                return Err(Error::ShapeMismatch { expected: out.shape().to_vec(), found: targets[d].shape().to_vec() });
            }
            let sq: f64 = out.data.iter().zip(&targets[d].data).map(|(&o, &t)| (o - t).f64().powi(2)).sum();
            total += sq / out.data.len() as f64;
        }
    }
    Ok(total / 6.0)
}

impl<T: Real> GeneratorModel<T> {
    /// Freshly initialized model (fan-in scaled normal weights from `config.rng_seed`).
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let (layout, encoders, decoders) = build_architecture(&config);
        let mut params = vec![T::zero(); layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        for net in encoders.iter().chain(&decoders) {
            net.init(&mut params, &mut rng);
        }
        Ok(Self { config, layout, params, encoders, decoders })
    }

    /// Model with the given parameter vector (must match the config's layout).
    pub fn from_params(config: GeneratorConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let (layout, encoders, decoders) = build_architecture(&config);
        if params.len() != layout.total() {
            return Err(Error::ShapeMismatch { expected: vec![layout.total()], found: vec![params.len()] });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("model parameters contain non-finite values".into()));
        }
        Ok(Self { config, layout, params, encoders, decoders })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Mutable view of one named parameter array.
    pub fn param_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.layout.get(name)?.range();
        Some(&mut self.params[range])
    }

    /// Same parameters in another precision.
    pub fn cast<U: Real>(&self) -> GeneratorModel<U> {
        GeneratorModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|v| U::of(v.f64())).collect(),
            encoders: self.encoders.clone(),
            decoders: self.decoders.clone(),
        }
    }

    /// Encoder for `modality`; its parameter names start with `encoder_<modality>`.
    pub fn encoder(&self, modality: Modality) -> &UNet {
        &self.encoders[modality.index()]
    }

    pub fn decoder(&self, modality: Modality) -> &UNet {
        &self.decoders[modality.index()]
    }

    fn check_input(&self, patch: &Tensor<T>) -> Result<()> {
        let c = &self.config;
        if patch.c != c.input_channels || patch.h != c.patch_size || patch.w != c.patch_size || patch.n == 0 {
            return Err(Error::ShapeMismatch {
                expected: vec![c.input_channels, patch.n.max(1), c.patch_size, c.patch_size],
                found: patch.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Latent (`latent_channels × P × P` per sample) of one modality's encoder.
    pub fn encode(&self, modality: Modality, patch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(patch)?;
        Ok(self.encoders[modality.index()].forward(&self.params, patch))
    }

    pub fn decode(&self, modality: Modality, latent: &Tensor<T>) -> Result<Tensor<T>> {
        let c = &self.config;
        if latent.c != c.latent_channels || latent.h != c.patch_size || latent.w != c.patch_size {
            return Err(Error::ShapeMismatch {
                expected: vec![c.latent_channels, latent.n, c.patch_size, c.patch_size],
                found: latent.shape().to_vec(),
            });
        }
        Ok(self.decoders[modality.index()].forward(&self.params, latent))
    }

    fn check_pair(&self, t1: &Tensor<T>, flair: &Tensor<T>) -> Result<()> {
        self.check_input(t1)?;
        self.check_input(flair)?;
        if t1.n != flair.n {
            return Err(Error::ShapeMismatch { expected: t1.shape().to_vec(), found: flair.shape().to_vec() });
        }
        Ok(())
    }

    /// All six decoder outputs.
    pub fn forward(&self, t1: &Tensor<T>, flair: &Tensor<T>) -> Result<GeneratorOutputs<T>> {
        self.check_pair(t1, flair)?;
        let z1 = self.encode(Modality::T1, t1)?;
        let z2 = self.encode(Modality::Flair, flair)?;
        let zf = fuse(&z1, &z2)?;
        let run = |d: usize| [&z1, &z2, &zf].map(|z| self.decoders[d].forward(&self.params, z));
        Ok(GeneratorOutputs { outputs: [run(0), run(1)] })
    }

    /// Fused-latent outputs `[T1, FLAIR]` only.
    pub fn infer(&self, t1: &Tensor<T>, flair: &Tensor<T>) -> Result<[Tensor<T>; 2]> {
        self.check_pair(t1, flair)?;
        let zf = fuse(&self.encode(Modality::T1, t1)?, &self.encode(Modality::Flair, flair)?)?;
        Ok([0, 1].map(|d| self.decoders[d].forward(&self.params, &zf)))
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_gradient(
        &self,
        t1: &Tensor<T>,
        flair: &Tensor<T>,
        t1_target: &Tensor<T>,
        flair_target: &Tensor<T>,
    ) -> Result<(f64, Vec<T>)> {
        self.check_pair(t1, flair)?;
        let targets = [t1_target, flair_target];
        for t in targets {
            if t.shape() != [1, t1.n, t1.h, t1.w] {
                return Err(Error::ShapeMismatch { expected: vec![1, t1.n, t1.h, t1.w], found: t.shape().to_vec() });
            }
        }
        let p = &self.params;
        let (z1, c1) = self.encoders[0].forward_cached(p, t1.clone());
        let (z2, c2) = self.encoders[1].forward_cached(p, flair.clone());
        let zf = fuse(&z1, &z2)?;
        let from_first: Vec<bool> = z1.data.iter().zip(&z2.data).map(|(a, b)| !(b > a)).collect();
        let latents = [z1, z2, zf];
        let mut grads = vec![T::zero(); p.len()];
        let mut dlat: Vec<Tensor<T>> = latents.iter().map(|z| Tensor::zeros(z.c, z.n, z.h, z.w)).collect();
        let mut total = 0.0;
        let scale = T::of(2.0 / (6.0 * t1_target.data.len() as f64));
        for (d, target) in targets.iter().enumerate() {
            for (l, z) in latents.iter().enumerate() {
                let (out, cache) = self.decoders[d].forward_cached(p, z.clone());
                let sq: f64 = out.data.iter().zip(&target.data).map(|(&o, &t)| (o - t).f64().powi(2)).sum();
                total += sq / out.data.len() as f64;
                let dout = Tensor::from_vec(
                    1,
                    out.n,
                    out.h,
                    out.w,
                    out.data.iter().zip(&target.data).map(|(&o, &t)| (o - t) * scale).collect(),
                );
                let dz = self.decoders[d].backward(p, &mut grads, &cache, &dout, true).expect("requested");
                dlat[l].add_assign(&dz);
            }
        }
        let dzf = dlat.pop().expect("three latents");
        let mut dz2 = dlat.pop().expect("three latents");
        let mut dz1 = dlat.pop().expect("three latents");
        for ((g, &first), (a, b)) in dzf.data.iter().zip(&from_first).zip(dz1.data.iter_mut().zip(dz2.data.iter_mut())) {
            if first {
                *a += *g;
            } else {
                *b += *g;
            }
        }
        self.encoders[0].backward(p, &mut grads, &c1, &dz1, false);
        self.encoders[1].backward(p, &mut grads, &c2, &dz2, false);
        Ok((total / 6.0, grads))
    }
}

#[cfg(test)]
mod tests;
