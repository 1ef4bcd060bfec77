//! Synthetic MS lesion generation for brain MRI.
//!
//! The pipeline thresholds FLAIR into a hyperintensity mask and eight intensity-level
//! bands ([`masking`]), in-paints the hyperintense regions with white-matter-like values
//! ([`filling`]), and trains a two-encoder/two-decoder latent-fusion network that learns
//! to re-create the lesions from the filled images plus the bands ([`synthesis`]).
//! Editing the bands of a target image, e.g. by grafting another subject's lesions
//! through a spatial transform ([`transplant`]), synthesizes new lesions with a known
//! ground-truth mask. [`metrics`] and [`experiment`] provide the evaluation stack and a
//! phantom-based data-augmentation study.

pub mod error;
pub mod experiment;
pub mod filling;
pub mod filter;
pub mod io;
pub mod masking;
pub mod metrics;
pub mod morphology;
pub mod nn;
pub mod normalize;
pub mod phantom;
pub mod render;
pub mod segmenter;
pub mod synthesis;
pub mod transform;
pub mod transplant;
pub mod volume;

pub use error::{Error, Result};
pub use filling::{fill_wmh, FillConfig, FillReport};
pub use masking::{build_bank, estimate_gm_stats, threshold_for, IntensityLevelBank, TissueStats, DEFAULT_GAMMAS};
pub use metrics::{SegmentationScore, SimilarityReport, SsimParams};
pub use morphology::{connected_components, dilate, Components, Connectivity};
pub use normalize::{normalize, NormalizationParams};
pub use synthesis::{GeneratorConfig, GeneratorModel, Modality};
pub use transform::{resample, resample_mask, DisplacementField, SpatialTransform};
pub use transplant::TransplantSpec;
pub use volume::{BinaryMask3D, Grid, Volume3D};
