//! Core building blocks for explanation-guided visual quality inspection.
//!
//! The crate covers the numeric path from a segmentation model to a ranked set
//! of class-activation-map explanations:
//!
//! * [`tensor`] and [`npy`]: a small dense-array substrate and NPY interchange.
//! * [`coco`]: COCO datasets, polygon rasterization and RLE masks.
//! * [`synth`]: a deterministic synthetic inspection dataset with thin objects
//!   and look-alike distractors.
//! * [`model`]: the segmentation model contract, a trainable toy network and
//!   a replay adapter for externally exported tensors.
//! * [`cam`]: GradCAM, GradCAM++, HiResCAM, XGradCAM and ScoreCAM.
//! * [`metrics`]: plausibility, faithfulness and segmentation scores.
//! * [`augment`]: annotation enlargement and added annotations driven by an
//!   expert's plan.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the `parallel`
//! feature is enabled and falls back to plain iteration otherwise.

pub mod augment;
pub mod cam;
pub mod coco;
pub mod error;
pub mod imageio;
pub mod metrics;
pub mod model;
pub mod npy;
pub mod par;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Mask, Tensor};
