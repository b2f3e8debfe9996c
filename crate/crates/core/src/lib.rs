//! Text-editable virtual try-on at desk scale.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`data`]: dataset layout, sample types, caption cache, synthetic generator
//! * [`mask`]: fine/coarse masks, random dilation augmentation, mask algebra
//! * [`captioner`]: attribute schemas, in-context-learning requests, LMM clients, prompt rendering
//! * [`diffusion`]: noise schedule, codec and text stubs, toy U-Nets with reference K/V injection, training, sampling
//! * [`pmg`]: prompt-aware mask generation at inference
//! * [`eval`]: base ratio, alignment accuracy, SSIM, diversity, STS agreement
//!
//! Batch loops run through [`exec::Exec`], which uses rayon when the
//! `parallel` feature is on and falls back to plain iterators otherwise.

pub mod captioner;
pub mod data;
pub mod diffusion;
pub mod eval;
pub mod exec;
pub mod mask;
pub mod pmg;
pub mod raster;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
