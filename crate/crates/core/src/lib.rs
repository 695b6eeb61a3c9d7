//! Retinex-based low-light image enhancement toolkit.
//!
//! The pipeline follows the decomposition `I = R ∘ L + N`: a weighted
//! least squares filter splits each image into low- and high-frequency
//! layers, a decomposition network produces reflectance and illumination
//! maps, three enhancement branches denoise and relight them, and an
//! adjustment network recomposes the final image. A full-reference /
//! no-reference metric suite (PSNR, SSIM, FSIM, MAE, GMSD, NIQE) evaluates
//! the results.

pub mod checkpoint;
pub mod config;
pub mod image;
pub mod iqa;
pub mod losses;
pub mod nets;
pub mod pipeline;
pub mod scalar;
pub mod tensor;
pub mod wls;

pub use crate::image::Image;
pub use crate::scalar::Scalar;
pub use crate::tensor::{ops, AdamState, Tensor, TensorError};
pub use crate::wls::{FrequencySplit, WlsParams};
