//! The three network architectures: a UNet/ResNet hybrid decomposition
//! network, three DenseNet/UNet enhancement branches, and a UNet/ResNet
//! adjustment network, plus the Retinex composition they share.

pub mod blocks;

mod adjust;
mod decom;
mod enhance;
mod unet;

pub use adjust::AdjustNet;
pub use decom::{DecomNet, Decomposition};
pub use enhance::{DenseUnet, EnhanceNet, EnhanceOutput};
pub use unet::UnetRes;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::ops::{self};

pub use crate::tensor::ops::UpsampleMode;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("input extent {height}x{width} is not divisible by {required} (2^(depth_levels-1) with {levels} levels)")]
    Divisibility {
        height: usize,
        width: usize,
        required: usize,
        levels: usize,
    },
    #[error("misaligned inputs: {0}")]
    Misaligned(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Architecture knobs shared by all three networks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    /// Encoder depth; a 192x192 input with 6 levels bottoms out at 6x6.
    pub depth_levels: usize,
    pub base_channels: usize,
    pub dense_growth: usize,
    pub upsample_mode: UpsampleMode,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            depth_levels: 6,
            base_channels: 32,
            dense_growth: 16,
            upsample_mode: UpsampleMode::Nearest,
        }
    }
}

impl NetConfig {
    /// Required divisibility of the input extents.
    pub fn divisibility(&self) -> usize {
        1 << (self.depth_levels - 1)
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<(), NetError> {
        let (h, w) = (shape[2], shape[3]);
        let d = self.divisibility();
        if h % d != 0 || w % d != 0 || h == 0 || w == 0 {
            return Err(NetError::Divisibility {
                height: h,
                width: w,
                required: d,
                levels: self.depth_levels,
            });
        }
        Ok(())
    }

    /// Per-level channel widths for the UNet/ResNet hybrids; doubling,
    /// capped at 8x base.
    pub fn level_channels(&self) -> Vec<usize> {
        (0..self.depth_levels)
            .map(|i| self.base_channels << i.min(3))
            .collect()
    }
}

/// `R ∘ L + hf` with the 1-channel illumination broadcast over RGB.
/// No clamping; loss terms see raw values.
pub fn compose_retinex<T: Scalar>(
    reflectance: &Tensor<T>,
    illumination: &Tensor<T>,
    high_freq: Option<&Tensor<T>>,
) -> Result<Tensor<T>, TensorError> {
    let rl = ops::mul(reflectance, illumination)?;
    match high_freq {
        Some(hf) => ops::add(&rl, hf),
        None => Ok(rl),
    }
}

pub(crate) fn check_aligned<T: Scalar>(
    what: &str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(), NetError> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] {
        return Err(NetError::Misaligned(format!(
            "{what}: shapes {:?} vs {:?}",
            sa, sb
        )));
    }
    Ok(())
}
