//! Decomposition network: splits an image into reflectance and illumination.

use rand::Rng;

use super::blocks::Conv2d;
use super::unet::UnetRes;
use super::{NetConfig, NetError};
use crate::scalar::Scalar;
use crate::tensor::{ops, Tensor};

/// Sigmoid-bounded outputs, strictly inside (0,1).
pub struct Decomposition<T: Scalar> {
    /// 3-channel reflectance map.
    pub reflectance: Tensor<T>,
    /// 1-channel illumination map.
    pub illumination: Tensor<T>,
}

impl<T: Scalar> Decomposition<T> {
    pub fn detach(&self) -> Self {
        Decomposition {
            reflectance: self.reflectance.detach(),
            illumination: self.illumination.detach(),
        }
    }
}

pub struct DecomNet<T: Scalar> {
    trunk: UnetRes<T>,
    head_reflectance: Conv2d<T>,
    head_illumination: Conv2d<T>,
}

impl<T: Scalar> DecomNet<T> {
    pub fn new<R: Rng>(cfg: &NetConfig, trainable: bool, rng: &mut R) -> Self {
        // 4 input channels: RGB plus the per-pixel channel-max brightness map
        let trunk = UnetRes::new(4, cfg, trainable, rng);
        let c0 = trunk.out_channels();
        DecomNet {
            trunk,
            head_reflectance: Conv2d::new(c0, 3, 3, 1, trainable, rng),
            head_illumination: Conv2d::new(c0, 1, 3, 1, trainable, rng),
        }
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<Decomposition<T>, NetError> {
        Ok(self.forward_traced(image)?.0)
    }

    /// Forward pass that also reports the deepest feature-map extent.
    pub fn forward_traced(
        &self,
        image: &Tensor<T>,
    ) -> Result<(Decomposition<T>, (usize, usize)), NetError> {
        let brightness = ops::max_over_channels(image)?;
        let x = ops::concat_channels(&[image.clone(), brightness])?;
        let (features, deepest) = self.trunk.forward(&x)?;
        let reflectance = ops::sigmoid(&self.head_reflectance.forward(&features)?);
        let illumination = ops::sigmoid(&self.head_illumination.forward(&features)?);
        Ok((
            Decomposition {
                reflectance,
                illumination,
            },
            deepest,
        ))
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.trunk.collect_params("decom.trunk", &mut out);
        self.head_reflectance.collect_params("decom.head_r", &mut out);
        self.head_illumination.collect_params("decom.head_l", &mut out);
        out
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }
}
