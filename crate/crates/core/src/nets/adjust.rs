//! Adjustment network: recomposes the enhanced components into the final
//! image and refines it.

use rand::Rng;

use super::blocks::Conv2d;
use super::enhance::EnhanceOutput;
use super::unet::UnetRes;
use super::{check_aligned, compose_retinex, NetConfig, NetError};
use crate::scalar::Scalar;
use crate::tensor::{ops, Tensor};

pub struct AdjustNet<T: Scalar> {
    trunk: UnetRes<T>,
    head: Conv2d<T>,
}

impl<T: Scalar> AdjustNet<T> {
    pub fn new<R: Rng>(cfg: &NetConfig, trainable: bool, rng: &mut R) -> Self {
        // 10 input channels: R∘L+hf candidate (3) + hf (3) + R (3) + L (1)
        let trunk = UnetRes::new(10, cfg, trainable, rng);
        let c0 = trunk.out_channels();
        AdjustNet {
            trunk,
            head: Conv2d::new(c0, 3, 3, 1, trainable, rng),
        }
    }

    pub fn forward(&self, enh: &EnhanceOutput<T>) -> Result<Tensor<T>, NetError> {
        Ok(self.forward_traced(enh)?.0)
    }

    pub fn forward_traced(
        &self,
        enh: &EnhanceOutput<T>,
    ) -> Result<(Tensor<T>, (usize, usize)), NetError> {
        check_aligned("reflectance vs hf", &enh.reflectance_enhanced, &enh.hf_enhanced)?;
        check_aligned(
            "reflectance vs illumination",
            &enh.reflectance_enhanced,
            &enh.illumination_enhanced,
        )?;
        let candidate = compose_retinex(
            &enh.reflectance_enhanced,
            &enh.illumination_enhanced,
            Some(&enh.hf_enhanced),
        )?;
        let x = ops::concat_channels(&[
            candidate,
            enh.hf_enhanced.clone(),
            enh.reflectance_enhanced.clone(),
            enh.illumination_enhanced.clone(),
        ])?;
        let (features, deepest) = self.trunk.forward(&x)?;
        Ok((ops::sigmoid(&self.head.forward(&features)?), deepest))
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.trunk.collect_params("adjust.trunk", &mut out);
        self.head.collect_params("adjust.head", &mut out);
        out
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }
}
