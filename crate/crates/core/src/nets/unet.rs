//! UNet/ResNet hybrid trunk: residual blocks at every level (short hops)
//! and encoder-to-decoder skip concatenations (long hops).

use rand::Rng;

use super::blocks::{Conv2d, ResBlock, Upsampler};
use super::{NetConfig, NetError};
use crate::scalar::Scalar;
use crate::tensor::{ops, Tensor};

pub struct UnetRes<T: Scalar> {
    stem: Conv2d<T>,
    enc_res: Vec<ResBlock<T>>, // one per level, deepest acts as the bottom
    downs: Vec<Conv2d<T>>,     // stride-2 convs between levels
    ups: Vec<Upsampler<T>>,    // deepest-first
    fuses: Vec<Conv2d<T>>,     // after skip concat
    dec_res: Vec<ResBlock<T>>,
    cfg: NetConfig,
}

impl<T: Scalar> UnetRes<T> {
    pub fn new<R: Rng>(in_channels: usize, cfg: &NetConfig, trainable: bool, rng: &mut R) -> Self {
        let ch = cfg.level_channels();
        let levels = cfg.depth_levels;
        let stem = Conv2d::new(in_channels, ch[0], 3, 1, trainable, rng);
        let enc_res = (0..levels)
            .map(|i| ResBlock::new(ch[i], trainable, rng))
            .collect();
        let downs = (0..levels - 1)
            .map(|i| Conv2d::new(ch[i], ch[i + 1], 3, 2, trainable, rng))
            .collect();
        let mut ups = Vec::new();
        let mut fuses = Vec::new();
        let mut dec_res = Vec::new();
        for i in (0..levels - 1).rev() {
            ups.push(Upsampler::new(ch[i + 1], ch[i], cfg.upsample_mode, trainable, rng));
            fuses.push(Conv2d::new(2 * ch[i], ch[i], 3, 1, trainable, rng));
            dec_res.push(ResBlock::new(ch[i], trainable, rng));
        }
        UnetRes {
            stem,
            enc_res,
            downs,
            ups,
            fuses,
            dec_res,
            cfg: *cfg,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.cfg.level_channels()[0]
    }

    /// Full-resolution feature map plus the spatial extent the encoder
    /// bottomed out at.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, (usize, usize)), NetError> {
        self.cfg.check_input(x.shape())?;
        let levels = self.cfg.depth_levels;
        let mut skips = Vec::with_capacity(levels - 1);
        let mut h = ops::relu(&self.stem.forward(x)?);
        for i in 0..levels - 1 {
            h = self.enc_res[i].forward(&h)?;
            skips.push(h.clone());
            h = ops::relu(&self.downs[i].forward(&h)?);
        }
        h = self.enc_res[levels - 1].forward(&h)?;
        let deepest = (h.shape()[2], h.shape()[3]);
        for (j, i) in (0..levels - 1).rev().enumerate() {
            h = self.ups[j].forward(&h)?;
            let cat = ops::concat_channels(&[h, skips[i].clone()])?;
            h = ops::relu(&self.fuses[j].forward(&cat)?);
            h = self.dec_res[j].forward(&h)?;
        }
        Ok((h, deepest))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.stem.collect_params(&format!("{prefix}.stem"), out);
        for (i, b) in self.enc_res.iter().enumerate() {
            b.collect_params(&format!("{prefix}.enc{i}"), out);
        }
        for (i, c) in self.downs.iter().enumerate() {
            c.collect_params(&format!("{prefix}.down{i}"), out);
        }
        for (i, u) in self.ups.iter().enumerate() {
            u.collect_params(&format!("{prefix}.up{i}"), out);
        }
        for (i, c) in self.fuses.iter().enumerate() {
            c.collect_params(&format!("{prefix}.fuse{i}"), out);
        }
        for (i, b) in self.dec_res.iter().enumerate() {
            b.collect_params(&format!("{prefix}.dec{i}"), out);
        }
    }
}
