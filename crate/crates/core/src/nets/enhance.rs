//! Enhancement network: three DenseNet/UNet branches for the high-frequency
//! layer, the reflectance map, and the illumination map.

use rand::Rng;

use super::blocks::{Conv2d, DenseBlock, Upsampler};
use super::decom::Decomposition;
use super::{check_aligned, NetConfig, NetError};
use crate::scalar::Scalar;
use crate::tensor::{ops, Tensor};

const DENSE_LAYERS: usize = 3;

/// UNet whose encoder levels are dense blocks with channel-halving
/// transition layers; the decoder receives the pre-transition features over
/// skip concatenations.
pub struct DenseUnet<T: Scalar> {
    stem: Conv2d<T>,
    dense: Vec<DenseBlock<T>>,
    transitions: Vec<Conv2d<T>>, // 1x1, halve channels
    downs: Vec<Conv2d<T>>,
    ups: Vec<Upsampler<T>>,
    fuses: Vec<Conv2d<T>>,
    head: Conv2d<T>,
    sigmoid_out: bool,
    cfg: NetConfig,
}

impl<T: Scalar> DenseUnet<T> {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        sigmoid_out: bool,
        cfg: &NetConfig,
        trainable: bool,
        rng: &mut R,
    ) -> Self {
        let g = cfg.dense_growth;
        let levels = cfg.depth_levels;
        let stem = Conv2d::new(in_channels, cfg.base_channels, 3, 1, trainable, rng);
        let mut dense = Vec::new();
        let mut transitions = Vec::new();
        let mut downs = Vec::new();
        // per-level channel bookkeeping: d = pre-transition, t = post
        let mut c = cfg.base_channels;
        let mut pre = Vec::new();
        let mut post = Vec::new();
        for i in 0..levels {
            let d = c + DENSE_LAYERS * g;
            let t = d / 2;
            dense.push(DenseBlock::new(c, g, DENSE_LAYERS, trainable, rng));
            transitions.push(Conv2d::new(d, t, 1, 1, trainable, rng));
            if i < levels - 1 {
                downs.push(Conv2d::new(t, t, 3, 2, trainable, rng));
            }
            pre.push(d);
            post.push(t);
            c = t;
        }
        let mut ups = Vec::new();
        let mut fuses = Vec::new();
        for i in (0..levels - 1).rev() {
            // incoming decoder width at this step is post[i+1] (or the fused
            // width below, which is also post[i])
            let incoming = if i == levels - 2 { post[levels - 1] } else { post[i + 1] };
            ups.push(Upsampler::new(incoming, post[i], cfg.upsample_mode, trainable, rng));
            fuses.push(Conv2d::new(post[i] + pre[i], post[i], 3, 1, trainable, rng));
        }
        let head = Conv2d::new(post[0], out_channels, 3, 1, trainable, rng);
        DenseUnet {
            stem,
            dense,
            transitions,
            downs,
            ups,
            fuses,
            head,
            sigmoid_out,
            cfg: *cfg,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        Ok(self.forward_traced(x)?.0)
    }

    pub fn forward_traced(&self, x: &Tensor<T>) -> Result<(Tensor<T>, (usize, usize)), NetError> {
        self.cfg.check_input(x.shape())?;
        let levels = self.cfg.depth_levels;
        let mut h = ops::relu(&self.stem.forward(x)?);
        let mut skips = Vec::with_capacity(levels - 1);
        for i in 0..levels {
            let d = self.dense[i].forward(&h)?;
            if i < levels - 1 {
                skips.push(d.clone());
            }
            h = ops::relu(&self.transitions[i].forward(&d)?);
            if i < levels - 1 {
                h = ops::relu(&self.downs[i].forward(&h)?);
            }
        }
        let deepest = (h.shape()[2], h.shape()[3]);
        for (j, i) in (0..levels - 1).rev().enumerate() {
            h = self.ups[j].forward(&h)?;
            let cat = ops::concat_channels(&[h, skips[i].clone()])?;
            h = ops::relu(&self.fuses[j].forward(&cat)?);
        }
        let out = self.head.forward(&h)?;
        let out = if self.sigmoid_out { ops::sigmoid(&out) } else { out };
        Ok((out, deepest))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.stem.collect_params(&format!("{prefix}.stem"), out);
        for (i, b) in self.dense.iter().enumerate() {
            b.collect_params(&format!("{prefix}.dense{i}"), out);
        }
        for (i, c) in self.transitions.iter().enumerate() {
            c.collect_params(&format!("{prefix}.trans{i}"), out);
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
        self.head.collect_params(&format!("{prefix}.head"), out);
    }
}

/// Independent branch outputs; the high-frequency branch is unsquashed
/// because detail layers are signed residuals.
pub struct EnhanceOutput<T: Scalar> {
    pub hf_enhanced: Tensor<T>,
    pub reflectance_enhanced: Tensor<T>,
    pub illumination_enhanced: Tensor<T>,
}

pub struct EnhanceNet<T: Scalar> {
    hf_branch: DenseUnet<T>,
    reflectance_branch: DenseUnet<T>,
    illumination_branch: DenseUnet<T>,
}

impl<T: Scalar> EnhanceNet<T> {
    pub fn new<R: Rng>(cfg: &NetConfig, trainable: bool, rng: &mut R) -> Self {
        EnhanceNet {
            hf_branch: DenseUnet::new(3, 3, false, cfg, trainable, rng),
            reflectance_branch: DenseUnet::new(3, 3, true, cfg, trainable, rng),
            illumination_branch: DenseUnet::new(1, 1, true, cfg, trainable, rng),
        }
    }

    pub fn forward(
        &self,
        hf_low: &Tensor<T>,
        decomp_low: &Decomposition<T>,
    ) -> Result<EnhanceOutput<T>, NetError> {
        check_aligned("hf vs reflectance", hf_low, &decomp_low.reflectance)?;
        check_aligned("hf vs illumination", hf_low, &decomp_low.illumination)?;
        Ok(EnhanceOutput {
            hf_enhanced: self.hf_branch.forward(hf_low)?,
            reflectance_enhanced: self.reflectance_branch.forward(&decomp_low.reflectance)?,
            illumination_enhanced: self.illumination_branch.forward(&decomp_low.illumination)?,
        })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.hf_branch.collect_params("enhance.hf", &mut out);
        self.reflectance_branch.collect_params("enhance.refl", &mut out);
        self.illumination_branch.collect_params("enhance.illum", &mut out);
        out
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }
}
