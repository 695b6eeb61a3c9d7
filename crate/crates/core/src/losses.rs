//! Loss suite for the three training stages.
//!
//! Decomposition stage total:
//!   0.01 * l_r + l_recon_low + l_recon_high
//!   + 0.001 * (l_recon_low_mutual + l_recon_high_mutual)
//!
//! Joint stage total:
//!   0.1 * (l_hf + l_en_r + l_en_l) + l_colour + l_content
//!
//! All terms are L1 means, so magnitudes are resolution-independent.

use rand::Rng;

use crate::nets::blocks::Conv2d;
use crate::nets::{compose_retinex, EnhanceOutput};
use crate::scalar::Scalar;
use crate::tensor::{ops, Tensor, TensorError};

/// One exposure's image and its decomposition, borrowed for loss evaluation.
pub struct ExposureBundle<'a, T: Scalar> {
    pub image: &'a Tensor<T>,
    pub reflectance: &'a Tensor<T>,
    pub illumination: &'a Tensor<T>,
}

pub struct DecomLossTerms<T: Scalar> {
    /// Reflectance consistency across exposures.
    pub l_r: Tensor<T>,
    pub l_recon_low: Tensor<T>,
    pub l_recon_high: Tensor<T>,
    pub l_recon_low_mutual: Tensor<T>,
    pub l_recon_high_mutual: Tensor<T>,
    pub total: Tensor<T>,
}

pub const DECOM_REFLECTANCE_WEIGHT: f64 = 0.01;
pub const DECOM_MUTUAL_WEIGHT: f64 = 0.001;
pub const JOINT_ENHANCE_WEIGHT: f64 = 0.1;

pub fn decom_loss<T: Scalar>(
    low: ExposureBundle<'_, T>,
    high: ExposureBundle<'_, T>,
) -> Result<DecomLossTerms<T>, TensorError> {
    let l_r = ops::l1_loss(low.reflectance, high.reflectance)?;
    let l_recon_low = ops::l1_loss(
        &compose_retinex(low.reflectance, low.illumination, None)?,
        low.image,
    )?;
    let l_recon_high = ops::l1_loss(
        &compose_retinex(high.reflectance, high.illumination, None)?,
        high.image,
    )?;
    let l_recon_low_mutual = ops::l1_loss(
        &compose_retinex(high.reflectance, low.illumination, None)?,
        low.image,
    )?;
    let l_recon_high_mutual = ops::l1_loss(
        &compose_retinex(low.reflectance, high.illumination, None)?,
        high.image,
    )?;
    let mutual = ops::add(&l_recon_low_mutual, &l_recon_high_mutual)?;
    let total = ops::add(
        &ops::add(
            &ops::scale(&l_r, DECOM_REFLECTANCE_WEIGHT),
            &ops::add(&l_recon_low, &l_recon_high)?,
        )?,
        &ops::scale(&mutual, DECOM_MUTUAL_WEIGHT),
    )?;
    Ok(DecomLossTerms {
        l_r,
        l_recon_low,
        l_recon_high,
        l_recon_low_mutual,
        l_recon_high_mutual,
        total,
    })
}

/// Normal-light targets for the three enhancement branches.
pub struct EnhanceTargets<'a, T: Scalar> {
    pub hf_high: &'a Tensor<T>,
    pub reflectance_high: &'a Tensor<T>,
    pub illumination_high: &'a Tensor<T>,
}

pub struct EnhanceLossTerms<T: Scalar> {
    pub l_hf: Tensor<T>,
    pub l_en_r: Tensor<T>,
    pub l_en_l: Tensor<T>,
    /// Unweighted sum of the three branch terms.
    pub l_enhance: Tensor<T>,
}

pub fn enhance_loss<T: Scalar>(
    out: &EnhanceOutput<T>,
    targets: &EnhanceTargets<'_, T>,
) -> Result<EnhanceLossTerms<T>, TensorError> {
    let l_hf = ops::l1_loss(&out.hf_enhanced, targets.hf_high)?;
    let l_en_r = ops::l1_loss(&out.reflectance_enhanced, targets.reflectance_high)?;
    let l_en_l = ops::l1_loss(&out.illumination_enhanced, targets.illumination_high)?;
    let l_enhance = ops::add(&ops::add(&l_hf, &l_en_r)?, &l_en_l)?;
    Ok(EnhanceLossTerms {
        l_hf,
        l_en_r,
        l_en_l,
        l_enhance,
    })
}

/// Frozen convolutional feature extractor for the content loss: a
/// seed-initialized 8-conv / 3-downsample stack with taps after each
/// downsample, standing in for an externally trained classifier backbone.
/// Conv weights exported in the checkpoint container can be slotted in.
pub struct FeatureExtractor<T: Scalar> {
    convs: Vec<Conv2d<T>>,
    taps: Vec<usize>,
}

/// Conv plan: (out channels, stride) per layer.
const FX_PLAN: [(usize, usize); 8] = [
    (16, 1),
    (16, 1),
    (32, 2),
    (32, 1),
    (64, 2),
    (64, 1),
    (64, 2),
    (64, 1),
];

/// Default taps: the activation right after each stride-2 conv.
pub const FX_DEFAULT_TAPS: [usize; 3] = [2, 4, 6];

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new<R: Rng>(taps: Vec<usize>, rng: &mut R) -> Self {
        let mut convs = Vec::new();
        let mut cin = 3;
        for (cout, stride) in FX_PLAN {
            // never trainable: parameters must not receive updates
            convs.push(Conv2d::new(cin, cout, 3, stride, false, rng));
            cin = cout;
        }
        assert!(
            taps.iter().all(|&t| t < convs.len()),
            "tap index out of range (stack has {} conv layers)",
            convs.len()
        );
        if taps.is_empty() {
            log::warn!("feature extractor has no tap layers; content loss is identically 0");
        }
        FeatureExtractor { convs, taps }
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            c.collect_params(&format!("fx.conv{i}"), out.as_mut());
        }
        out
    }

    /// Tapped activations for a 3-channel image.
    pub fn features(&self, image: &Tensor<T>) -> Result<Vec<Tensor<T>>, TensorError> {
        let mut out = Vec::with_capacity(self.taps.len());
        let mut h = image.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = ops::relu(&conv.forward(&h)?);
            if self.taps.contains(&i) {
                out.push(h.clone());
            }
        }
        Ok(out)
    }
}

/// Mean of per-tap L1 distances between deep features of the two images.
/// The reference side is detached, so gradients only flow into `generated`.
pub fn content_loss<T: Scalar>(
    generated: &Tensor<T>,
    reference: &Tensor<T>,
    fx: &FeatureExtractor<T>,
) -> Result<Tensor<T>, TensorError> {
    if fx.taps.is_empty() {
        return Ok(Tensor::scalar(T::zero()));
    }
    let gen_feats = fx.features(generated)?;
    let ref_feats = fx.features(&reference.detach())?;
    let mut acc: Option<Tensor<T>> = None;
    for (g, r) in gen_feats.iter().zip(&ref_feats) {
        let term = ops::l1_loss(g, &r.detach())?;
        acc = Some(match acc {
            Some(a) => ops::add(&a, &term)?,
            None => term,
        });
    }
    Ok(ops::scale(&acc.unwrap(), 1.0 / fx.taps.len() as f64))
}

pub struct JointLossTerms<T: Scalar> {
    pub l_hf: Tensor<T>,
    pub l_en_r: Tensor<T>,
    pub l_en_l: Tensor<T>,
    pub l_enhance: Tensor<T>,
    pub l_colour: Tensor<T>,
    pub l_content: Tensor<T>,
    pub total: Tensor<T>,
}

pub fn joint_loss<T: Scalar>(
    final_image: &Tensor<T>,
    reference: &Tensor<T>,
    enhance_terms: EnhanceLossTerms<T>,
    fx: &FeatureExtractor<T>,
) -> Result<JointLossTerms<T>, TensorError> {
    if final_image.shape() != reference.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "joint_loss",
            detail: format!(
                "final image {:?} vs reference {:?}",
                final_image.shape(),
                reference.shape()
            ),
        });
    }
    let l_colour = ops::l1_loss(final_image, reference)?;
    let l_content = content_loss(final_image, reference, fx)?;
    let total = ops::add(
        &ops::add(
            &ops::scale(&enhance_terms.l_enhance, JOINT_ENHANCE_WEIGHT),
            &l_colour,
        )?,
        &l_content,
    )?;
    Ok(JointLossTerms {
        l_hf: enhance_terms.l_hf,
        l_en_r: enhance_terms.l_en_r,
        l_en_l: enhance_terms.l_en_l,
        l_enhance: enhance_terms.l_enhance,
        l_colour,
        l_content,
        total,
    })
}
