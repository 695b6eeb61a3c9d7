//! Central-finite-difference verification of every differentiable op and of
//! the end-to-end stage losses on toy networks, in 64-bit.

mod common;

use common::gradcheck;
use lowlight_core::config::Config;
use lowlight_core::losses::{
    decom_loss, enhance_loss, joint_loss, EnhanceTargets, ExposureBundle, FeatureExtractor,
};
use lowlight_core::nets::{AdjustNet, DecomNet, EnhanceNet, UpsampleMode};
use lowlight_core::ops;
use lowlight_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const OP_TOL: f64 = 1e-4;
const E2E_TOL: f64 = 1e-3;

fn leaf(shape: &[usize], std: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(shape, std, &mut rng).requires_grad()
}

#[test]
fn conv2d_grads() {
    let input = leaf(&[1, 2, 6, 6], 1.0, 1);
    let weight = leaf(&[3, 2, 3, 3], 0.5, 2);
    let bias = leaf(&[3], 0.5, 3);
    gradcheck(
        &[input, weight, bias],
        &|t| ops::sum(&ops::conv2d(&t[0], &t[1], &t[2], 1, 1).unwrap()),
        20,
        OP_TOL,
        10,
    );
}

#[test]
fn conv2d_strided_grads() {
    let input = leaf(&[1, 2, 8, 8], 1.0, 4);
    let weight = leaf(&[2, 2, 3, 3], 0.5, 5);
    let bias = leaf(&[2], 0.5, 6);
    gradcheck(
        &[input, weight, bias],
        &|t| ops::sum(&ops::conv2d(&t[0], &t[1], &t[2], 2, 1).unwrap()),
        20,
        OP_TOL,
        11,
    );
}

#[test]
fn elementwise_grads() {
    let a = leaf(&[1, 3, 4, 4], 1.0, 7);
    let b = leaf(&[1, 3, 4, 4], 1.0, 8);
    gradcheck(
        &[a.clone(), b.clone()],
        &|t| ops::sum(&ops::mul(&ops::add(&t[0], &t[1]).unwrap(), &ops::sub(&t[0], &t[1]).unwrap()).unwrap()),
        20,
        OP_TOL,
        12,
    );
}

#[test]
fn broadcast_mul_grads() {
    // single-channel illumination broadcast over a 3-channel reflectance
    let rgb = leaf(&[1, 3, 5, 5], 1.0, 9);
    let mono = leaf(&[1, 1, 5, 5], 1.0, 10);
    gradcheck(
        &[rgb, mono],
        &|t| ops::sum(&ops::mul(&t[0], &t[1]).unwrap()),
        20,
        OP_TOL,
        13,
    );
}

#[test]
fn activation_grads() {
    let x = leaf(&[1, 2, 6, 6], 1.0, 14);
    gradcheck(&[x.clone()], &|t| ops::sum(&ops::relu(&t[0])), 20, OP_TOL, 15);
    gradcheck(&[x], &|t| ops::sum(&ops::sigmoid(&t[0])), 20, OP_TOL, 16);
}

#[test]
fn concat_and_max_grads() {
    let a = leaf(&[1, 3, 4, 4], 1.0, 17);
    let b = leaf(&[1, 2, 4, 4], 1.0, 18);
    gradcheck(
        &[a.clone(), b],
        &|t| ops::sum(&ops::concat_channels(&[t[0].clone(), t[1].clone()]).unwrap()),
        20,
        OP_TOL,
        19,
    );
    gradcheck(
        &[a],
        &|t| ops::sum(&ops::max_over_channels(&t[0]).unwrap()),
        20,
        OP_TOL,
        20,
    );
}

#[test]
fn upsample_grads_both_modes() {
    let x = leaf(&[1, 4, 3, 3], 1.0, 21);
    gradcheck(
        &[x.clone()],
        &|t| ops::sum(&ops::upsample2x(&t[0], UpsampleMode::Nearest).unwrap()),
        20,
        OP_TOL,
        22,
    );
    gradcheck(
        &[x],
        &|t| ops::sum(&ops::upsample2x(&t[0], UpsampleMode::PixelShuffle).unwrap()),
        20,
        OP_TOL,
        23,
    );
}

#[test]
fn l1_loss_grads() {
    let a = leaf(&[1, 3, 4, 4], 1.0, 24);
    let b = leaf(&[1, 3, 4, 4], 1.0, 25);
    gradcheck(&[a, b], &|t| ops::l1_loss(&t[0], &t[1]).unwrap(), 20, OP_TOL, 26);
}

fn toy_cfg() -> Config {
    let mut cfg = Config::default();
    for (k, v) in [
        ("net.depth_levels", "3"),
        ("net.base_channels", "4"),
        ("net.dense_growth", "4"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

/// Sampled parameter tensors spread across a network's named parameters.
fn spread(named: &[(String, Tensor<f64>)], n: usize) -> Vec<Tensor<f64>> {
    let stride = (named.len() / n).max(1);
    named
        .iter()
        .step_by(stride)
        .take(n)
        .map(|(_, t)| t.clone())
        .collect()
}

#[test]
fn stage1_loss_end_to_end_grads() {
    let cfg = toy_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let net = DecomNet::<f64>::new(&cfg.net, true, &mut rng);
    let low = Tensor::randn(&[1, 3, 48, 48], 0.2, &mut rng);
    let low = ops::sigmoid(&low).detach();
    let high = ops::sigmoid(&Tensor::randn(&[1, 3, 48, 48], 0.2, &mut rng)).detach();
    let loss = |_: &[Tensor<f64>]| {
        let d_low = net.forward(&low).unwrap();
        let d_high = net.forward(&high).unwrap();
        decom_loss(
            ExposureBundle {
                image: &low,
                reflectance: &d_low.reflectance,
                illumination: &d_low.illumination,
            },
            ExposureBundle {
                image: &high,
                reflectance: &d_high.reflectance,
                illumination: &d_high.illumination,
            },
        )
        .unwrap()
        .total
    };
    let probes = spread(&net.named_params(), 5);
    gradcheck(&probes, &loss, 4, E2E_TOL, 31);
}

#[test]
fn stage2_loss_end_to_end_grads() {
    let cfg = toy_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let decom = DecomNet::<f64>::new(&cfg.net, false, &mut rng);
    let enhance = EnhanceNet::<f64>::new(&cfg.net, true, &mut rng);
    let adjust = AdjustNet::<f64>::new(&cfg.net, true, &mut rng);
    let fx = FeatureExtractor::<f64>::new(vec![2, 4, 6], &mut rng);
    let low = ops::sigmoid(&Tensor::randn(&[1, 3, 48, 48], 0.2, &mut rng)).detach();
    let high = ops::sigmoid(&Tensor::randn(&[1, 3, 48, 48], 0.2, &mut rng)).detach();
    let hf_low = Tensor::randn(&[1, 3, 48, 48], 0.05, &mut rng).detach();
    let hf_high = Tensor::randn(&[1, 3, 48, 48], 0.05, &mut rng).detach();
    let loss = |_: &[Tensor<f64>]| {
        let d_low = decom.forward(&low).unwrap();
        let d_high = decom.forward(&high).unwrap().detach();
        let enhanced = enhance.forward(&hf_low, &d_low).unwrap();
        let adjusted = adjust.forward(&enhanced).unwrap();
        let branch = enhance_loss(
            &enhanced,
            &EnhanceTargets {
                hf_high: &hf_high,
                reflectance_high: &d_high.reflectance,
                illumination_high: &d_high.illumination,
            },
        )
        .unwrap();
        joint_loss(&adjusted, &high, branch, &fx).unwrap().total
    };
    let mut named = enhance.named_params();
    named.extend(adjust.named_params());
    let probes = spread(&named, 5);
    gradcheck(&probes, &loss, 4, E2E_TOL, 41);
}
