#![allow(dead_code)]

use lowlight_core::config::Config;
use lowlight_core::image::{save_png, Image};
use lowlight_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Textured pseudo-natural image in [0,1]: gradients, block edges, noise.
pub fn textured(seed: u64, h: usize, w: usize, c: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let fx = x as f64 / w as f64;
                let fy = y as f64 / h as f64;
                let edge = if ((x / (w / 4 + 1)) + (y / (h / 4 + 1))) % 2 == 0 {
                    0.15
                } else {
                    -0.15
                };
                let v = 0.5 + 0.2 * (fx * 7.0).sin() + 0.15 * (fy * 5.0).cos() + edge
                    + rng.gen_range(-0.03..0.03);
                *img.at_mut(y, x, ch) = v.clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// A darkened copy standing in for the low-light member of a pair.
pub fn darken(img: &Image, factor: f64) -> Image {
    img.map(|v| v * factor)
}

/// Write `<root>/low/*.png` and `<root>/high/*.png`.
pub fn write_pair_dirs(root: &Path, pairs: &[(&str, &Image, &Image)]) {
    let low_dir = root.join("low");
    let high_dir = root.join("high");
    std::fs::create_dir_all(&low_dir).unwrap();
    std::fs::create_dir_all(&high_dir).unwrap();
    for (name, low, high) in pairs {
        save_png(&low_dir.join(name), low).unwrap();
        save_png(&high_dir.join(name), high).unwrap();
    }
}

/// Small-network config for fast test runs.
pub fn tiny_config() -> Config {
    let mut cfg = Config::default();
    for (k, v) in [
        ("net.depth_levels", "3"),
        ("net.base_channels", "4"),
        ("net.dense_growth", "4"),
        ("train.patch_size", "32"),
        ("adam.lr", "1e-3"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

/// Central-difference gradient check of `f` at ~`samples` coordinates of
/// each input, in 64-bit. `f` must rebuild the graph from the given leaves
/// and return a scalar. Points where the relative error exceeds `tol` but
/// the function looks locally non-smooth (large second difference) are
/// resampled rather than failed.
pub fn gradcheck(
    inputs: &[Tensor<f64>],
    f: &dyn Fn(&[Tensor<f64>]) -> Tensor<f64>,
    samples: usize,
    tol: f64,
    seed: u64,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    for t in inputs {
        t.zero_grad();
    }
    let loss = f(inputs);
    loss.backward().unwrap();
    let grads: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().expect("input did not receive a gradient"))
        .collect();
    for (idx, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let mut checked = 0;
        let mut attempts = 0;
        while checked < samples.min(n) && attempts < samples * 10 {
            attempts += 1;
            let i = rng.gen_range(0..n);
            let orig = input.data()[i];
            let eval = |v: f64| {
                input.data_mut()[i] = v;
                let out = f(inputs).item();
                input.data_mut()[i] = orig;
                out
            };
            let numeric = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
            let analytic = grads[idx][i];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            let rel = (analytic - numeric).abs() / denom;
            if rel > tol {
                // halving the step should barely move a smooth estimate; if
                // it does, the interval straddles a kink (|x|, relu) and the
                // coordinate is resampled instead of failed
                let finer = (eval(orig + h / 2.0) - eval(orig - h / 2.0)) / h;
                if (finer - numeric).abs() / denom > tol / 4.0 {
                    continue;
                }
                panic!(
                    "input {idx} coord {i}: analytic {analytic:.8e} vs numeric {numeric:.8e} (rel {rel:.2e})"
                );
            }
            checked += 1;
        }
        assert!(
            checked >= samples.min(n) / 2,
            "input {idx}: too many non-smooth resamples ({checked} checks in {attempts} attempts)"
        );
    }
}
