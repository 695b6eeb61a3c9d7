//! Acceptance suite: one test per release criterion, each printing a single
//! `acceptance: <name>: PASS|FAIL` line. Oracles are reimplemented here from
//! scratch (dense solves, scalar loss recomputation) so they are independent
//! of the library code they check.

mod common;

use std::panic::AssertUnwindSafe;
use std::path::PathBuf;

use common::{darken, gradcheck, textured, tiny_config, write_pair_dirs};
use lowlight_core::config::Config;
use lowlight_core::image::Image;
use lowlight_core::iqa::{fsim, gmsd, mae, niqe, niqe_fit, psnr, ssim};
use lowlight_core::losses::{
    decom_loss, enhance_loss, joint_loss, EnhanceTargets, ExposureBundle, FeatureExtractor,
};
use lowlight_core::nets::{compose_retinex, AdjustNet, DecomNet, EnhanceNet, EnhanceOutput};
use lowlight_core::ops;
use lowlight_core::pipeline::{enhance_image, ingest, train_stage1, train_stage2, Models};
use lowlight_core::wls::{frequency_split, wls_base, WlsParams};
use lowlight_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn criterion(name: &str, body: impl FnOnce()) {
    let result = std::panic::catch_unwind(AssertUnwindSafe(body));
    let verdict = if result.is_ok() { "PASS" } else { "FAIL" };
    println!("acceptance: {name}: {verdict}");
    if let Err(e) = result {
        std::panic::resume_unwind(e);
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen::<f64>()).collect())
}

// ---------------------------------------------------------------------------
// 1. every differentiable op and both stage losses pass a finite-difference
//    gradient check in 64-bit

#[test]
fn gradient_integrity() {
    criterion("gradient integrity (ops + end-to-end stage losses)", || {
        let leaf = |shape: &[usize], std: f64, seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Tensor::<f64>::randn(shape, std, &mut rng).requires_grad()
        };
        let tol = 1e-4;

        let input = leaf(&[1, 2, 6, 6], 1.0, 1);
        let weight = leaf(&[3, 2, 3, 3], 0.5, 2);
        let bias = leaf(&[3], 0.5, 3);
        gradcheck(
            &[input, weight, bias],
            &|t| ops::sum(&ops::conv2d(&t[0], &t[1], &t[2], 1, 1).unwrap()),
            15,
            tol,
            10,
        );

        let rgb = leaf(&[1, 3, 5, 5], 1.0, 4);
        let mono = leaf(&[1, 1, 5, 5], 1.0, 5);
        gradcheck(
            &[rgb, mono],
            &|t| ops::sum(&ops::mul(&t[0], &t[1]).unwrap()),
            15,
            tol,
            11,
        );

        let x = leaf(&[1, 2, 6, 6], 1.0, 6);
        gradcheck(
            &[x.clone()],
            &|t| ops::sum(&ops::sigmoid(&ops::relu(&t[0]))),
            15,
            tol,
            12,
        );
        let shuffle_in = leaf(&[1, 4, 6, 6], 1.0, 8);
        gradcheck(
            &[shuffle_in],
            &|t| {
                ops::sum(
                    &ops::upsample2x(&t[0], lowlight_core::nets::UpsampleMode::PixelShuffle)
                        .unwrap(),
                )
            },
            15,
            tol,
            13,
        );
        let y = leaf(&[1, 2, 6, 6], 1.0, 7);
        gradcheck(&[x, y], &|t| ops::l1_loss(&t[0], &t[1]).unwrap(), 15, tol, 14);

        // end-to-end through toy networks and the full stage losses
        let mut cfg = Config::default();
        for (k, v) in [
            ("net.depth_levels", "3"),
            ("net.base_channels", "4"),
            ("net.dense_growth", "4"),
        ] {
            cfg.set(k, v).unwrap();
        }
        let spread = |named: &[(String, Tensor<f64>)], n: usize| -> Vec<Tensor<f64>> {
            let stride = (named.len() / n).max(1);
            named.iter().step_by(stride).take(n).map(|(_, t)| t.clone()).collect()
        };

        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let decom = DecomNet::<f64>::new(&cfg.net, true, &mut rng);
        let low = ops::sigmoid(&Tensor::randn(&[1, 3, 48, 48], 0.2, &mut rng)).detach();
        let high = ops::sigmoid(&Tensor::randn(&[1, 3, 48, 48], 0.2, &mut rng)).detach();
        let stage1 = |_: &[Tensor<f64>]| {
            let d_low = decom.forward(&low).unwrap();
            let d_high = decom.forward(&high).unwrap();
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
        gradcheck(&spread(&decom.named_params(), 4), &stage1, 3, 1e-3, 31);

        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let frozen = DecomNet::<f64>::new(&cfg.net, false, &mut rng);
        let enhance = EnhanceNet::<f64>::new(&cfg.net, true, &mut rng);
        let adjust = AdjustNet::<f64>::new(&cfg.net, true, &mut rng);
        let fx = FeatureExtractor::<f64>::new(vec![2, 4, 6], &mut rng);
        let low2 = ops::sigmoid(&Tensor::randn(&[1, 3, 48, 48], 0.2, &mut rng)).detach();
        let high2 = ops::sigmoid(&Tensor::randn(&[1, 3, 48, 48], 0.2, &mut rng)).detach();
        let hf_low = Tensor::randn(&[1, 3, 48, 48], 0.05, &mut rng).detach();
        let hf_high = Tensor::randn(&[1, 3, 48, 48], 0.05, &mut rng).detach();
        let stage2 = |_: &[Tensor<f64>]| {
            let d_low = frozen.forward(&low2).unwrap();
            let d_high = frozen.forward(&high2).unwrap().detach();
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
            joint_loss(&adjusted, &high2, branch, &fx).unwrap().total
        };
        let mut named = enhance.named_params();
        named.extend(adjust.named_params());
        gradcheck(&spread(&named, 4), &stage2, 3, 1e-3, 41);
    });
}

// ---------------------------------------------------------------------------
// 2. the decomposition algebra is exact: R * 1 + 0 reproduces the image
//    bit-for-bit and the frequency split reconstructs to solver precision

#[test]
fn retinex_and_split_reconstruction() {
    criterion("retinex composition identity + frequency-split reconstruction", || {
        let img = textured(21, 24, 20, 3);
        let t = img.to_tensor::<f64>();
        let ones = Tensor::<f64>::ones(&[1, 1, 24, 20]);
        let zero_hf = Tensor::<f64>::zeros(&[1, 3, 24, 20]);
        let composed = compose_retinex(&t, &ones, Some(&zero_hf)).unwrap();
        assert_eq!(*composed.data(), *t.data(), "R*1+0 must be bit-exact");

        let split = frequency_split(&img, &WlsParams::default()).unwrap();
        for i in 0..img.data.len() {
            assert!(
                (split.low_freq.data[i] + split.high_freq.data[i] - img.data[i]).abs() < 1e-6,
                "low + high must reconstruct the input at pixel {i}"
            );
        }
    });
}

// ---------------------------------------------------------------------------
// 3. the iterative smoothing solver agrees with an independently assembled
//    dense direct solve

#[test]
fn smoothing_solver_matches_dense_oracle() {
    criterion("edge-preserving solver vs dense direct solve", || {
        // independent reimplementation of the energy's normal equations
        let oracle = |input: &Image, p: &WlsParams| -> Vec<f64> {
            let (h, w) = (input.height, input.width);
            let n = h * w;
            let luma = input.luma();
            let log_l: Vec<f64> = luma.data.iter().map(|&v| v.max(1e-4).ln()).collect();
            let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    a[(i, i)] += 1.0;
                    if x + 1 < w {
                        let dx = log_l[i + 1] - log_l[i];
                        let lamw = p.lambda / (dx.abs().powf(p.alpha) + p.eps);
                        a[(i, i)] += lamw;
                        a[(i + 1, i + 1)] += lamw;
                        a[(i, i + 1)] -= lamw;
                        a[(i + 1, i)] -= lamw;
                    }
                    if y + 1 < h {
                        let dy = log_l[i + w] - log_l[i];
                        let lamw = p.lambda / (dy.abs().powf(p.alpha) + p.eps);
                        a[(i, i)] += lamw;
                        a[(i + w, i + w)] += lamw;
                        a[(i, i + w)] -= lamw;
                        a[(i + w, i)] -= lamw;
                    }
                }
            }
            let b = nalgebra::DVector::from_iterator(n, input.data.iter().copied());
            a.lu().solve(&b).unwrap().iter().copied().collect()
        };

        let p = WlsParams::default();
        for seed in 1u64..=5 {
            let img = textured(seed, 8, 8, 1);
            let fast = wls_base(&img, &p).unwrap();
            let exact = oracle(&img, &p);
            for i in 0..64 {
                assert!(
                    (fast.data[i] - exact[i]).abs() < 1e-6,
                    "seed {seed} pixel {i}: {} vs {}",
                    fast.data[i],
                    exact[i]
                );
            }
        }

        // degenerate settings have closed-form answers
        let img = textured(6, 8, 8, 3);
        let off = WlsParams { lambda: 0.0, ..Default::default() };
        assert_eq!(wls_base(&img, &off).unwrap().data, img.data);
        let flat = Image::constant(8, 8, 1, 0.37);
        let base = wls_base(&flat, &p).unwrap();
        assert!(base.data.iter().all(|v| (v - 0.37).abs() < 1e-10));
    });
}

// ---------------------------------------------------------------------------
// 4. loss totals match a from-scratch scalar recomputation, including the
//    published term weights 0.01, 0.001, and 0.1

#[test]
fn loss_weighting_fidelity() {
    criterion("loss totals vs scalar recomputation (0.01 / 0.001 / 0.1)", || {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let mean_abs = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            a.data()
                .iter()
                .zip(b.data().iter())
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                / a.numel() as f64
        };

        for _ in 0..10 {
            let (h, w) = (6, 5);
            let hw = h * w;
            let r_low = rand_tensor(&mut rng, &[1, 3, h, w]);
            let r_high = rand_tensor(&mut rng, &[1, 3, h, w]);
            let l_low = rand_tensor(&mut rng, &[1, 1, h, w]);
            let l_high = rand_tensor(&mut rng, &[1, 1, h, w]);
            let i_low = rand_tensor(&mut rng, &[1, 3, h, w]);
            let i_high = rand_tensor(&mut rng, &[1, 3, h, w]);
            let terms = decom_loss(
                ExposureBundle {
                    image: &i_low,
                    reflectance: &r_low,
                    illumination: &l_low,
                },
                ExposureBundle {
                    image: &i_high,
                    reflectance: &r_high,
                    illumination: &l_high,
                },
            )
            .unwrap();
            // scalar oracle: mean |r*l - img| with the 1-channel broadcast
            let recon = |r: &Tensor<f64>, l: &Tensor<f64>, img: &Tensor<f64>| -> f64 {
                let (rd, ld, id) = (r.data(), l.data(), img.data());
                let mut s = 0.0;
                for c in 0..3 {
                    for p in 0..hw {
                        s += (rd[c * hw + p] * ld[p] - id[c * hw + p]).abs();
                    }
                }
                s / (3 * hw) as f64
            };
            let expect = 0.01 * mean_abs(&r_low, &r_high)
                + recon(&r_low, &l_low, &i_low)
                + recon(&r_high, &l_high, &i_high)
                + 0.001 * (recon(&r_high, &l_low, &i_low) + recon(&r_low, &l_high, &i_high));
            assert!(
                (terms.total.item() - expect).abs() < 1e-6,
                "decomposition total {} vs oracle {expect}",
                terms.total.item()
            );
        }

        let fx = FeatureExtractor::<f64>::new(vec![2, 4, 6], &mut rng);
        for _ in 0..10 {
            let out = EnhanceOutput {
                hf_enhanced: rand_tensor(&mut rng, &[1, 3, 16, 16]),
                reflectance_enhanced: rand_tensor(&mut rng, &[1, 3, 16, 16]),
                illumination_enhanced: rand_tensor(&mut rng, &[1, 1, 16, 16]),
            };
            let hf_high = rand_tensor(&mut rng, &[1, 3, 16, 16]);
            let r_high = rand_tensor(&mut rng, &[1, 3, 16, 16]);
            let l_high = rand_tensor(&mut rng, &[1, 1, 16, 16]);
            let final_image = rand_tensor(&mut rng, &[1, 3, 16, 16]);
            let reference = rand_tensor(&mut rng, &[1, 3, 16, 16]);
            let branch = enhance_loss(
                &out,
                &EnhanceTargets {
                    hf_high: &hf_high,
                    reflectance_high: &r_high,
                    illumination_high: &l_high,
                },
            )
            .unwrap();
            let terms = joint_loss(&final_image, &reference, branch, &fx).unwrap();

            let l_enhance = mean_abs(&out.hf_enhanced, &hf_high)
                + mean_abs(&out.reflectance_enhanced, &r_high)
                + mean_abs(&out.illumination_enhanced, &l_high);
            let colour = mean_abs(&final_image, &reference);
            let gen_feats = fx.features(&final_image).unwrap();
            let ref_feats = fx.features(&reference).unwrap();
            let content = gen_feats
                .iter()
                .zip(&ref_feats)
                .map(|(g, r)| mean_abs(g, r))
                .sum::<f64>()
                / gen_feats.len() as f64;
            let expect = 0.1 * l_enhance + colour + content;
            assert!(
                (terms.total.item() - expect).abs() < 1e-6,
                "joint total {} vs oracle {expect}",
                terms.total.item()
            );
        }
    });
}

// ---------------------------------------------------------------------------
// 5. both stages overfit a single pair: stage 1 reduces its loss 10x and
//    stage 2 gains at least 3 dB PSNR over the unenhanced input, each within
//    500 steps

#[test]
fn single_pair_overfit() {
    criterion("single-pair overfit (10x stage-1 loss, +3 dB stage-2 PSNR)", || {
        let dir = tempfile::tempdir().unwrap();
        let high = textured(1, 192, 192, 3);
        let low = darken(&high, 0.2);
        write_pair_dirs(dir.path(), &[("pair.png", &low, &high)]);
        let ds = ingest(&dir.path().join("low"), &dir.path().join("high")).unwrap();

        let mut cfg = Config::default();
        let cache = dir.path().join("wls_cache");
        for (k, v) in [
            ("net.base_channels", "8"),
            ("net.dense_growth", "8"),
            ("train.patch_size", "96"),
            ("adam.lr", "1e-3"),
            ("train.wls_cache_dir", cache.to_str().unwrap()),
        ] {
            cfg.set(k, v).unwrap();
        }

        // stage 1 in resumable 25-step chunks until the loss drops 10x
        let out_dir = dir.path().join("run");
        let chunk = 25;
        let cap = 500;
        let mut steps = 0;
        let mut initial = f64::NAN;
        let mut ratio = 0.0;
        let mut ckpt: Option<PathBuf> = None;
        while steps < cap {
            steps += chunk;
            cfg.set("train.epochs", &steps.to_string()).unwrap();
            let out = train_stage1(&ds, &cfg, &out_dir, ckpt.as_deref()).unwrap();
            if initial.is_nan() {
                initial = out.initial_total;
            }
            ratio = initial / out.final_total;
            ckpt = Some(out.checkpoint);
            if ratio >= 10.0 {
                break;
            }
        }
        assert!(
            ratio >= 10.0,
            "stage-1 loss only fell {ratio:.2}x in {steps} steps"
        );
        let stage1_ckpt = ckpt.unwrap();

        // stage 2 likewise, measured as full-image PSNR against the target
        let baseline = psnr(&low, &high).unwrap();
        let mut steps = 0;
        let mut gain = 0.0;
        let mut ckpt: Option<PathBuf> = None;
        while steps < cap {
            steps += chunk;
            cfg.set("train.epochs", &steps.to_string()).unwrap();
            let out = train_stage2(&ds, &cfg, &stage1_ckpt, &out_dir, ckpt.as_deref()).unwrap();
            ckpt = Some(out.checkpoint);
            let models = Models::load(&out_dir, &cfg).unwrap();
            let enhanced = enhance_image(&low, &models, &cfg).unwrap();
            gain = psnr(&enhanced.final_image, &high).unwrap() - baseline;
            if gain >= 3.0 {
                break;
            }
        }
        assert!(
            gain >= 3.0,
            "stage-2 PSNR gain only {gain:.2} dB over the {baseline:.2} dB baseline in {steps} steps"
        );
    });
}

// ---------------------------------------------------------------------------
// 6. architecture knobs do what they claim: encoder depth controls the
//    deepest feature-map extent, and both upsampling modes run end to end

#[test]
fn depth_ablation_and_upsample_modes() {
    criterion("depth ablation + both upsampling modes", || {
        let mut cfg = Config::default();
        for (k, v) in [("net.base_channels", "4"), ("net.dense_growth", "4")] {
            cfg.set(k, v).unwrap();
        }
        let img = {
            let mut rng = ChaCha8Rng::seed_from_u64(60);
            ops::sigmoid(&Tensor::<f32>::randn(&[1, 3, 192, 192], 0.5, &mut rng)).detach()
        };
        for (levels, expect) in [(6usize, (6usize, 6usize)), (5, (12, 12))] {
            cfg.set("net.depth_levels", &levels.to_string()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(61);
            let net = DecomNet::<f32>::new(&cfg.net, false, &mut rng);
            let (_, deepest) = net.forward_traced(&img).unwrap();
            assert_eq!(
                deepest, expect,
                "{levels} levels on 192x192 must bottom out at {expect:?}"
            );
        }

        // pixel-shuffle upsampling through the full three-net chain
        for mode in ["nearest", "pixel_shuffle"] {
            cfg.set("net.depth_levels", "3").unwrap();
            cfg.set("net.upsample", mode).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(62);
            let decom = DecomNet::<f32>::new(&cfg.net, false, &mut rng);
            let enhance = EnhanceNet::<f32>::new(&cfg.net, false, &mut rng);
            let adjust = AdjustNet::<f32>::new(&cfg.net, false, &mut rng);
            let small = {
                let mut rng = ChaCha8Rng::seed_from_u64(63);
                ops::sigmoid(&Tensor::<f32>::randn(&[1, 3, 48, 48], 0.5, &mut rng)).detach()
            };
            let hf = Tensor::<f32>::zeros(&[1, 3, 48, 48]);
            let d = decom.forward(&small).unwrap();
            let e = enhance.forward(&hf, &d).unwrap();
            let out = adjust.forward(&e).unwrap();
            assert_eq!(out.shape(), &[1, 3, 48, 48], "mode {mode}");
        }
    });
}

// ---------------------------------------------------------------------------
// 7. every metric reproduces its closed-form anchor values, and the
//    no-reference metric ranks a noisy image worse than its clean source

#[test]
fn metric_oracles() {
    criterion("metric anchor values + no-reference ranking", || {
        let x = textured(70, 64, 64, 3);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-9);
        assert!((fsim(&x, &x).unwrap() - 1.0).abs() < 1e-6);
        assert!(gmsd(&x, &x).unwrap().abs() < 1e-9);
        let shifted = x.map(|v| v + 0.1);
        assert!((mae(&x, &shifted).unwrap() - 0.1).abs() < 1e-12);
        let a = Image::constant(16, 16, 3, 0.5);
        let b = Image::constant(16, 16, 3, 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-3, "MSE 0.01 is 20 dB");

        let corpus: Vec<Image> = (0..10).map(|i| textured(80 + i, 144, 144, 3)).collect();
        let model = niqe_fit(&corpus, 48, 0.75).unwrap();
        let clean = textured(99, 144, 144, 3);
        let noisy = {
            let mut rng = ChaCha8Rng::seed_from_u64(100);
            clean.map(|v| {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen();
                v + 0.25 * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
        };
        let q_clean = niqe(&clean, &model).unwrap();
        let q_noisy = niqe(&noisy, &model).unwrap();
        assert!(
            q_clean < q_noisy,
            "clean scored {q_clean:.3}, noisy {q_noisy:.3}"
        );
    });
}

// ---------------------------------------------------------------------------
// 8. training is bit-reproducible: identical seeds give byte-identical logs
//    and checkpoints

#[test]
fn training_determinism() {
    criterion("seeded training is byte-reproducible", || {
        let dir = tempfile::tempdir().unwrap();
        let high = textured(5, 32, 32, 3);
        let low = darken(&high, 0.25);
        write_pair_dirs(dir.path(), &[("pair.png", &low, &high)]);
        let ds = ingest(&dir.path().join("low"), &dir.path().join("high")).unwrap();
        let mut cfg = tiny_config();
        cfg.set("train.epochs", "5").unwrap();
        let a = train_stage1(&ds, &cfg, &dir.path().join("a"), None).unwrap();
        let b = train_stage1(&ds, &cfg, &dir.path().join("b"), None).unwrap();
        assert_eq!(
            std::fs::read(&a.log).unwrap(),
            std::fs::read(&b.log).unwrap(),
            "training logs differ between identically seeded runs"
        );
        assert_eq!(
            std::fs::read(&a.checkpoint).unwrap(),
            std::fs::read(&b.checkpoint).unwrap(),
            "checkpoints differ between identically seeded runs"
        );
    });
}
