//! NIQE: no-reference quality from the statistics of mean-subtracted
//! contrast-normalized (MSCN) luma. 18 features per patch (GGD fit of the
//! MSCN coefficients plus AGGD fits of the four pairwise neighbor
//! products) at two scales = 36-dimensional vectors, compared against a
//! multivariate Gaussian fitted on a pristine corpus.

use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::gamma;

use super::IqaError;
use crate::checkpoint::Checkpoint;
use crate::image::Image;

pub const NIQE_PATCH_SIZE: usize = 96;
pub const NIQE_SHARPNESS_FRACTION: f64 = 0.75;
const FEATURES: usize = 36;
const MIN_PATCHES: usize = 4;
const MIN_CORPUS: usize = 10;
const COV_REG: f64 = 1e-6;

/// MSCN map plus the local-contrast field used for sharpness selection.
struct Mscn {
    coeffs: Vec<f64>,
    sigma: Vec<f64>,
    width: usize,
}

/// 7x7 Gaussian (sigma 7/6) local mean/variance normalization on
/// [0,255]-scale luma.
fn mscn(l: &Image) -> Mscn {
    let (h, w) = (l.height, l.width);
    let radius = 3i64;
    let sigma_k = 7.0 / 6.0;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma_k * sigma_k)).exp())
        .collect();
    let ksum: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|v| v / ksum).collect();

    let px: Vec<f64> = l.data.iter().map(|&v| v * 255.0).collect();
    let blur = |src: &[f64]| -> Vec<f64> {
        let mut tmp = vec![0.0; h * w];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut s = 0.0;
                for (i, kv) in kernel.iter().enumerate() {
                    let xx = (x + i as i64 - radius).clamp(0, w as i64 - 1);
                    s += kv * src[y as usize * w + xx as usize];
                }
                tmp[y as usize * w + x as usize] = s;
            }
        }
        let mut out = vec![0.0; h * w];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut s = 0.0;
                for (i, kv) in kernel.iter().enumerate() {
                    let yy = (y + i as i64 - radius).clamp(0, h as i64 - 1);
                    s += kv * tmp[yy as usize * w + x as usize];
                }
                out[y as usize * w + x as usize] = s;
            }
        }
        out
    };

    let mu = blur(&px);
    let sq: Vec<f64> = px.iter().map(|v| v * v).collect();
    let mu_sq = blur(&sq);
    let mut sigma = vec![0.0; h * w];
    let mut coeffs = vec![0.0; h * w];
    for i in 0..h * w {
        sigma[i] = (mu_sq[i] - mu[i] * mu[i]).max(0.0).sqrt();
        coeffs[i] = (px[i] - mu[i]) / (sigma[i] + 1.0);
    }
    Mscn {
        coeffs,
        sigma,
        width: w,
    }
}

fn ggd_gamma_grid() -> &'static Vec<(f64, f64)> {
    static GRID: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    GRID.get_or_init(|| {
        let mut grid = Vec::new();
        let mut g = 0.2;
        while g <= 10.0 {
            let r = gamma(1.0 / g) * gamma(3.0 / g) / gamma(2.0 / g).powi(2);
            grid.push((g, r));
            g += 0.001;
        }
        grid
    })
}

/// Moment-matched generalized Gaussian fit: (shape, variance).
fn fit_ggd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let sigma_sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let mean_abs = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    if mean_abs < 1e-12 {
        return (10.0, sigma_sq);
    }
    let rho = sigma_sq / (mean_abs * mean_abs);
    let mut best = (0.2, f64::INFINITY);
    for &(g, r) in ggd_gamma_grid() {
        let d = (r - rho).powi(2);
        if d < best.1 {
            best = (g, d);
        }
    }
    (best.0, sigma_sq)
}

/// Moment-matched asymmetric GGD fit: (shape, mean, left var, right var).
fn fit_aggd(x: &[f64]) -> (f64, f64, f64, f64) {
    let mut left_sq = 0.0;
    let mut left_n = 0usize;
    let mut right_sq = 0.0;
    let mut right_n = 0usize;
    for &v in x {
        if v < 0.0 {
            left_sq += v * v;
            left_n += 1;
        } else {
            right_sq += v * v;
            right_n += 1;
        }
    }
    let lstd = (left_sq / left_n.max(1) as f64).sqrt().max(1e-12);
    let rstd = (right_sq / right_n.max(1) as f64).sqrt().max(1e-12);
    let n = x.len() as f64;
    let mean_abs = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    let mean_sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    if mean_sq < 1e-24 {
        return (10.0, 0.0, lstd * lstd, rstd * rstd);
    }
    let gammahat = lstd / rstd;
    let rhat = mean_abs * mean_abs / mean_sq;
    let rhatnorm = rhat * (gammahat.powi(3) + 1.0) * (gammahat + 1.0)
        / (gammahat * gammahat + 1.0).powi(2);
    let mut best = (0.2, f64::INFINITY);
    for &(g, r) in ggd_gamma_grid() {
        // for the asymmetric fit the grid ratio is inverted
        let d = (1.0 / r - rhatnorm).powi(2);
        if d < best.1 {
            best = (g, d);
        }
    }
    let alpha = best.0;
    let eta = (rstd - lstd) * gamma(2.0 / alpha) / gamma(1.0 / alpha)
        * (gamma(1.0 / alpha) / gamma(3.0 / alpha)).sqrt();
    (alpha, eta, lstd * lstd, rstd * rstd)
}

/// 18 features of one MSCN patch: GGD of the coefficients, then AGGD of the
/// horizontal, vertical and both diagonal neighbor products.
fn patch_features(m: &Mscn, y0: usize, x0: usize, size: usize, out: &mut Vec<f64>) {
    let w = m.width;
    let mut patch = Vec::with_capacity(size * size);
    for y in y0..y0 + size {
        patch.extend_from_slice(&m.coeffs[y * w + x0..y * w + x0 + size]);
    }
    let (shape, var) = fit_ggd(&patch);
    out.push(shape);
    out.push(var);

    let shifts: [(usize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];
    for (dy, dx) in shifts {
        let mut prod = Vec::with_capacity(size * size);
        for y in 0..size - dy {
            for x in 0..size {
                let xs = x as isize + dx;
                if xs < 0 || xs >= size as isize {
                    continue;
                }
                let a = m.coeffs[(y0 + y) * w + x0 + x];
                let b = m.coeffs[(y0 + y + dy) * w + (x0 as isize + xs) as usize];
                prod.push(a * b);
            }
        }
        let (alpha, eta, lv, rv) = fit_aggd(&prod);
        out.push(alpha);
        out.push(eta);
        out.push(lv);
        out.push(rv);
    }
}

/// Per-patch 36-d feature vectors for one image. Patches are non-overlapping
/// `patch_size` squares; only patches whose mean local contrast reaches
/// `sharpness_fraction` of the sharpest patch are kept. The second half of
/// each vector comes from the half-resolution image at half the patch size.
fn image_features(
    img: &Image,
    patch_size: usize,
    sharpness_fraction: f64,
) -> Result<Vec<Vec<f64>>, IqaError> {
    if patch_size % 2 != 0 || patch_size < 8 {
        return Err(IqaError::ShapeMismatch(format!(
            "patch size {patch_size} must be even and at least 8"
        )));
    }
    let l1 = img.luma();
    let l2 = l1.downsample2x_avg();
    let m1 = mscn(&l1);
    let m2 = mscn(&l2);
    let rows = img.height / patch_size;
    let cols = img.width / patch_size;
    if rows == 0 || cols == 0 {
        return Err(IqaError::TooSmall {
            height: img.height,
            width: img.width,
            required: patch_size,
        });
    }

    let mut sharpness = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut s = 0.0;
            for y in r * patch_size..(r + 1) * patch_size {
                for x in c * patch_size..(c + 1) * patch_size {
                    s += m1.sigma[y * m1.width + x];
                }
            }
            sharpness[r * cols + c] = s / (patch_size * patch_size) as f64;
        }
    }
    let peak = sharpness.iter().cloned().fold(0.0f64, f64::max);
    let threshold = sharpness_fraction * peak;

    let half = patch_size / 2;
    let mut feats = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if sharpness[r * cols + c] < threshold {
                continue;
            }
            let mut v = Vec::with_capacity(FEATURES);
            patch_features(&m1, r * patch_size, c * patch_size, patch_size, &mut v);
            patch_features(&m2, r * half, c * half, half, &mut v);
            feats.push(v);
        }
    }
    if feats.len() < MIN_PATCHES {
        return Err(IqaError::TooFewPatches {
            found: feats.len(),
            required: MIN_PATCHES,
        });
    }
    Ok(feats)
}

fn mvg_fit(feats: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = feats.len();
    let mut mean = DVector::zeros(FEATURES);
    for f in feats {
        for i in 0..FEATURES {
            mean[i] += f[i];
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(FEATURES, FEATURES);
    for f in feats {
        let d = DVector::from_iterator(FEATURES, f.iter().copied()) - &mean;
        cov += &d * d.transpose();
    }
    cov /= (n.max(2) - 1) as f64;
    (mean, cov)
}

/// Pristine-corpus statistics for scoring.
#[derive(Debug, Clone)]
pub struct NiqeModel {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>, // row-major FEATURES x FEATURES
    pub patch_size: usize,
    pub sharpness_fraction: f64,
}

impl NiqeModel {
    pub fn save(&self, path: &Path) -> Result<(), crate::checkpoint::CheckpointError> {
        let mut ckpt = Checkpoint::new();
        ckpt.insert_raw(
            "niqe.mean",
            vec![FEATURES],
            self.mean.iter().map(|&v| v as f32).collect(),
        );
        ckpt.insert_raw(
            "niqe.cov",
            vec![FEATURES, FEATURES],
            self.cov.iter().map(|&v| v as f32).collect(),
        );
        ckpt.insert_raw("niqe.patch_size", vec![1], vec![self.patch_size as f32]);
        ckpt.insert_raw(
            "niqe.sharpness_fraction",
            vec![1],
            vec![self.sharpness_fraction as f32],
        );
        ckpt.save(path)
    }

    pub fn load(path: &Path) -> Result<Self, crate::checkpoint::CheckpointError> {
        let ckpt = Checkpoint::load(path)?;
        let field = |name: &str| {
            ckpt.get_raw(name)
                .map(|(_, data)| data.iter().map(|&v| v as f64).collect::<Vec<f64>>())
                .ok_or_else(|| crate::checkpoint::CheckpointError::MissingTensor {
                    name: name.to_string(),
                })
        };
        Ok(NiqeModel {
            mean: field("niqe.mean")?,
            cov: field("niqe.cov")?,
            patch_size: field("niqe.patch_size")?[0] as usize,
            sharpness_fraction: field("niqe.sharpness_fraction")?[0],
        })
    }
}

/// Fit the pristine model on a corpus of clean images (at least 10).
pub fn niqe_fit(
    corpus: &[Image],
    patch_size: usize,
    sharpness_fraction: f64,
) -> Result<NiqeModel, IqaError> {
    if corpus.len() < MIN_CORPUS {
        return Err(IqaError::CorpusTooSmall {
            found: corpus.len(),
            required: MIN_CORPUS,
        });
    }
    let mut feats = Vec::new();
    for img in corpus {
        feats.extend(image_features(img, patch_size, sharpness_fraction)?);
    }
    let (mean, cov) = mvg_fit(&feats);
    Ok(NiqeModel {
        mean: mean.iter().copied().collect(),
        cov: cov.iter().copied().collect(),
        patch_size,
        sharpness_fraction,
    })
}

/// Score one image against a fitted model; lower is better.
pub fn niqe(img: &Image, model: &NiqeModel) -> Result<f64, IqaError> {
    let feats = image_features(img, model.patch_size, model.sharpness_fraction)?;
    let (mean_d, cov_d) = mvg_fit(&feats);
    let mean_p = DVector::from_iterator(FEATURES, model.mean.iter().copied());
    // stored row-major; covariance is symmetric so ordering does not matter
    let cov_p = DMatrix::from_iterator(FEATURES, FEATURES, model.cov.iter().copied());
    let mut pooled = (cov_p + cov_d) * 0.5;
    for i in 0..FEATURES {
        pooled[(i, i)] += COV_REG;
    }
    let diff = mean_p - mean_d;
    let solved = pooled
        .lu()
        .solve(&diff)
        .ok_or(IqaError::UndefinedSimilarity)?;
    Ok(diff.dot(&solved).max(0.0).sqrt())
}
