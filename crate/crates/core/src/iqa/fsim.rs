//! FSIM: phase congruency (log-Gabor, 4 scales x 4 orientations) and
//! Scharr gradient similarity, pooled with phase-congruency-max weighting.
//! Constants follow the metric's original publication, with luma on a
//! [0,255] scale.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{check_shapes, IqaError};
use crate::image::Image;

const T1: f64 = 0.85; // phase congruency similarity constant
const T2: f64 = 160.0; // gradient similarity constant ([0,255] scale)

const NSCALE: usize = 4;
const NORIENT: usize = 4;
const MIN_WAVELENGTH: f64 = 6.0;
const MULT: f64 = 2.0;
const SIGMA_ONF: f64 = 0.55;
const D_THETA_ON_SIGMA: f64 = 1.2;
const NOISE_K: f64 = 2.0;
const EPS: f64 = 1e-4;

fn fft2(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(w)
    } else {
        planner.plan_fft_forward(w)
    };
    for row in data.chunks_mut(w) {
        row_fft.process(row);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(h)
    } else {
        planner.plan_fft_forward(h)
    };
    let mut col = vec![Complex64::default(); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = data[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            data[y * w + x] = col[y];
        }
    }
    if inverse {
        let scale = 1.0 / (h * w) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// Normalized frequency coordinate for index i of n (DC at index 0).
fn freq_coord(i: usize, n: usize) -> f64 {
    let half = n / 2;
    if i <= half {
        i as f64 / n as f64
    } else {
        (i as f64 - n as f64) / n as f64
    }
}

/// Per-orientation phase congruency of one image (Kovesi-style with noise
/// thresholding), returned as NORIENT maps.
fn phase_congruency(l: &Image) -> Vec<Vec<f64>> {
    let (h, w) = (l.height, l.width);
    let n = h * w;
    let mut freq: Vec<Complex64> = l.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut freq, h, w, false);

    // radial coordinates with DC at [0,0]
    let mut radius = vec![0.0; n];
    let mut theta = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let fy = freq_coord(y, h);
            let fx = freq_coord(x, w);
            radius[y * w + x] = (fx * fx + fy * fy).sqrt();
            theta[y * w + x] = (-fy).atan2(fx);
        }
    }
    radius[0] = 1.0; // avoid log(0) at DC; the filter is zeroed there anyway

    // low-pass to kill wrap-around artifacts
    let lowpass: Vec<f64> = radius
        .iter()
        .map(|&r| 1.0 / (1.0 + (r / 0.45).powi(30)))
        .collect();

    let log_sigma = SIGMA_ONF.ln();
    let mut loggabor = Vec::with_capacity(NSCALE);
    for s in 0..NSCALE {
        let wavelength = MIN_WAVELENGTH * MULT.powi(s as i32);
        let f0 = 1.0 / wavelength;
        let mut g: Vec<f64> = radius
            .iter()
            .zip(&lowpass)
            .map(|(&r, &lp)| {
                let lr = (r / f0).ln();
                (-(lr * lr) / (2.0 * log_sigma * log_sigma)).exp() * lp
            })
            .collect();
        g[0] = 0.0;
        loggabor.push(g);
    }

    let theta_sigma = std::f64::consts::PI / NORIENT as f64 / D_THETA_ON_SIGMA;
    let mut pc = Vec::with_capacity(NORIENT);
    for o in 0..NORIENT {
        let angle = o as f64 * std::f64::consts::PI / NORIENT as f64;
        let spread: Vec<f64> = theta
            .iter()
            .map(|&t| {
                let ds = t.sin() * angle.cos() - t.cos() * angle.sin();
                let dc = t.cos() * angle.cos() + t.sin() * angle.sin();
                let dtheta = ds.atan2(dc).abs();
                (-(dtheta * dtheta) / (2.0 * theta_sigma * theta_sigma)).exp()
            })
            .collect();

        let mut sum_e = vec![0.0; n];
        let mut sum_o = vec![0.0; n];
        let mut sum_an = vec![0.0; n];
        let mut eo: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(NSCALE);
        for g in &loggabor {
            let mut filtered: Vec<Complex64> = freq
                .iter()
                .zip(g.iter().zip(&spread))
                .map(|(&fv, (&gv, &sv))| fv * (gv * sv))
                .collect();
            fft2(&mut filtered, h, w, true);
            let e: Vec<f64> = filtered.iter().map(|c| c.re).collect();
            let od: Vec<f64> = filtered.iter().map(|c| c.im).collect();
            for i in 0..n {
                sum_e[i] += e[i];
                sum_o[i] += od[i];
                sum_an[i] += (e[i] * e[i] + od[i] * od[i]).sqrt();
            }
            eo.push((e, od));
        }

        // noise threshold from the smallest-scale amplitude distribution
        let mut a0: Vec<f64> = eo[0]
            .0
            .iter()
            .zip(&eo[0].1)
            .map(|(&e, &o)| (e * e + o * o).sqrt())
            .collect();
        a0.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = a0[a0.len() / 2];
        let tau = median / (4.0f64.ln()).sqrt();
        let inv_mult = 1.0 / MULT;
        let total_tau = tau * (1.0 - inv_mult.powi(NSCALE as i32)) / (1.0 - inv_mult);
        let pi = std::f64::consts::PI;
        let noise_mean = total_tau * (pi / 2.0).sqrt();
        let noise_sigma = total_tau * ((4.0 - pi) / 2.0).sqrt();
        let threshold = noise_mean + NOISE_K * noise_sigma;

        let mut energy = vec![0.0; n];
        for i in 0..n {
            let xe = (sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]).sqrt() + EPS;
            let me = sum_e[i] / xe;
            let mo = sum_o[i] / xe;
            for (e, od) in &eo {
                energy[i] += e[i] * me + od[i] * mo - (e[i] * mo - od[i] * me).abs();
            }
            energy[i] = (energy[i] - threshold).max(0.0);
        }
        let map: Vec<f64> = energy
            .iter()
            .zip(&sum_an)
            .map(|(&en, &an)| en / (an + EPS))
            .collect();
        pc.push(map);
    }
    pc
}

fn total_pc(l: &Image) -> Vec<f64> {
    let maps = phase_congruency(l);
    let n = l.height * l.width;
    let mut out = vec![0.0; n];
    for map in &maps {
        for i in 0..n {
            out[i] += map[i];
        }
    }
    out
}

/// Scharr gradient magnitude, replicate borders.
fn scharr_magnitude(l: &Image) -> Vec<f64> {
    let (h, w) = (l.height as i64, l.width as i64);
    let px = |y: i64, x: i64| l.at(y.clamp(0, h - 1) as usize, x.clamp(0, w - 1) as usize, 0);
    let mut out = vec![0.0; (h * w) as usize];
    for y in 0..h {
        for x in 0..w {
            let gx = (3.0 * px(y - 1, x + 1) + 10.0 * px(y, x + 1) + 3.0 * px(y + 1, x + 1)
                - 3.0 * px(y - 1, x - 1)
                - 10.0 * px(y, x - 1)
                - 3.0 * px(y + 1, x - 1))
                / 16.0;
            let gy = (3.0 * px(y + 1, x - 1) + 10.0 * px(y + 1, x) + 3.0 * px(y + 1, x + 1)
                - 3.0 * px(y - 1, x - 1)
                - 10.0 * px(y - 1, x)
                - 3.0 * px(y - 1, x + 1))
                / 16.0;
            out[(y * w + x) as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

pub fn fsim(a: &Image, b: &Image) -> Result<f64, IqaError> {
    check_shapes(a, b)?;
    // work on [0,255] luma, downsampled per the metric's convention
    let factor = ((a.height.min(a.width) as f64 / 256.0).round() as usize).max(1);
    let mut la = a.luma().map(|v| v * 255.0);
    let mut lb = b.luma().map(|v| v * 255.0);
    for _ in 0..factor.trailing_zeros() {
        // power-of-two part of the factor via repeated 2x pooling
        la = la.downsample2x_avg();
        lb = lb.downsample2x_avg();
    }
    let pc1 = total_pc(&la);
    let pc2 = total_pc(&lb);
    let g1 = scharr_magnitude(&la);
    let g2 = scharr_magnitude(&lb);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..pc1.len() {
        let s_pc = (2.0 * pc1[i] * pc2[i] + T1) / (pc1[i] * pc1[i] + pc2[i] * pc2[i] + T1);
        let s_g = (2.0 * g1[i] * g2[i] + T2) / (g1[i] * g1[i] + g2[i] * g2[i] + T2);
        let weight = pc1[i].max(pc2[i]);
        num += s_pc * s_g * weight;
        den += weight;
    }
    if den < 1e-12 {
        // featureless inputs: defined as 1 for identical images only
        return if a.data == b.data {
            Ok(1.0)
        } else {
            Err(IqaError::UndefinedSimilarity)
        };
    }
    Ok(num / den)
}
