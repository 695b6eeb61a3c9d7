//! SSIM with the original 11x11 Gaussian window (sigma 1.5), K1=0.01,
//! K2=0.03, dynamic range 1, computed on luma.

use super::{check_shapes, IqaError};
use crate::image::Image;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let mut w = Vec::with_capacity(WINDOW * WINDOW);
    let c = (WINDOW / 2) as f64;
    for y in 0..WINDOW {
        for x in 0..WINDOW {
            let d2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            w.push((-d2 / (2.0 * SIGMA * SIGMA)).exp());
        }
    }
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64, IqaError> {
    check_shapes(a, b)?;
    if a.height < WINDOW || a.width < WINDOW {
        return Err(IqaError::TooSmall {
            height: a.height,
            width: a.width,
            required: WINDOW,
        });
    }
    let la = a.luma();
    let lb = b.luma();
    let win = gaussian_window();
    let c1 = (K1 * K1) as f64;
    let c2 = (K2 * K2) as f64;
    let (h, w) = (a.height, a.width);
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - WINDOW {
        for x0 in 0..=w - WINDOW {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for dy in 0..WINDOW {
                for dx in 0..WINDOW {
                    let wv = win[dy * WINDOW + dx];
                    let va = la.at(y0 + dy, x0 + dx, 0);
                    let vb = lb.at(y0 + dy, x0 + dx, 0);
                    mu_a += wv * va;
                    mu_b += wv * vb;
                    aa += wv * va * va;
                    bb += wv * vb * vb;
                    ab += wv * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}
