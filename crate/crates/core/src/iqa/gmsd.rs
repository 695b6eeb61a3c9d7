//! Gradient magnitude similarity deviation: 3x3 Prewitt gradients on the
//! 2x average-pooled luma, similarity constant c = 0.0026 on the [0,1]
//! scale, score = standard deviation of the similarity map.

use super::{check_shapes, IqaError};
use crate::image::Image;

const C: f64 = 0.0026;

/// Prewitt gradient magnitude with replicate borders.
fn gradient_magnitude(l: &Image) -> Vec<f64> {
    let (h, w) = (l.height as i64, l.width as i64);
    let px = |y: i64, x: i64| l.at(y.clamp(0, h - 1) as usize, x.clamp(0, w - 1) as usize, 0);
    let mut out = vec![0.0; (h * w) as usize];
    for y in 0..h {
        for x in 0..w {
            let gx = (px(y - 1, x + 1) + px(y, x + 1) + px(y + 1, x + 1)
                - px(y - 1, x - 1)
                - px(y, x - 1)
                - px(y + 1, x - 1))
                / 3.0;
            let gy = (px(y + 1, x - 1) + px(y + 1, x) + px(y + 1, x + 1)
                - px(y - 1, x - 1)
                - px(y - 1, x)
                - px(y - 1, x + 1))
                / 3.0;
            out[(y * w + x) as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

pub fn gmsd(a: &Image, b: &Image) -> Result<f64, IqaError> {
    check_shapes(a, b)?;
    let la = a.luma().downsample2x_avg();
    let lb = b.luma().downsample2x_avg();
    let ga = gradient_magnitude(&la);
    let gb = gradient_magnitude(&lb);
    let n = ga.len() as f64;
    let gms: Vec<f64> = ga
        .iter()
        .zip(&gb)
        .map(|(&x, &y)| (2.0 * x * y + C) / (x * x + y * y + C))
        .collect();
    let mean = gms.iter().sum::<f64>() / n;
    Ok((gms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt())
}
