//! Image quality metrics: PSNR, SSIM, FSIM, MAE, GMSD (full-reference) and
//! NIQE (no-reference). Parameters are pinned to each metric's original
//! publication defaults; images are unit-interval sRGB, luma is
//! 0.299/0.587/0.114.

mod fsim;
mod gmsd;
mod niqe;
mod ssim;

pub use fsim::fsim;
pub use gmsd::gmsd;
pub use niqe::{niqe, niqe_fit, NiqeModel, NIQE_PATCH_SIZE, NIQE_SHARPNESS_FRACTION};
pub use ssim::ssim;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::image::Image;

#[derive(Debug, Error)]
pub enum IqaError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("image {height}x{width} is smaller than the {required}x{required} window")]
    TooSmall {
        height: usize,
        width: usize,
        required: usize,
    },
    #[error("undefined similarity: both inputs are featureless but not identical")]
    UndefinedSimilarity,
    #[error("too few valid patches ({found}, need at least {required})")]
    TooFewPatches { found: usize, required: usize },
    #[error("fitting corpus has {found} images, need at least {required}")]
    CorpusTooSmall { found: usize, required: usize },
}

fn check_shapes(a: &Image, b: &Image) -> Result<(), IqaError> {
    if !a.same_shape(b) {
        return Err(IqaError::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    Ok(())
}

/// 10*log10(1/MSE) in dB with MAX = 1; infinite for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, IqaError> {
    check_shapes(a, b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

/// Mean absolute error over all elements.
pub fn mae(a: &Image, b: &Image) -> Result<f64, IqaError> {
    check_shapes(a, b)?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.data.len() as f64)
}

/// Named scores for one evaluation; full-reference metrics plus an optional
/// NIQE column. Serializes in Table-style 3-decimal formatting.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    values: BTreeMap<String, f64>,
}

pub const METRIC_ORDER: [&str; 6] = ["psnr", "ssim", "fsim", "mae", "gmsd", "niqe"];

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn full_reference(output: &Image, reference: &Image) -> Result<Self, IqaError> {
        let mut r = MetricReport::new();
        r.set("psnr", psnr(output, reference)?);
        r.set("ssim", ssim(output, reference)?);
        r.set("fsim", fsim(output, reference)?);
        r.set("mae", mae(output, reference)?);
        r.set("gmsd", gmsd(output, reference)?);
        Ok(r)
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.values.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    fn format_value(v: f64) -> String {
        if v.is_infinite() {
            "inf".to_string()
        } else {
            format!("{:.3}", v)
        }
    }

    /// Metric names present, in canonical order.
    pub fn names(&self) -> Vec<&str> {
        METRIC_ORDER
            .iter()
            .copied()
            .filter(|n| self.values.contains_key(*n))
            .collect()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for name in self.names() {
            let _ = writeln!(out, "{:<6} {}", name, Self::format_value(self.values[name]));
        }
        out
    }

    pub fn to_csv_row(&self) -> String {
        self.names()
            .iter()
            .map(|n| Self::format_value(self.values[*n]))
            .collect::<Vec<_>>()
            .join(",")
    }
}
