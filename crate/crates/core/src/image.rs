//! Plain HWC pixel container shared by the filter, metric, and training code.

use std::path::Path;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        source: image::ImageError,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        source: image::ImageError,
    },
    #[error("{path}: unsupported pixel format (8-bit or 16-bit RGB/gray PNG expected)")]
    UnsupportedFormat { path: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// H x W x C array of unit-interval reals (high-frequency layers may be
/// signed). Row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width * channels);
        Image {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::new(height, width, channels, vec![0.0; height * width * channels])
    }

    pub fn constant(height: usize, width: usize, channels: usize, v: f64) -> Self {
        Self::new(height, width, channels, vec![v; height * width * channels])
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize, c: usize) -> &mut f64 {
        &mut self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Rec. 601 luma (0.299 R + 0.587 G + 0.114 B); identity on 1-channel.
    pub fn luma(&self) -> Image {
        match self.channels {
            1 => self.clone(),
            3 => {
                let mut out = Image::zeros(self.height, self.width, 1);
                for i in 0..self.height * self.width {
                    let r = self.data[3 * i];
                    let g = self.data[3 * i + 1];
                    let b = self.data[3 * i + 2];
                    out.data[i] = 0.299 * r + 0.587 * g + 0.114 * b;
                }
                out
            }
            c => panic!("luma on {}-channel image", c),
        }
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Aligned crop of the given extent.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Image {
        assert!(y0 + h <= self.height && x0 + w <= self.width);
        let mut out = Image::zeros(h, w, self.channels);
        for y in 0..h {
            let src = ((y0 + y) * self.width + x0) * self.channels;
            let dst = y * w * self.channels;
            out.data[dst..dst + w * self.channels]
                .copy_from_slice(&self.data[src..src + w * self.channels]);
        }
        out
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = Image::zeros(self.height, self.width, self.channels);
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    *out.at_mut(y, x, c) = self.at(y, self.width - 1 - x, c);
                }
            }
        }
        out
    }

    /// Replicate-pad on the bottom/right so both extents hit the requested
    /// multiple; used before running the networks on arbitrary sizes.
    pub fn pad_to_multiple(&self, multiple: usize) -> Image {
        let nh = self.height.div_ceil(multiple) * multiple;
        let nw = self.width.div_ceil(multiple) * multiple;
        if nh == self.height && nw == self.width {
            return self.clone();
        }
        let mut out = Image::zeros(nh, nw, self.channels);
        for y in 0..nh {
            let sy = y.min(self.height - 1);
            for x in 0..nw {
                let sx = x.min(self.width - 1);
                for c in 0..self.channels {
                    *out.at_mut(y, x, c) = self.at(sy, sx, c);
                }
            }
        }
        out
    }

    /// 2x average-pool downsample (used by the metric suite); truncates odd
    /// trailing rows/columns.
    pub fn downsample2x_avg(&self) -> Image {
        let h = self.height / 2;
        let w = self.width / 2;
        let mut out = Image::zeros(h, w, self.channels);
        for y in 0..h {
            for x in 0..w {
                for c in 0..self.channels {
                    let s = self.at(2 * y, 2 * x, c)
                        + self.at(2 * y, 2 * x + 1, c)
                        + self.at(2 * y + 1, 2 * x, c)
                        + self.at(2 * y + 1, 2 * x + 1, c);
                    *out.at_mut(y, x, c) = s / 4.0;
                }
            }
        }
        out
    }

    /// To an NCHW tensor with N=1.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let hw = self.height * self.width;
        let mut data = vec![T::zero(); self.channels * hw];
        for c in 0..self.channels {
            for i in 0..hw {
                data[c * hw + i] = T::from_f64(self.data[i * self.channels + c]);
            }
        }
        Tensor::from_vec(&[1, self.channels, self.height, self.width], data)
    }

    /// From a (1,C,H,W) tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Image {
        let shape = t.shape();
        assert_eq!(shape.len(), 4, "expected NCHW tensor, got {:?}", shape);
        assert_eq!(shape[0], 1, "expected batch of 1, got {:?}", shape);
        let (c, h, w) = (shape[1], shape[2], shape[3]);
        let hw = h * w;
        let td = t.data();
        let mut out = Image::zeros(h, w, c);
        for ch in 0..c {
            for i in 0..hw {
                out.data[i * c + ch] = td[ch * hw + i].as_f64();
            }
        }
        out
    }
}

/// Load a PNG as unit-interval reals: 8-bit maps v/255, 16-bit v/65535.
pub fn load_png(path: &Path) -> Result<Image, ImageError> {
    let img = image::open(path).map_err(|source| ImageError::Read {
        path: path.display().to_string(),
        source,
    })?;
    use image::DynamicImage::*;
    let (h, w): (usize, usize) = (img.height() as usize, img.width() as usize);
    let out = match img {
        ImageLuma8(b) => Image::new(h, w, 1, b.into_raw().iter().map(|&v| v as f64 / 255.0).collect()),
        ImageRgb8(b) => Image::new(h, w, 3, b.into_raw().iter().map(|&v| v as f64 / 255.0).collect()),
        ImageRgba8(b) => {
            let raw = b.into_raw();
            let mut data = Vec::with_capacity(h * w * 3);
            for px in raw.chunks_exact(4) {
                data.extend(px[..3].iter().map(|&v| v as f64 / 255.0));
            }
            Image::new(h, w, 3, data)
        }
        ImageLuma16(b) => Image::new(h, w, 1, b.into_raw().iter().map(|&v| v as f64 / 65535.0).collect()),
        ImageRgb16(b) => Image::new(h, w, 3, b.into_raw().iter().map(|&v| v as f64 / 65535.0).collect()),
        _ => {
            return Err(ImageError::UnsupportedFormat {
                path: path.display().to_string(),
            })
        }
    };
    Ok(out)
}

/// Write an 8-bit PNG; values are clamped to [0,1] and rounded.
pub fn save_png(path: &Path, img: &Image) -> Result<(), ImageError> {
    let to8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let bytes: Vec<u8> = img.data.iter().map(|&v| to8(v)).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let res = match img.channels {
        1 => image::GrayImage::from_raw(w, h, bytes)
            .expect("buffer size")
            .save(path),
        3 => image::RgbImage::from_raw(w, h, bytes)
            .expect("buffer size")
            .save(path),
        c => {
            return Err(ImageError::Shape(format!(
                "cannot encode a {}-channel image as PNG",
                c
            )))
        }
    };
    res.map_err(|source| ImageError::Write {
        path: path.display().to_string(),
        source,
    })
}
