//! Layer building blocks shared by the three networks.

use rand::Rng;

use crate::scalar::Scalar;
use crate::tensor::ops::{self, UpsampleMode};
use crate::tensor::{Tensor, TensorError};

/// 3x3 (or 1x1) convolution layer with bias.
pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        trainable: bool,
        rng: &mut R,
    ) -> Self {
        // He init for relu stacks
        let std = (2.0 / (cin * kernel * kernel) as f64).sqrt();
        let mut weight = Tensor::randn(&[cout, cin, kernel, kernel], std, rng);
        let mut bias = Tensor::zeros(&[cout]);
        if trainable {
            weight = weight.requires_grad();
            bias = bias.requires_grad();
        }
        Conv2d {
            weight,
            bias,
            stride,
            padding: kernel / 2,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        ops::conv2d(x, &self.weight, &self.bias, self.stride, self.padding)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Short-hop residual unit: relu(x + conv(relu(conv(x)))).
pub struct ResBlock<T: Scalar> {
    c1: Conv2d<T>,
    c2: Conv2d<T>,
}

impl<T: Scalar> ResBlock<T> {
    pub fn new<R: Rng>(channels: usize, trainable: bool, rng: &mut R) -> Self {
        ResBlock {
            c1: Conv2d::new(channels, channels, 3, 1, trainable, rng),
            c2: Conv2d::new(channels, channels, 3, 1, trainable, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let h = ops::relu(&self.c1.forward(x)?);
        let h = self.c2.forward(&h)?;
        Ok(ops::relu(&ops::add(x, &h)?))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.c1.collect_params(&format!("{prefix}.c1"), out);
        self.c2.collect_params(&format!("{prefix}.c2"), out);
    }
}

/// Dense block: each conv sees the concatenation of the block input and all
/// previous conv outputs; the block output keeps them all.
pub struct DenseBlock<T: Scalar> {
    convs: Vec<Conv2d<T>>,
}

impl<T: Scalar> DenseBlock<T> {
    pub fn new<R: Rng>(
        cin: usize,
        growth: usize,
        layers: usize,
        trainable: bool,
        rng: &mut R,
    ) -> Self {
        let convs = (0..layers)
            .map(|i| Conv2d::new(cin + i * growth, growth, 3, 1, trainable, rng))
            .collect();
        DenseBlock { convs }
    }

    pub fn out_channels(&self, cin: usize, growth: usize) -> usize {
        cin + self.convs.len() * growth
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let mut features = vec![x.clone()];
        for conv in &self.convs {
            let joined = ops::concat_channels(&features)?;
            features.push(ops::relu(&conv.forward(&joined)?));
        }
        ops::concat_channels(&features)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        for (i, c) in self.convs.iter().enumerate() {
            c.collect_params(&format!("{prefix}.conv{i}"), out);
        }
    }
}

/// Decoder upsampler: either nearest-neighbor followed by a conv, or a conv
/// into 4x channels redistributed by pixel shuffle.
pub struct Upsampler<T: Scalar> {
    mode: UpsampleMode,
    conv: Conv2d<T>,
}

impl<T: Scalar> Upsampler<T> {
    pub fn new<R: Rng>(
        cin: usize,
        cout: usize,
        mode: UpsampleMode,
        trainable: bool,
        rng: &mut R,
    ) -> Self {
        let conv = match mode {
            UpsampleMode::Nearest => Conv2d::new(cin, cout, 3, 1, trainable, rng),
            UpsampleMode::PixelShuffle => Conv2d::new(cin, 4 * cout, 3, 1, trainable, rng),
        };
        Upsampler { mode, conv }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        match self.mode {
            UpsampleMode::Nearest => {
                let up = ops::upsample2x(x, UpsampleMode::Nearest)?;
                Ok(ops::relu(&self.conv.forward(&up)?))
            }
            UpsampleMode::PixelShuffle => {
                let pre = self.conv.forward(x)?;
                Ok(ops::relu(&ops::upsample2x(&pre, UpsampleMode::PixelShuffle)?))
            }
        }
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        self.conv.collect_params(&format!("{prefix}.conv"), out);
    }
}
