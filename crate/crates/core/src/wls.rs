//! Edge-preserving weighted-least-squares smoothing and frequency splitting.
//!
//! The base layer is the minimizer of
//!
//! ```text
//! E(u) = sum_p (u_p - g_p)^2
//!      + lambda * sum_p [ w_x,p (du/dx)_p^2 + w_y,p (du/dy)_p^2 ]
//! ```
//!
//! with guide weights `w = (|dl/d.|^alpha + eps)^-1` computed from the
//! log-luminance `l` of the input, so smoothing shuts off across strong
//! edges. The normal equations form a sparse SPD 5-point-stencil system
//! solved matrix-free by diagonally preconditioned conjugate gradients.
//! Forward differences with replicate boundaries (zero gradient across the
//! border) keep the system SPD.

use thiserror::Error;

use crate::image::Image;

#[derive(Debug, Error)]
pub enum WlsError {
    #[error("conjugate gradient did not converge within {iterations} iterations (relative residual {residual:.3e}, tolerance {tolerance:.1e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },
    #[error("non-finite value in input image")]
    NonFiniteInput,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlsParams {
    /// Smoothing strength.
    pub lambda: f64,
    /// Edge sensitivity exponent on the guide gradients.
    pub alpha: f64,
    /// Weight regularizer.
    pub eps: f64,
    /// Derive smoothing weights from each channel instead of shared luma.
    pub per_channel: bool,
}

impl Default for WlsParams {
    fn default() -> Self {
        WlsParams {
            lambda: 1.0,
            alpha: 1.2,
            eps: 1e-4,
            per_channel: false,
        }
    }
}

/// Low/high frequency split; `low_freq + high_freq` reconstructs the input.
#[derive(Debug, Clone)]
pub struct FrequencySplit {
    pub low_freq: Image,
    pub high_freq: Image,
    pub params: WlsParams,
}

const CG_TOLERANCE: f64 = 1e-8;

/// Smoothing weights along x and y from the guide image's log-luminance.
fn guide_weights(input: &Image, params: &WlsParams) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (input.height, input.width);
    let luma = input.luma();
    let log_l: Vec<f64> = luma.data.iter().map(|&v| v.max(1e-4).ln()).collect();
    let mut wx = vec![0.0; h * w];
    let mut wy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let dx = if x + 1 < w { log_l[i + 1] - log_l[i] } else { 0.0 };
            let dy = if y + 1 < h { log_l[i + w] - log_l[i] } else { 0.0 };
            wx[i] = 1.0 / (dx.abs().powf(params.alpha) + params.eps);
            wy[i] = 1.0 / (dy.abs().powf(params.alpha) + params.eps);
        }
    }
    (wx, wy)
}

/// Matrix-free application of A = I + lambda * (Dx^T Wx Dx + Dy^T Wy Dy).
struct Stencil<'a> {
    h: usize,
    w: usize,
    lambda: f64,
    wx: &'a [f64],
    wy: &'a [f64],
}

impl Stencil<'_> {
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let (h, w, lam) = (self.h, self.w, self.lambda);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let mut acc = u[i];
                if x + 1 < w {
                    acc += lam * self.wx[i] * (u[i] - u[i + 1]);
                }
                if x > 0 {
                    acc += lam * self.wx[i - 1] * (u[i] - u[i - 1]);
                }
                if y + 1 < h {
                    acc += lam * self.wy[i] * (u[i] - u[i + w]);
                }
                if y > 0 {
                    acc += lam * self.wy[i - w] * (u[i] - u[i - w]);
                }
                out[i] = acc;
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let (h, w, lam) = (self.h, self.w, self.lambda);
        let mut d = vec![1.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    d[i] += lam * self.wx[i];
                }
                if x > 0 {
                    d[i] += lam * self.wx[i - 1];
                }
                if y + 1 < h {
                    d[i] += lam * self.wy[i];
                }
                if y > 0 {
                    d[i] += lam * self.wy[i - w];
                }
            }
        }
        d
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned CG, warm-started from the right-hand side.
fn pcg(stencil: &Stencil, b: &[f64], max_iter: usize) -> Result<Vec<f64>, WlsError> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let diag = stencil.diagonal();
    let mut x = b.to_vec();
    let mut ax = vec![0.0; n];
    stencil.apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bv, av)| bv - av).collect();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(rv, dv)| rv / dv).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut residual = dot(&r, &r).sqrt() / bnorm;
    if residual < CG_TOLERANCE {
        return Ok(x);
    }
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        stencil.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        residual = dot(&r, &r).sqrt() / bnorm;
        if residual < CG_TOLERANCE {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(WlsError::NonConvergence {
        iterations: max_iter,
        residual,
        tolerance: CG_TOLERANCE,
    })
}

/// Solve for the smoothed base layer. Channels are filtered independently
/// against shared luminance-derived weights.
pub fn wls_base(input: &Image, params: &WlsParams) -> Result<Image, WlsError> {
    if input.data.iter().any(|v| !v.is_finite()) {
        return Err(WlsError::NonFiniteInput);
    }
    if params.lambda == 0.0 {
        return Ok(input.clone());
    }
    let (h, w) = (input.height, input.width);
    let shared = if params.per_channel {
        None
    } else {
        Some(guide_weights(input, params))
    };
    let max_iter = 10 * h * w;
    let mut out = Image::zeros(h, w, input.channels);
    for c in 0..input.channels {
        let b: Vec<f64> = (0..h * w)
            .map(|i| input.data[i * input.channels + c])
            .collect();
        let own;
        let (wx, wy) = match &shared {
            Some(sw) => sw,
            None => {
                let chan = Image::new(h, w, 1, b.clone());
                own = guide_weights(&chan, params);
                &own
            }
        };
        let stencil = Stencil {
            h,
            w,
            lambda: params.lambda,
            wx,
            wy,
        };
        let u = pcg(&stencil, &b, max_iter)?;
        for i in 0..h * w {
            out.data[i * input.channels + c] = u[i];
        }
    }
    Ok(out)
}

/// Split into a smooth base and the signed detail/noise remainder.
pub fn frequency_split(input: &Image, params: &WlsParams) -> Result<FrequencySplit, WlsError> {
    let low = wls_base(input, params)?;
    let high = Image::new(
        input.height,
        input.width,
        input.channels,
        input
            .data
            .iter()
            .zip(&low.data)
            .map(|(i, l)| i - l)
            .collect(),
    );
    Ok(FrequencySplit {
        low_freq: low,
        high_freq: high,
        params: *params,
    })
}
