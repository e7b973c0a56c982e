//! Mask-weighted guided filtering with a closed-form per-pixel solution.
//!
//! Each band is modeled as a local affine function of the gray guide,
//! `v ~ alpha * g + beta`, fit by weighted least squares over the kernel
//! window using only the pixels that carry samples:
//!
//! ```text
//! C_M   = corr(M, F)
//! mu_x  = corr(g * M, F) / C_M        mu_y  = corr(v * M, F) / C_M
//! mu_xx = corr(g^2 * M, F) / C_M      mu_xy = corr(g * v * M, F) / C_M
//! alpha = (mu_xy - mu_x mu_y) / (mu_xx - mu_x^2 + eps)
//! beta  = mu_y - alpha * mu_x
//! out   = alpha * g + beta
//! ```
//!
//! Borders use zero padding; `C_M` already discounts the missing support so
//! no renormalization bias appears. Pixels whose window contains no sample
//! (`C_M = 0`) output zero and are flagged uncovered.

use crate::error::{Error, Result};

/// Correlation kernel. The weight scale cancels in the moment ratios, so
/// box kernels use unit taps and only the regularizer `eps` is scale
/// sensitive (it lives in guide units squared).
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// Unit-weight window, evaluated with integral images.
    Box { height: usize, width: usize },
    /// Outer product `col x row`, evaluated as two 1D passes.
    Separable { col: Vec<f32>, row: Vec<f32> },
    /// Arbitrary weights, evaluated directly.
    Dense {
        height: usize,
        width: usize,
        weights: Vec<f32>,
    },
}

impl Kernel {
    pub fn boxcar(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || height % 2 == 0 || width % 2 == 0 {
            return Err(Error::InvalidParam(
                "kernel sides must be odd and positive".into(),
            ));
        }
        Ok(Kernel::Box { height, width })
    }

    /// Gaussian window of the given size.
    pub fn gaussian(height: usize, width: usize, sigma_y: f32, sigma_x: f32) -> Result<Self> {
        if height % 2 == 0 || width % 2 == 0 {
            return Err(Error::InvalidParam("kernel sides must be odd".into()));
        }
        let taps = |n: usize, sigma: f32| -> Vec<f32> {
            let r = (n / 2) as isize;
            let mut t: Vec<f32> = (-r..=r)
                .map(|o| (-((o * o) as f32) / (2.0 * sigma * sigma)).exp())
                .collect();
            let sum: f32 = t.iter().sum();
            for v in t.iter_mut() {
                *v /= sum;
            }
            t
        };
        Ok(Kernel::Separable {
            col: taps(height, sigma_y),
            row: taps(width, sigma_x),
        })
    }

    /// Default window for a sampling pitch of `n` pixels: wide enough that
    /// every window sees at least one sample of a conflict-free mask.
    pub fn default_for_spread(n: usize) -> Self {
        let odd = |v: usize| if v % 2 == 0 { v + 1 } else { v };
        Kernel::Box {
            height: odd(((0.75 * n as f64).round() as usize).max(3)),
            width: odd(((1.5 * n as f64).round() as usize).max(3)),
        }
    }

    pub fn from_dense(height: usize, width: usize, weights: Vec<f32>) -> Result<Self> {
        if weights.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "kernel payload {} != {height}x{width}",
                weights.len()
            )));
        }
        if height % 2 == 0 || width % 2 == 0 {
            return Err(Error::InvalidParam("kernel sides must be odd".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParam("kernel weights must be finite".into()));
        }
        Ok(Kernel::Dense {
            height,
            width,
            weights,
        })
    }

    pub fn size(&self) -> (usize, usize) {
        match self {
            Kernel::Box { height, width } => (*height, *width),
            Kernel::Separable { col, row } => (col.len(), row.len()),
            Kernel::Dense { height, width, .. } => (*height, *width),
        }
    }

    /// Correlate with zero padding: `out(x,y) = sum_k F(k) in(x+dx, y+dy)`.
    pub fn correlate(&self, input: &[f64], width: usize, height: usize) -> Vec<f64> {
        match self {
            Kernel::Box {
                height: kh,
                width: kw,
            } => {
                // Summed-area table with one pad row/column.
                let mut sat = vec![0.0f64; (width + 1) * (height + 1)];
                for y in 0..height {
                    for x in 0..width {
                        sat[(y + 1) * (width + 1) + x + 1] = input[y * width + x]
                            + sat[y * (width + 1) + x + 1]
                            + sat[(y + 1) * (width + 1) + x]
                            - sat[y * (width + 1) + x];
                    }
                }
                let (ry, rx) = (kh / 2, kw / 2);
                let mut out = vec![0.0f64; width * height];
                for y in 0..height {
                    let y0 = y.saturating_sub(ry);
                    let y1 = (y + ry + 1).min(height);
                    for x in 0..width {
                        let x0 = x.saturating_sub(rx);
                        let x1 = (x + rx + 1).min(width);
                        out[y * width + x] = sat[y1 * (width + 1) + x1]
                            - sat[y0 * (width + 1) + x1]
                            - sat[y1 * (width + 1) + x0]
                            + sat[y0 * (width + 1) + x0];
                    }
                }
                out
            }
            Kernel::Separable { col, row } => {
                let ry = (col.len() / 2) as isize;
                let rx = (row.len() / 2) as isize;
                let mut tmp = vec![0.0f64; width * height];
                for y in 0..height {
                    for x in 0..width {
                        let mut acc = 0.0;
                        for (i, &t) in row.iter().enumerate() {
                            let u = x as isize + i as isize - rx;
                            if u >= 0 && (u as usize) < width {
                                acc += t as f64 * input[y * width + u as usize];
                            }
                        }
                        tmp[y * width + x] = acc;
                    }
                }
                let mut out = vec![0.0f64; width * height];
                for y in 0..height {
                    for x in 0..width {
                        let mut acc = 0.0;
                        for (i, &t) in col.iter().enumerate() {
                            let v = y as isize + i as isize - ry;
                            if v >= 0 && (v as usize) < height {
                                acc += t as f64 * tmp[v as usize * width + x];
                            }
                        }
                        out[y * width + x] = acc;
                    }
                }
                out
            }
            Kernel::Dense {
                height: kh,
                width: kw,
                weights,
            } => {
                let ry = (kh / 2) as isize;
                let rx = (kw / 2) as isize;
                let mut out = vec![0.0f64; width * height];
                for y in 0..height {
                    for x in 0..width {
                        let mut acc = 0.0;
                        for ky in 0..*kh {
                            let v = y as isize + ky as isize - ry;
                            if v < 0 || v as usize >= height {
                                continue;
                            }
                            for kx in 0..*kw {
                                let u = x as isize + kx as isize - rx;
                                if u < 0 || u as usize >= width {
                                    continue;
                                }
                                acc += weights[ky * kw + kx] as f64
                                    * input[v as usize * width + u as usize];
                            }
                        }
                        out[y * width + x] = acc;
                    }
                }
                out
            }
        }
    }
}

/// One filtered band plus the pixels whose window saw no sample.
#[derive(Debug, Clone)]
pub struct GuidedBand {
    pub values: Vec<f32>,
    pub uncovered: Vec<bool>,
    pub uncovered_count: usize,
}

const COVERAGE_TINY: f64 = 1e-12;

/// Closed-form masked guided filter for one band.
pub fn guided_filter_band(
    band: &[f32],
    mask: &[f32],
    guide: &[f32],
    width: usize,
    height: usize,
    kernel: &Kernel,
    epsilon: f32,
) -> Result<GuidedBand> {
    let n = width * height;
    if band.len() != n || mask.len() != n || guide.len() != n {
        return Err(Error::DimensionMismatch(
            "band, mask, and guide must share the image size".into(),
        ));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParam("epsilon must be > 0".into()));
    }
    let eps = epsilon as f64;

    let mut gm = vec![0.0f64; n];
    let mut vm = vec![0.0f64; n];
    let mut ggm = vec![0.0f64; n];
    let mut gvm = vec![0.0f64; n];
    let mut m = vec![0.0f64; n];
    for i in 0..n {
        let g = guide[i] as f64;
        let v = band[i] as f64;
        let mk = mask[i] as f64;
        gm[i] = g * mk;
        vm[i] = v * mk;
        ggm[i] = g * g * mk;
        gvm[i] = g * v * mk;
        m[i] = mk;
    }
    let c_gm = kernel.correlate(&gm, width, height);
    let c_vm = kernel.correlate(&vm, width, height);
    let c_ggm = kernel.correlate(&ggm, width, height);
    let c_gvm = kernel.correlate(&gvm, width, height);
    let c_m = kernel.correlate(&m, width, height);

    let mut values = vec![0.0f32; n];
    let mut uncovered = vec![false; n];
    let mut uncovered_count = 0usize;
    for i in 0..n {
        if c_m[i].abs() <= COVERAGE_TINY {
            uncovered[i] = true;
            uncovered_count += 1;
            continue;
        }
        let mu_x = c_gm[i] / c_m[i];
        let mu_y = c_vm[i] / c_m[i];
        let mu_xx = c_ggm[i] / c_m[i];
        let mu_xy = c_gvm[i] / c_m[i];
        let alpha = (mu_xy - mu_x * mu_y) / (mu_xx - mu_x * mu_x + eps);
        let beta = mu_y - alpha * mu_x;
        values[i] = (alpha * guide[i] as f64 + beta) as f32;
    }
    Ok(GuidedBand {
        values,
        uncovered,
        uncovered_count,
    })
}
