//! Filter-network fusion: a bank of guided-filter kernels followed by a
//! small convolutional refinement head, run independently per band.
//!
//! Weights are inference-only inputs. The file format is a little-endian
//! u32 header length, a JSON header
//! `{kernels, kernel_height, kernel_width, refine_channels, epsilon}`, then
//! one f32-little-endian payload holding, in order: the K kernels, the first
//! refinement layer (32 x K x 3 x 3 weights + 32 biases), the second
//! refinement layer (32 x 32 x 3 x 3 weights + 32 biases), and the output
//! projection (32 weights + 1 bias).

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::{GrayImage, HsiCube};
use crate::error::{Error, Result};
use crate::guided::{guided_filter_band, Kernel};
use crate::sparse::SparseSpectralImage;

pub const REFINE_CHANNELS: usize = 32;
pub const REFINE_KERNEL: usize = 3;

/// One 3x3 convolution layer with per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `out * in * 3 * 3`, output-major.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    fn zeros(in_channels: usize, out_channels: usize) -> Self {
        ConvLayer {
            in_channels,
            out_channels,
            weights: vec![0.0; out_channels * in_channels * REFINE_KERNEL * REFINE_KERNEL],
            bias: vec![0.0; out_channels],
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let want = self.out_channels * self.in_channels * REFINE_KERNEL * REFINE_KERNEL;
        if self.weights.len() != want {
            return Err(Error::DimensionMismatch(format!(
                "{name} has {} weights, expected {want}",
                self.weights.len()
            )));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::DimensionMismatch(format!(
                "{name} has {} biases, expected {}",
                self.bias.len(),
                self.out_channels
            )));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam(format!("{name} has non-finite values")));
        }
        Ok(())
    }

    #[inline]
    fn weight(&self, out_c: usize, in_c: usize, ky: usize, kx: usize) -> f32 {
        self.weights[((out_c * self.in_channels + in_c) * REFINE_KERNEL + ky) * REFINE_KERNEL + kx]
    }

    /// Zero-padded 3x3 convolution over channel-major planes.
    fn apply(&self, input: &[f32], width: usize, height: usize, relu: bool) -> Vec<f32> {
        let n = width * height;
        let mut out = vec![0.0f32; self.out_channels * n];
        for oc in 0..self.out_channels {
            let plane = &mut out[oc * n..(oc + 1) * n];
            for v in plane.iter_mut() {
                *v = self.bias[oc];
            }
            for ic in 0..self.in_channels {
                let src = &input[ic * n..(ic + 1) * n];
                for ky in 0..REFINE_KERNEL {
                    let dy = ky as isize - 1;
                    for kx in 0..REFINE_KERNEL {
                        let dx = kx as isize - 1;
                        let wgt = self.weight(oc, ic, ky, kx);
                        if wgt == 0.0 {
                            continue;
                        }
                        for y in 0..height as isize {
                            let sy = y + dy;
                            if sy < 0 || sy >= height as isize {
                                continue;
                            }
                            let x0 = (-dx).max(0);
                            let x1 = (width as isize - dx).min(width as isize);
                            for x in x0..x1 {
                                plane[(y as usize) * width + x as usize] +=
                                    wgt * src[sy as usize * width + (x + dx) as usize];
                            }
                        }
                    }
                }
            }
            if relu {
                for v in plane.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        out
    }
}

/// Guided-filter bank plus refinement head.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterNetWeights {
    pub kernel_height: usize,
    pub kernel_width: usize,
    /// K kernels, each `kernel_height * kernel_width`.
    pub kernels: Vec<Vec<f32>>,
    pub refine1: ConvLayer,
    pub refine2: ConvLayer,
    pub proj_weights: Vec<f32>,
    pub proj_bias: f32,
    pub epsilon: f32,
}

impl FilterNetWeights {
    pub fn validate(&self) -> Result<()> {
        if self.kernels.is_empty() {
            return Err(Error::InvalidParam("no guided kernels".into()));
        }
        if self.kernel_height % 2 == 0 || self.kernel_width % 2 == 0 {
            return Err(Error::InvalidParam("kernel sides must be odd".into()));
        }
        for (i, k) in self.kernels.iter().enumerate() {
            if k.len() != self.kernel_height * self.kernel_width {
                return Err(Error::DimensionMismatch(format!(
                    "kernel {i} has {} weights, expected {}",
                    k.len(),
                    self.kernel_height * self.kernel_width
                )));
            }
            if k.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParam(format!("kernel {i} not finite")));
            }
        }
        if self.refine1.in_channels != self.kernels.len()
            || self.refine1.out_channels != REFINE_CHANNELS
        {
            return Err(Error::DimensionMismatch(
                "first refinement layer shape does not match the kernel bank".into(),
            ));
        }
        if self.refine2.in_channels != REFINE_CHANNELS
            || self.refine2.out_channels != REFINE_CHANNELS
        {
            return Err(Error::DimensionMismatch(
                "second refinement layer must map 32 -> 32 channels".into(),
            ));
        }
        self.refine1.validate("refine1")?;
        self.refine2.validate("refine2")?;
        if self.proj_weights.len() != REFINE_CHANNELS {
            return Err(Error::DimensionMismatch(format!(
                "projection has {} weights, expected {REFINE_CHANNELS}",
                self.proj_weights.len()
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParam("epsilon must be > 0".into()));
        }
        Ok(())
    }

    /// Identity refinement head: channel 0 carries the positive part of the
    /// kernel average, channel 1 the negative part (so the ReLUs are
    /// transparent), and the projection reassembles their difference.
    fn identity_head(k: usize) -> (ConvLayer, ConvLayer, Vec<f32>, f32) {
        let mut refine1 = ConvLayer::zeros(k, REFINE_CHANNELS);
        let center = REFINE_KERNEL * REFINE_KERNEL / 2;
        for ic in 0..k {
            let avg = 1.0 / k as f32;
            refine1.weights[ic * REFINE_KERNEL * REFINE_KERNEL + center] = avg;
            refine1.weights[(k + ic) * REFINE_KERNEL * REFINE_KERNEL + center] = -avg;
        }
        let mut refine2 = ConvLayer::zeros(REFINE_CHANNELS, REFINE_CHANNELS);
        for c in 0..2 {
            refine2.weights[((c * REFINE_CHANNELS + c) * REFINE_KERNEL * REFINE_KERNEL) + center] =
                1.0;
        }
        let mut proj = vec![0.0f32; REFINE_CHANNELS];
        proj[0] = 1.0;
        proj[1] = -1.0;
        (refine1, refine2, proj, 0.0)
    }

    /// Handcrafted default bank: `k` Gaussian kernels of distinct widths,
    /// averaged by an identity refinement head.
    pub fn default_bank(k: usize, kernel_height: usize, kernel_width: usize) -> Result<Self> {
        if k == 0 || kernel_height % 2 == 0 || kernel_width % 2 == 0 {
            return Err(Error::InvalidParam(
                "need at least one kernel with odd sides".into(),
            ));
        }
        let mut kernels = Vec::with_capacity(k);
        for i in 0..k {
            let f = 0.08 + 0.05 * i as f32;
            let sigma_x = (f * kernel_width as f32).max(0.5);
            let sigma_y = (f * kernel_height as f32).max(0.5);
            let g = Kernel::gaussian(kernel_height, kernel_width, sigma_y, sigma_x)?;
            let (col, row) = match g {
                Kernel::Separable { col, row } => (col, row),
                _ => unreachable!(),
            };
            let mut dense = Vec::with_capacity(kernel_height * kernel_width);
            for c in &col {
                for r in &row {
                    dense.push(c * r);
                }
            }
            kernels.push(dense);
        }
        let (refine1, refine2, proj_weights, proj_bias) = Self::identity_head(k);
        let weights = FilterNetWeights {
            kernel_height,
            kernel_width,
            kernels,
            refine1,
            refine2,
            proj_weights,
            proj_bias,
            epsilon: 1e-4,
        };
        weights.validate()?;
        Ok(weights)
    }

    /// Single-kernel bank with the identity head; collapses the network to a
    /// plain guided filter.
    pub fn single_kernel(kernel: &Kernel, epsilon: f32) -> Result<Self> {
        let (h, w) = kernel.size();
        let mut dense = vec![0.0f32; h * w];
        match kernel {
            Kernel::Box { .. } => dense.fill(1.0),
            Kernel::Separable { col, row } => {
                for (i, c) in col.iter().enumerate() {
                    for (j, r) in row.iter().enumerate() {
                        dense[i * w + j] = c * r;
                    }
                }
            }
            Kernel::Dense { weights, .. } => dense.copy_from_slice(weights),
        }
        let (refine1, refine2, proj_weights, proj_bias) = Self::identity_head(1);
        let out = FilterNetWeights {
            kernel_height: h,
            kernel_width: w,
            kernels: vec![dense],
            refine1,
            refine2,
            proj_weights,
            proj_bias,
            epsilon,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let header = WeightsHeader {
            kernels: self.kernels.len(),
            kernel_height: self.kernel_height,
            kernel_width: self.kernel_width,
            refine_channels: REFINE_CHANNELS,
            refine_kernel: REFINE_KERNEL,
            epsilon: self.epsilon,
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut file = std::fs::File::create(path)?;
        file.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        file.write_all(&header_bytes)?;
        let mut payload: Vec<f32> = Vec::new();
        for k in &self.kernels {
            payload.extend_from_slice(k);
        }
        payload.extend_from_slice(&self.refine1.weights);
        payload.extend_from_slice(&self.refine1.bias);
        payload.extend_from_slice(&self.refine2.weights);
        payload.extend_from_slice(&self.refine2.bias);
        payload.extend_from_slice(&self.proj_weights);
        payload.push(self.proj_bias);
        let mut bytes = Vec::with_capacity(payload.len() * 4);
        for v in payload {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path)?;
        let mut len_bytes = [0u8; 4];
        file.read_exact(&mut len_bytes)?;
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        file.read_exact(&mut header_bytes)?;
        let header: WeightsHeader = serde_json::from_slice(&header_bytes)?;
        if header.refine_channels != REFINE_CHANNELS || header.refine_kernel != REFINE_KERNEL {
            return Err(Error::MalformedFile {
                path: path.display().to_string(),
                reason: "unsupported refinement head shape".into(),
            });
        }
        let mut rest = Vec::new();
        file.read_to_end(&mut rest)?;
        let floats: Vec<f32> = rest
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let ksz = header.kernel_height * header.kernel_width;
        let r1w = REFINE_CHANNELS * header.kernels * REFINE_KERNEL * REFINE_KERNEL;
        let r2w = REFINE_CHANNELS * REFINE_CHANNELS * REFINE_KERNEL * REFINE_KERNEL;
        let want = header.kernels * ksz + r1w + REFINE_CHANNELS + r2w + REFINE_CHANNELS
            + REFINE_CHANNELS
            + 1;
        if floats.len() != want {
            return Err(Error::MalformedFile {
                path: path.display().to_string(),
                reason: format!("payload holds {} floats, header implies {want}", floats.len()),
            });
        }
        let mut cur = 0usize;
        let mut take = |n: usize| {
            let s = floats[cur..cur + n].to_vec();
            cur += n;
            s
        };
        let kernels: Vec<Vec<f32>> = (0..header.kernels).map(|_| take(ksz)).collect();
        let refine1 = ConvLayer {
            in_channels: header.kernels,
            out_channels: REFINE_CHANNELS,
            weights: take(r1w),
            bias: take(REFINE_CHANNELS),
        };
        let refine2 = ConvLayer {
            in_channels: REFINE_CHANNELS,
            out_channels: REFINE_CHANNELS,
            weights: take(r2w),
            bias: take(REFINE_CHANNELS),
        };
        let proj_weights = take(REFINE_CHANNELS);
        let proj_bias = take(1)[0];
        let out = FilterNetWeights {
            kernel_height: header.kernel_height,
            kernel_width: header.kernel_width,
            kernels,
            refine1,
            refine2,
            proj_weights,
            proj_bias,
            epsilon: header.epsilon,
        };
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsHeader {
    kernels: usize,
    kernel_height: usize,
    kernel_width: usize,
    refine_channels: usize,
    refine_kernel: usize,
    epsilon: f32,
}

/// Voxels the kernel bank could not cover (no sample under any kernel).
#[derive(Debug, Clone, Default)]
pub struct FuseReport {
    /// `(band, pixel index)` pairs left at zero.
    pub uncovered: Vec<(usize, usize)>,
}

/// Run the filter bank and refinement head over every band independently.
pub fn fuse_network(
    sparse: &SparseSpectralImage,
    gray: &GrayImage,
    weights: &FilterNetWeights,
    wavelengths: &[f32],
) -> Result<(HsiCube, FuseReport)> {
    weights.validate()?;
    if gray.width != sparse.width || gray.height != sparse.height {
        return Err(Error::DimensionMismatch("gray vs sparse image size".into()));
    }
    if wavelengths.len() != sparse.bands {
        return Err(Error::DimensionMismatch(
            "wavelength count vs sparse bands".into(),
        ));
    }
    let (w, h) = (sparse.width, sparse.height);
    let n = w * h;
    let k = weights.kernels.len();
    let kernels: Vec<Kernel> = weights
        .kernels
        .iter()
        .map(|kv| Kernel::from_dense(weights.kernel_height, weights.kernel_width, kv.clone()))
        .collect::<Result<_>>()?;

    let band_results: Vec<(Vec<f32>, Vec<(usize, usize)>)> = (0..sparse.bands)
        .into_par_iter()
        .map(|b| {
            let plane = sparse.band_plane(b);
            let mask = sparse.band_mask(b);
            let mut stack = vec![0.0f32; k * n];
            let mut covered = vec![false; n];
            for (ki, kernel) in kernels.iter().enumerate() {
                let gb = guided_filter_band(
                    plane,
                    &mask,
                    &gray.data,
                    w,
                    h,
                    kernel,
                    weights.epsilon,
                )?;
                for i in 0..n {
                    if !gb.uncovered[i] {
                        covered[i] = true;
                    }
                }
                stack[ki * n..(ki + 1) * n].copy_from_slice(&gb.values);
            }
            let r1 = weights.refine1.apply(&stack, w, h, true);
            let r2 = weights.refine2.apply(&r1, w, h, true);
            let mut out = vec![weights.proj_bias; n];
            for c in 0..REFINE_CHANNELS {
                let wgt = weights.proj_weights[c];
                if wgt == 0.0 {
                    continue;
                }
                for i in 0..n {
                    out[i] += wgt * r2[c * n + i];
                }
            }
            let mut uncovered = Vec::new();
            for i in 0..n {
                if !covered[i] {
                    out[i] = 0.0;
                    uncovered.push((b, i));
                }
            }
            Ok((out, uncovered))
        })
        .collect::<Result<_>>()?;

    let mut cube = HsiCube::new(w, h, wavelengths.to_vec())?;
    let mut report = FuseReport::default();
    for (b, (plane, uncovered)) in band_results.into_iter().enumerate() {
        // Clamp tiny negative excursions so the cube invariant holds.
        let dst = cube.band_plane_mut(b);
        for (d, v) in dst.iter_mut().zip(plane) {
            *d = v.max(0.0);
        }
        report.uncovered.extend(uncovered);
    }
    Ok((cube, report))
}
