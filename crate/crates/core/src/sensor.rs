//! Forward simulation of the dispersive arm and demultiplexing of sampled
//! spectra.
//!
//! The noiseless signal at sensor pixel (x, y) is
//! `sum_b blur_b[H(.,y,b) * M_real](x - s_b) * c_b` with
//! `M_real = (1 - eps) * M + eps` modeling the mask's finite contrast ratio.
//! Streaks extend in +x and contributions past the sensor edge are truncated.
//! Noise is applied after a global photon scaling that maps the brightest
//! noiseless pixel to `photon_level` electrons; every pixel then draws from
//! its own counter-indexed stream so results are schedule-independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::cube::HsiCube;
use crate::dispersion::{DispersionModel, NoiseParams};
use crate::error::{Error, Result};
use crate::mask::SamplingMask;
use crate::rng::derive_seed_indexed;

/// Raw sensor frame in electrons; values may dip below zero after read noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl SensorImage {
    pub fn new(width: usize, height: usize) -> Self {
        SensorImage {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn max_value(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}

/// One demultiplexed spectrum; bands whose streak fell off-sensor are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSpectrum {
    pub point: (usize, usize),
    /// Per-band value, zero where `present` is false.
    pub values: Vec<f32>,
    pub present: Vec<bool>,
}

fn check_dims(cube: &HsiCube, mask: &SamplingMask, disp: &DispersionModel) -> Result<()> {
    if mask.width != cube.width || mask.height != cube.height {
        return Err(Error::DimensionMismatch(format!(
            "mask {}x{} vs cube {}x{}",
            mask.width, mask.height, cube.width, cube.height
        )));
    }
    if disp.bands() != cube.bands {
        return Err(Error::DimensionMismatch(format!(
            "dispersion model has {} bands, cube has {}",
            disp.bands(),
            cube.bands
        )));
    }
    disp.validate()
}

/// Accumulate the dispersed image onto a sensor of `out_width` columns whose
/// origin sits `pad_left` pixels left of the scene origin. Rows are
/// independent (the blur is horizontal), so this parallelizes over rows
/// without changing results.
fn forward_padded(
    cube: &HsiCube,
    mask_real: &[f32],
    disp: &DispersionModel,
    pad_left: usize,
    out_width: usize,
) -> Vec<f32> {
    let (w, h) = (cube.width, cube.height);
    let kernels: Vec<(isize, Vec<f32>)> = (0..cube.bands).map(|b| disp.kernel(b)).collect();

    let mut out = vec![0.0f32; out_width * h];
    out.par_chunks_mut(out_width)
        .enumerate()
        .for_each(|(y, out_row)| {
            let mut masked = vec![0.0f32; w];
            let mut blurred = vec![0.0f32; w];
            for b in 0..cube.bands {
                let c = disp.response[b];
                if c == 0.0 {
                    continue;
                }
                let plane = cube.band_plane(b);
                let row = &plane[y * w..(y + 1) * w];
                let mrow = &mask_real[y * w..(y + 1) * w];
                for x in 0..w {
                    masked[x] = row[x] * mrow[x];
                }
                let (r, taps) = &kernels[b];
                let src: &[f32] = if *r == 0 {
                    &masked
                } else {
                    for (x, out_v) in blurred.iter_mut().enumerate() {
                        let mut acc = 0.0f32;
                        for (ti, tap) in taps.iter().enumerate() {
                            let u = x as isize + ti as isize - r;
                            if u >= 0 && (u as usize) < w {
                                acc += tap * masked[u as usize];
                            }
                        }
                        *out_v = acc;
                    }
                    &blurred
                };
                let shift = disp.shifts[b] + pad_left;
                for x in 0..w {
                    let sx = x + shift;
                    if sx < out_width {
                        out_row[sx] += src[x] * c;
                    }
                }
            }
        });
    out
}

fn mask_real_plane(mask: &SamplingMask, eps: f32) -> Vec<f32> {
    mask.bitmap
        .iter()
        .map(|&open| if open { (1.0 - eps) + eps } else { eps })
        .collect()
}

/// Noiseless capture on the scene-sized sensor.
pub fn capture_noiseless(
    cube: &HsiCube,
    mask: &SamplingMask,
    disp: &DispersionModel,
    contrast_eps: f32,
) -> Result<SensorImage> {
    check_dims(cube, mask, disp)?;
    if !(0.0..1.0).contains(&contrast_eps) {
        return Err(Error::InvalidParam(format!(
            "contrast eps {contrast_eps} outside [0, 1)"
        )));
    }
    let mask_real = mask_real_plane(mask, contrast_eps);
    let values = forward_padded(cube, &mask_real, disp, 0, cube.width);
    Ok(SensorImage {
        width: cube.width,
        height: cube.height,
        values,
    })
}

/// Full capture: dispersion, contrast leakage, then optional noise.
pub fn capture(
    cube: &HsiCube,
    mask: &SamplingMask,
    disp: &DispersionModel,
    contrast_eps: f32,
    noise: Option<&NoiseParams>,
) -> Result<SensorImage> {
    let clean = capture_noiseless(cube, mask, disp, contrast_eps)?;
    match noise {
        Some(params) => add_noise(&clean, params),
        None => Ok(clean),
    }
}

/// The electrons-per-signal-unit factor `add_noise` applies.
pub fn photon_scale(signal: &SensorImage, noise: &NoiseParams) -> f64 {
    let max = signal.max_value() as f64;
    if max > 0.0 {
        noise.photon_level / max
    } else {
        0.0
    }
}

/// Photon shot noise plus Gaussian read noise:
/// `out = Poisson(photon_level * signal / max(signal)) + N(0, read_std^2)`.
///
/// Each pixel samples from a ChaCha stream selected by its index, so the
/// result depends only on the seed, never on thread scheduling.
pub fn add_noise(signal: &SensorImage, noise: &NoiseParams) -> Result<SensorImage> {
    noise.validate()?;
    if signal.values.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidParam(
            "noise model requires a non-negative signal".into(),
        ));
    }
    let scale = photon_scale(signal, noise);
    let base = ChaCha8Rng::seed_from_u64(noise.seed);
    let read = noise.read_std;
    let values: Vec<f32> = signal
        .values
        .par_iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut rng = base.clone();
            rng.set_stream(i as u64);
            let lambda = v as f64 * scale;
            let mut out = 0.0f64;
            if lambda > 0.0 {
                out += Poisson::new(lambda).expect("lambda > 0").sample(&mut rng);
            }
            if read > 0.0 {
                out += Normal::new(0.0, read).expect("read >= 0").sample(&mut rng);
            }
            out as f32
        })
        .collect();
    Ok(SensorImage {
        width: signal.width,
        height: signal.height,
        values,
    })
}

fn extract_padded(
    img_values: &[f32],
    img_width: usize,
    mask: &SamplingMask,
    disp: &DispersionModel,
    pad_left: usize,
) -> Result<Vec<SampledSpectrum>> {
    if let Some(bad) = disp.response.iter().position(|&c| c == 0.0) {
        return Err(Error::InvalidParam(format!(
            "band {bad} has zero response and cannot be demultiplexed"
        )));
    }
    // Horizontal blur keeps rows independent, so conflict-freedom with a
    // vertical guard of one row is what demultiplexing requires.
    if let Some((p, q)) = mask.find_conflict(disp.n(), 1) {
        return Err(Error::MaskConflict(p, q));
    }
    let kernels: Vec<(isize, Vec<f32>)> = (0..disp.bands()).map(|b| disp.kernel(b)).collect();
    let mut out = Vec::with_capacity(mask.points.len());
    for &(x, y) in &mask.points {
        let mut values = vec![0.0f32; disp.bands()];
        let mut present = vec![false; disp.bands()];
        for b in 0..disp.bands() {
            let center = (x + disp.shifts[b] + pad_left) as isize;
            let r = kernels[b].0;
            if center - r < 0 || center + r >= img_width as isize {
                continue;
            }
            let mut acc = 0.0f32;
            for o in -r..=r {
                acc += img_values[y * img_width + (center + o) as usize];
            }
            values[b] = acc / disp.response[b];
            present[b] = true;
        }
        out.push(SampledSpectrum {
            point: (x, y),
            values,
            present,
        });
    }
    Ok(out)
}

/// Demultiplex one spectrum per open point by summing each band's blur
/// support around `x + shift(b)` and dividing by the band response. Bands
/// whose support runs off the sensor are marked missing.
pub fn extract_spectra(
    img: &SensorImage,
    mask: &SamplingMask,
    disp: &DispersionModel,
) -> Result<Vec<SampledSpectrum>> {
    if img.width != mask.width || img.height != mask.height {
        return Err(Error::DimensionMismatch(format!(
            "sensor {}x{} vs mask {}x{}",
            img.width, img.height, mask.width, mask.height
        )));
    }
    extract_padded(&img.values, img.width, mask, disp, 0)
}

/// Exhaustive pinhole-array scan that reassembles a full cube.
///
/// The scan simulates `h_spacing * v_spacing` captures with shifted pinhole
/// grids. Its internal sensor is padded by the streak length and the largest
/// blur radius so no pinhole ever loses trailing bands at the edge; without
/// noise, blur, and leakage the reassembled cube equals the input bit for
/// bit. With noise, each frame is rescaled back from electrons into scene
/// units using its own photon scale.
pub fn nyquist_scan(
    cube: &HsiCube,
    disp: &DispersionModel,
    h_spacing: usize,
    v_spacing: usize,
    noise: Option<&NoiseParams>,
) -> Result<HsiCube> {
    if disp.bands() != cube.bands {
        return Err(Error::DimensionMismatch(format!(
            "dispersion model has {} bands, cube has {}",
            disp.bands(),
            cube.bands
        )));
    }
    disp.validate()?;
    if h_spacing <= disp.n() {
        return Err(Error::InvalidParam(format!(
            "pinhole spacing {h_spacing} must exceed the streak length {}",
            disp.n()
        )));
    }
    if v_spacing == 0 {
        return Err(Error::InvalidParam("vertical spacing must be >= 1".into()));
    }
    let (w, h) = (cube.width, cube.height);
    let r_max = (0..cube.bands)
        .map(|b| disp.kernel(b).0)
        .max()
        .unwrap_or(0) as usize;
    let pad_left = r_max;
    let out_width = w + (disp.n() - 1) + 2 * r_max;

    let mut out = HsiCube::new(w, h, cube.wavelengths.clone())?;
    let mut frame = 0u64;
    for iy in 0..v_spacing.min(h) {
        for ix in 0..h_spacing.min(w) {
            let mut points = Vec::new();
            let mut y = iy;
            while y < h {
                let mut x = ix;
                while x < w {
                    points.push((x, y));
                    x += h_spacing;
                }
                y += v_spacing;
            }
            if points.is_empty() {
                continue;
            }
            let mask = SamplingMask::from_points(w, h, &points)?;
            let mask_real = mask_real_plane(&mask, 0.0);
            let noiseless = forward_padded(cube, &mask_real, disp, pad_left, out_width);
            let (values, scale) = match noise {
                Some(params) => {
                    let img = SensorImage {
                        width: out_width,
                        height: h,
                        values: noiseless,
                    };
                    let frame_noise = NoiseParams {
                        seed: derive_seed_indexed(params.seed, "scan-frame", frame),
                        ..*params
                    };
                    let scale = photon_scale(&img, &frame_noise);
                    (add_noise(&img, &frame_noise)?.values, scale)
                }
                None => (noiseless, 0.0),
            };
            let spectra = extract_padded(&values, out_width, &mask, disp, pad_left)?;
            for s in spectra {
                let (x, y) = s.point;
                for b in 0..cube.bands {
                    debug_assert!(s.present[b], "padded sensor lost a band");
                    let v = if noise.is_some() && scale > 0.0 {
                        (s.values[b] as f64 / scale) as f32
                    } else {
                        s.values[b]
                    };
                    out.data[out.idx(x, y, b)] = v;
                }
            }
            frame += 1;
        }
    }
    Ok(out)
}
