//! Quality metrics: PSNR, SSIM, spectral angle, and the within-superpixel
//! homogeneity statistic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::superpixel::SuperpixelMap;

/// Peak signal-to-noise ratio in dB against reference `b`; the peak is the
/// reference maximum. Returns infinity on an exact match and clamps at zero
/// from below.
pub fn psnr(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch(
            "psnr inputs must share a nonzero length".into(),
        ));
    }
    let mut mse = 0.0f64;
    let mut peak = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        mse += ((x - y) as f64).powi(2);
        peak = peak.max(*y as f64);
    }
    mse /= a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    if peak == 0.0 {
        return Ok(0.0);
    }
    Ok((10.0 * (peak * peak / mse).log10()).max(0.0))
}

/// Per-band PSNR and the mean across bands.
pub fn psnr_cube(a: &HsiCube, b: &HsiCube) -> Result<(Vec<f64>, f64)> {
    if (a.width, a.height, a.bands) != (b.width, b.height, b.bands) {
        return Err(Error::DimensionMismatch("cube shapes differ".into()));
    }
    let per_band: Vec<f64> = (0..a.bands)
        .map(|band| psnr(a.band_plane(band), b.band_plane(band)))
        .collect::<Result<_>>()?;
    let mean = per_band.iter().sum::<f64>() / per_band.len() as f64;
    Ok((per_band, mean))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn ssim_window_weights() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for dy in -r..=r {
        for dx in -r..=r {
            w.push((-((dx * dx + dy * dy) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Mean SSIM over all fully interior 11x11 Gaussian windows, dynamic range
/// taken from the reference maximum.
pub fn ssim(a: &[f32], b: &[f32], width: usize, height: usize) -> Result<f64> {
    let range = b.iter().copied().fold(0.0f32, f32::max) as f64;
    ssim_with_range(a, b, width, height, if range > 0.0 { range } else { 1.0 })
}

pub fn ssim_with_range(
    a: &[f32],
    b: &[f32],
    width: usize,
    height: usize,
    dynamic_range: f64,
) -> Result<f64> {
    if a.len() != width * height || b.len() != width * height {
        return Err(Error::DimensionMismatch("ssim plane size".into()));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::InvalidParam(format!(
            "image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window"
        )));
    }
    let weights = ssim_window_weights();
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let r = SSIM_WINDOW / 2;
    let mut total = 0.0f64;
    let mut count = 0usize;
    for cy in r..height - r {
        for cx in r..width - r {
            let (mut ma, mut mb) = (0.0f64, 0.0f64);
            let mut wi = 0usize;
            for dy in 0..SSIM_WINDOW {
                let y = cy + dy - r;
                for dx in 0..SSIM_WINDOW {
                    let x = cx + dx - r;
                    let wgt = weights[wi];
                    wi += 1;
                    ma += wgt * a[y * width + x] as f64;
                    mb += wgt * b[y * width + x] as f64;
                }
            }
            let (mut va, mut vb, mut cov) = (0.0f64, 0.0f64, 0.0f64);
            wi = 0;
            for dy in 0..SSIM_WINDOW {
                let y = cy + dy - r;
                for dx in 0..SSIM_WINDOW {
                    let x = cx + dx - r;
                    let wgt = weights[wi];
                    wi += 1;
                    let da = a[y * width + x] as f64 - ma;
                    let db = b[y * width + x] as f64 - mb;
                    va += wgt * da * da;
                    vb += wgt * db * db;
                    cov += wgt * da * db;
                }
            }
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean SSIM across cube bands.
pub fn ssim_cube(a: &HsiCube, b: &HsiCube) -> Result<f64> {
    if (a.width, a.height, a.bands) != (b.width, b.height, b.bands) {
        return Err(Error::DimensionMismatch("cube shapes differ".into()));
    }
    let mut total = 0.0;
    for band in 0..a.bands {
        total += ssim(a.band_plane(band), b.band_plane(band), a.width, a.height)?;
    }
    Ok(total / a.bands as f64)
}

/// Spectral angle between two spectra in degrees, clamped to [0, 180].
pub fn sam(s1: &[f32], s2: &[f32]) -> Result<f64> {
    if s1.len() != s2.len() || s1.is_empty() {
        return Err(Error::DimensionMismatch("spectra lengths differ".into()));
    }
    let mut dot = 0.0f64;
    let mut n1 = 0.0f64;
    let mut n2 = 0.0f64;
    for (a, b) in s1.iter().zip(s2) {
        dot += *a as f64 * *b as f64;
        n1 += (*a as f64).powi(2);
        n2 += (*b as f64).powi(2);
    }
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::InvalidParam("sam of a zero spectrum".into()));
    }
    let cos = (dot / (n1.sqrt() * n2.sqrt())).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees().clamp(0.0, 180.0))
}

/// Mean spectral angle between two cubes over pixels with nonzero spectra.
pub fn sam_cube(a: &HsiCube, b: &HsiCube) -> Result<f64> {
    if (a.width, a.height, a.bands) != (b.width, b.height, b.bands) {
        return Err(Error::DimensionMismatch("cube shapes differ".into()));
    }
    let n = a.width * a.height;
    let mut total = 0.0f64;
    let mut count = 0usize;
    for i in 0..n {
        let sa: Vec<f32> = (0..a.bands).map(|band| a.data[band * n + i]).collect();
        let sb: Vec<f32> = (0..b.bands).map(|band| b.data[band * n + i]).collect();
        if let Ok(angle) = sam(&sa, &sb) {
            total += angle;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidParam("no nonzero spectra to compare".into()));
    }
    Ok(total / count as f64)
}

pub const HOMOGENEITY_BINS: usize = 36;

/// Distribution of spectral angles between each pixel and its superpixel's
/// mean spectrum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HomogeneityReport {
    pub mean_deg: f64,
    pub median_deg: f64,
    /// Counts over `HOMOGENEITY_BINS` equal bins spanning [0, 180] degrees.
    pub histogram: Vec<usize>,
    pub bin_width_deg: f64,
    /// Pixels with all-zero spectra, excluded from the statistics.
    pub skipped_zero_pixels: usize,
}

pub fn homogeneity_analysis(cube: &HsiCube, spmap: &SuperpixelMap) -> Result<HomogeneityReport> {
    if spmap.width != cube.width || spmap.height != cube.height {
        return Err(Error::DimensionMismatch("cube vs superpixel map".into()));
    }
    let n = cube.width * cube.height;
    let bands = cube.bands;
    let q = spmap.num_labels;
    let mut mean_spec = vec![0.0f64; q * bands];
    let mut counts = vec![0usize; q];
    for i in 0..n {
        let l = spmap.labels[i] as usize;
        counts[l] += 1;
        for b in 0..bands {
            mean_spec[l * bands + b] += cube.data[b * n + i] as f64;
        }
    }
    for l in 0..q {
        if counts[l] > 0 {
            for b in 0..bands {
                mean_spec[l * bands + b] /= counts[l] as f64;
            }
        }
    }

    let mut angles = Vec::with_capacity(n);
    let mut skipped = 0usize;
    for i in 0..n {
        let l = spmap.labels[i] as usize;
        let mut dot = 0.0f64;
        let mut np = 0.0f64;
        let mut nm = 0.0f64;
        for b in 0..bands {
            let p = cube.data[b * n + i] as f64;
            let m = mean_spec[l * bands + b];
            dot += p * m;
            np += p * p;
            nm += m * m;
        }
        if np == 0.0 || nm == 0.0 {
            skipped += 1;
            continue;
        }
        let cos = (dot / (np.sqrt() * nm.sqrt())).clamp(-1.0, 1.0);
        angles.push(cos.acos().to_degrees());
    }
    if angles.is_empty() {
        return Err(Error::InvalidParam("no nonzero spectra".into()));
    }
    let mean = angles.iter().sum::<f64>() / angles.len() as f64;
    let mut sorted = angles.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let bin_width = 180.0 / HOMOGENEITY_BINS as f64;
    let mut histogram = vec![0usize; HOMOGENEITY_BINS];
    for a in &angles {
        let bin = ((a / bin_width) as usize).min(HOMOGENEITY_BINS - 1);
        histogram[bin] += 1;
    }
    Ok(HomogeneityReport {
        mean_deg: mean,
        median_deg: median,
        histogram,
        bin_width_deg: bin_width,
        skipped_zero_pixels: skipped,
    })
}

/// End-to-end evaluation summary. Infinite PSNR (exact reconstruction) is
/// carried as `None` so the JSON form stays lossless.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Per-band PSNR in dB; `None` marks an exact band.
    pub per_band_psnr_db: Vec<Option<f64>>,
    /// Mean across bands; `None` when any band is exact.
    pub mean_psnr_db: Option<f64>,
    pub mean_ssim: f64,
    pub mean_sam_deg: f64,
    pub uncovered_pixel_fraction: f64,
    pub timings_ms: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homogeneity: Option<HomogeneityReport>,
}

impl EvalReport {
    pub fn is_exact(&self) -> bool {
        self.mean_psnr_db.is_none()
    }
}

fn encode_db(v: f64) -> Option<f64> {
    if v.is_finite() {
        Some(v)
    } else {
        None
    }
}

/// Score a reconstruction against its reference cube.
pub fn evaluate(
    reference: &HsiCube,
    test: &HsiCube,
    uncovered_pixel_fraction: f64,
    timings_ms: BTreeMap<String, f64>,
) -> Result<EvalReport> {
    let (per_band, mean) = psnr_cube(test, reference)?;
    Ok(EvalReport {
        per_band_psnr_db: per_band.into_iter().map(encode_db).collect(),
        mean_psnr_db: encode_db(mean),
        mean_ssim: ssim_cube(test, reference)?,
        mean_sam_deg: sam_cube(test, reference)?,
        uncovered_pixel_fraction,
        timings_ms,
        homogeneity: None,
    })
}
