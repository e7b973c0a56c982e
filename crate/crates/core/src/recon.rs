//! Hyperspectral reconstruction from the gray guide and sampled spectra.
//!
//! Three methods share one entry point: rank-1 propagation of each region's
//! sampled spectra, per-band masked guided filtering, and the filter-network
//! head. Pixels the filtering paths cannot cover fall back to the rank-1
//! estimate of their superpixel.

use rayon::prelude::*;

use crate::cube::{GrayImage, HsiCube};
use crate::dispersion::DispersionModel;
use crate::error::{Error, Result};
use crate::filternet::{fuse_network, FilterNetWeights};
use crate::guided::{guided_filter_band, Kernel};
use crate::mask::SamplingMask;
use crate::sensor::{extract_spectra, SampledSpectrum, SensorImage};
use crate::sparse::SparseSpectralImage;
use crate::superpixel::SuperpixelMap;

/// Reconstruction method selection.
#[derive(Debug, Clone)]
pub enum Method {
    Rank1,
    Guided { kernel: Kernel, epsilon: f32 },
    Network { weights: FilterNetWeights },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Rank1 => "rank1",
            Method::Guided { .. } => "guided",
            Method::Network { .. } => "network",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReconStats {
    /// Regions whose sampled gray values summed to zero in some band.
    pub zero_gray_labels: usize,
    /// Regions without any sample (only tolerated in lenient mode).
    pub labels_without_samples: usize,
    /// Voxels no filtering kernel covered.
    pub uncovered_voxels: usize,
    /// Voxels filled from the rank-1 fallback.
    pub fallback_voxels: usize,
}

impl ReconStats {
    pub fn uncovered_fraction(&self, width: usize, height: usize, bands: usize) -> f64 {
        self.uncovered_voxels as f64 / (width * height * bands) as f64
    }
}

/// Rank-1 propagation: an unsampled pixel in region `l` takes the region's
/// summed sampled spectrum scaled by its gray ratio,
/// `H(u, b) = gray(u) / sum_p gray(p) * sum_p S_p(b)`, while sampled pixels
/// keep their measurements. Bands missing at some samples restrict both sums
/// to the samples that carry them. Runtime is linear in the pixel count.
pub fn rank1(
    gray: &GrayImage,
    spmap: &SuperpixelMap,
    samples: &[SampledSpectrum],
    wavelengths: &[f32],
) -> Result<HsiCube> {
    rank1_full(gray, spmap, samples, wavelengths, false).map(|(cube, _)| cube)
}

pub fn rank1_full(
    gray: &GrayImage,
    spmap: &SuperpixelMap,
    samples: &[SampledSpectrum],
    wavelengths: &[f32],
    lenient: bool,
) -> Result<(HsiCube, ReconStats)> {
    let (w, h) = (gray.width, gray.height);
    let bands = wavelengths.len();
    if spmap.width != w || spmap.height != h {
        return Err(Error::DimensionMismatch("gray vs superpixel map".into()));
    }
    let q = spmap.num_labels;
    let mut stats = ReconStats::default();

    // Per-region, per-band sums over the samples that carry the band.
    let mut spec_sum = vec![0.0f64; q * bands];
    let mut gray_sum = vec![0.0f64; q * bands];
    let mut sample_count = vec![0usize; q];
    let mut sample_at: Vec<Option<u32>> = vec![None; w * h];
    for (si, s) in samples.iter().enumerate() {
        let (x, y) = s.point;
        if x >= w || y >= h {
            return Err(Error::InvalidParam(format!(
                "sample point ({x},{y}) out of bounds"
            )));
        }
        if s.values.len() != bands {
            return Err(Error::DimensionMismatch(format!(
                "sample at ({x},{y}) has {} bands, expected {bands}",
                s.values.len()
            )));
        }
        let l = spmap.labels[y * w + x] as usize;
        sample_count[l] += 1;
        sample_at[y * w + x] = Some(si as u32);
        let g = gray.at(x, y) as f64;
        for b in 0..bands {
            if s.present[b] {
                spec_sum[l * bands + b] += s.values[b] as f64;
                gray_sum[l * bands + b] += g;
            }
        }
    }

    for l in 0..q {
        if sample_count[l] == 0 {
            if lenient {
                stats.labels_without_samples += 1;
            } else {
                return Err(Error::EmptyLabel(l as u32));
            }
        }
    }
    // A region is flagged when any band has sampled gray summing to zero;
    // those voxels emit zeros.
    for l in 0..q {
        if sample_count[l] > 0
            && (0..bands).any(|b| gray_sum[l * bands + b] == 0.0)
        {
            stats.zero_gray_labels += 1;
        }
    }

    let mut cube = HsiCube::new(w, h, wavelengths.to_vec())?;
    let n = w * h;
    for i in 0..n {
        let l = spmap.labels[i] as usize;
        let g = gray.data[i] as f64;
        let si = sample_at[i];
        for b in 0..bands {
            let idx = b * n + i;
            if let Some(si) = si {
                let s = &samples[si as usize];
                if s.present[b] {
                    cube.data[idx] = s.values[b];
                    continue;
                }
            }
            let denom = gray_sum[l * bands + b];
            if denom > 0.0 {
                cube.data[idx] = ((g / denom) * spec_sum[l * bands + b]).max(0.0) as f32;
            }
        }
    }
    Ok((cube, stats))
}

/// Reconstruct one frame: demultiplex the sensor image, then fuse with the
/// gray guide using the chosen method. The guide, superpixels, and sensor
/// data must all come from the same time instant.
pub fn reconstruct_frame(
    gray: &GrayImage,
    sensor: &SensorImage,
    mask: &SamplingMask,
    spmap: &SuperpixelMap,
    disp: &DispersionModel,
    wavelengths: &[f32],
    method: &Method,
) -> Result<(HsiCube, ReconStats)> {
    reconstruct_frame_inner(gray, sensor, mask, spmap, disp, wavelengths, method, false)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn reconstruct_frame_inner(
    gray: &GrayImage,
    sensor: &SensorImage,
    mask: &SamplingMask,
    spmap: &SuperpixelMap,
    disp: &DispersionModel,
    wavelengths: &[f32],
    method: &Method,
    lenient: bool,
) -> Result<(HsiCube, ReconStats)> {
    if wavelengths.len() != disp.bands() {
        return Err(Error::DimensionMismatch(
            "wavelength count vs dispersion bands".into(),
        ));
    }
    let samples = extract_spectra(sensor, mask, disp)?;
    match method {
        Method::Rank1 => rank1_full(gray, spmap, &samples, wavelengths, lenient),
        Method::Guided { kernel, epsilon } => {
            let sparse =
                SparseSpectralImage::from_samples(gray.width, gray.height, disp.bands(), &samples)?;
            let (w, h) = (gray.width, gray.height);
            let n = w * h;
            let bands = sparse.bands;
            let results: Vec<(Vec<f32>, Vec<usize>)> = (0..bands)
                .into_par_iter()
                .map(|b| {
                    let gb = guided_filter_band(
                        sparse.band_plane(b),
                        &sparse.band_mask(b),
                        &gray.data,
                        w,
                        h,
                        kernel,
                        *epsilon,
                    )?;
                    let holes: Vec<usize> = (0..n).filter(|&i| gb.uncovered[i]).collect();
                    Ok((gb.values, holes))
                })
                .collect::<Result<_>>()?;
            let mut cube = HsiCube::new(w, h, wavelengths.to_vec())?;
            let mut stats = ReconStats::default();
            let mut holes: Vec<(usize, usize)> = Vec::new();
            for (b, (plane, band_holes)) in results.into_iter().enumerate() {
                let dst = cube.band_plane_mut(b);
                for (d, v) in dst.iter_mut().zip(plane) {
                    *d = v.max(0.0);
                }
                holes.extend(band_holes.into_iter().map(|i| (b, i)));
            }
            fill_from_rank1(
                &mut cube, &mut stats, holes, gray, spmap, &samples, wavelengths,
            )?;
            Ok((cube, stats))
        }
        Method::Network { weights } => {
            let sparse =
                SparseSpectralImage::from_samples(gray.width, gray.height, disp.bands(), &samples)?;
            let (mut cube, report) = fuse_network(&sparse, gray, weights, wavelengths)?;
            let mut stats = ReconStats::default();
            fill_from_rank1(
                &mut cube,
                &mut stats,
                report.uncovered,
                gray,
                spmap,
                &samples,
                wavelengths,
            )?;
            Ok((cube, stats))
        }
    }
}

/// Patch uncovered voxels with the rank-1 estimate of their superpixel.
fn fill_from_rank1(
    cube: &mut HsiCube,
    stats: &mut ReconStats,
    holes: Vec<(usize, usize)>,
    gray: &GrayImage,
    spmap: &SuperpixelMap,
    samples: &[SampledSpectrum],
    wavelengths: &[f32],
) -> Result<()> {
    stats.uncovered_voxels = holes.len();
    if holes.is_empty() {
        return Ok(());
    }
    let (fallback, fb_stats) = rank1_full(gray, spmap, samples, wavelengths, true)?;
    stats.zero_gray_labels = fb_stats.zero_gray_labels;
    stats.labels_without_samples = fb_stats.labels_without_samples;
    let n = cube.width * cube.height;
    for (b, i) in holes {
        cube.data[b * n + i] = fallback.data[b * n + i];
        stats.fallback_voxels += 1;
    }
    Ok(())
}
