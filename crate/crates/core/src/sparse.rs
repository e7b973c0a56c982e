//! Sparse per-band sample planes scattered from demultiplexed spectra.

use crate::error::{Error, Result};
use crate::sensor::SampledSpectrum;

/// Per-band planes that are nonzero only at sampled points, plus the masks
/// recording where each band actually has a measurement (trailing bands of
/// edge points may be missing).
#[derive(Debug, Clone)]
pub struct SparseSpectralImage {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    /// Band-sequential planes, zero away from samples.
    pub planes: Vec<f32>,
    /// Band-sequential presence flags; support of every plane is inside it.
    pub present: Vec<bool>,
}

impl SparseSpectralImage {
    pub fn from_samples(
        width: usize,
        height: usize,
        bands: usize,
        samples: &[SampledSpectrum],
    ) -> Result<Self> {
        let n = width * height;
        let mut planes = vec![0.0f32; n * bands];
        let mut present = vec![false; n * bands];
        for s in samples {
            let (x, y) = s.point;
            if x >= width || y >= height {
                return Err(Error::InvalidParam(format!(
                    "sample point ({x},{y}) out of bounds"
                )));
            }
            if s.values.len() != bands || s.present.len() != bands {
                return Err(Error::DimensionMismatch(format!(
                    "sample at ({x},{y}) has {} bands, expected {bands}",
                    s.values.len()
                )));
            }
            for b in 0..bands {
                if s.present[b] {
                    planes[b * n + y * width + x] = s.values[b];
                    present[b * n + y * width + x] = true;
                }
            }
        }
        Ok(SparseSpectralImage {
            width,
            height,
            bands,
            planes,
            present,
        })
    }

    pub fn band_plane(&self, b: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.planes[b * n..(b + 1) * n]
    }

    /// 0/1 mask of where band `b` has measurements.
    pub fn band_mask(&self, b: usize) -> Vec<f32> {
        let n = self.width * self.height;
        self.present[b * n..(b + 1) * n]
            .iter()
            .map(|&p| if p { 1.0 } else { 0.0 })
            .collect()
    }
}
