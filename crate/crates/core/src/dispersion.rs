//! Dispersive-arm model: per-band shift, blur, and sensitivity, plus the
//! sensor noise parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the prism smears a spectrum across the sensor.
///
/// Band `b` of an opening at `x` lands at `x + shifts[b]`, optionally blurred
/// by a horizontal Gaussian of width `blur_sigma[b]` (truncated at three
/// sigma) and scaled by the sensor sensitivity `response[b]`. Shifts are
/// non-decreasing and start at zero, so the streak spans `n()` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionModel {
    pub shifts: Vec<usize>,
    pub blur_sigma: Vec<f32>,
    pub response: Vec<f32>,
}

impl DispersionModel {
    pub fn new(shifts: Vec<usize>, blur_sigma: Vec<f32>, response: Vec<f32>) -> Result<Self> {
        let model = DispersionModel {
            shifts,
            blur_sigma,
            response,
        };
        model.validate()?;
        Ok(model)
    }

    /// Evenly spread shifts covering a streak of `n` pixels, unit response,
    /// no blur.
    pub fn linear(bands: usize, n: usize) -> Result<Self> {
        if bands == 0 || n == 0 {
            return Err(Error::InvalidParam("bands and n must be >= 1".into()));
        }
        if bands == 1 && n != 1 {
            return Err(Error::InvalidParam(
                "single-band model must have n = 1".into(),
            ));
        }
        let shifts = (0..bands)
            .map(|b| {
                if bands == 1 {
                    0
                } else {
                    ((b as f64) * (n - 1) as f64 / (bands - 1) as f64).round() as usize
                }
            })
            .collect();
        DispersionModel::new(shifts, vec![0.0; bands], vec![1.0; bands])
    }

    /// Set per-band blur widths from a quadratic in wavelength:
    /// `sigma = a*lambda^2 + b*lambda + c`, clamped at zero.
    pub fn with_blur_quadratic(mut self, coeffs: [f64; 3], wavelengths: &[f32]) -> Result<Self> {
        if wavelengths.len() != self.bands() {
            return Err(Error::DimensionMismatch(format!(
                "{} wavelengths for {} bands",
                wavelengths.len(),
                self.bands()
            )));
        }
        self.blur_sigma = wavelengths
            .iter()
            .map(|&w| {
                let w = w as f64;
                (coeffs[0] * w * w + coeffs[1] * w + coeffs[2]).max(0.0) as f32
            })
            .collect();
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bands = self.shifts.len();
        if bands == 0 {
            return Err(Error::InvalidParam("empty dispersion model".into()));
        }
        if self.blur_sigma.len() != bands || self.response.len() != bands {
            return Err(Error::DimensionMismatch(format!(
                "dispersion model fields disagree: {} shifts, {} blur widths, {} responses",
                bands,
                self.blur_sigma.len(),
                self.response.len()
            )));
        }
        if self.shifts.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidParam("shifts must be non-decreasing".into()));
        }
        if self.shifts[0] != 0 {
            return Err(Error::InvalidParam(
                "smallest shift must be zero so the streak starts at the opening".into(),
            ));
        }
        if self.blur_sigma.iter().any(|&s| !s.is_finite() || s < 0.0) {
            return Err(Error::InvalidParam("blur widths must be >= 0".into()));
        }
        if self.response.iter().any(|&c| !c.is_finite() || c < 0.0) {
            return Err(Error::InvalidParam("responses must be >= 0".into()));
        }
        Ok(())
    }

    pub fn bands(&self) -> usize {
        self.shifts.len()
    }

    /// Streak length in pixels: `max shift + 1`.
    pub fn n(&self) -> usize {
        self.shifts.last().copied().unwrap_or(0) + 1
    }

    /// Normalized blur taps for one band over offsets `-r..=r`.
    pub fn kernel(&self, band: usize) -> (isize, Vec<f32>) {
        let sigma = self.blur_sigma[band];
        if sigma <= 1e-6 {
            return (0, vec![1.0]);
        }
        let r = (3.0 * sigma).ceil() as isize;
        let mut taps: Vec<f32> = (-r..=r)
            .map(|o| (-((o * o) as f32) / (2.0 * sigma * sigma)).exp())
            .collect();
        let sum: f32 = taps.iter().sum();
        for t in taps.iter_mut() {
            *t /= sum;
        }
        (r, taps)
    }

    pub fn save(&self, path: &Path, wavelengths: Option<&[f32]>) -> Result<()> {
        let file = DispersionFile {
            shifts: self.shifts.clone(),
            blur_quadratic: None,
            blur_sigma: Some(self.blur_sigma.clone()),
            response: self.response.clone(),
            wavelengths: wavelengths.map(|w| w.to_vec()),
        };
        std::fs::write(path, serde_json::to_vec_pretty(&file)?)?;
        Ok(())
    }

    /// Load a model from JSON. `blur_sigma` takes precedence when present;
    /// otherwise `blur_quadratic` is evaluated over the file's wavelengths.
    pub fn load(path: &Path) -> Result<(Self, Option<Vec<f32>>)> {
        let bytes = std::fs::read(path)?;
        let file: DispersionFile = serde_json::from_slice(&bytes)?;
        let bands = file.shifts.len();
        let model = DispersionModel::new(
            file.shifts,
            vec![0.0; bands],
            file.response,
        )?;
        let model = if let Some(sigma) = file.blur_sigma {
            if sigma.len() != bands {
                return Err(Error::DimensionMismatch(
                    "blur_sigma length != shifts length".into(),
                ));
            }
            DispersionModel {
                blur_sigma: sigma,
                ..model
            }
        } else if let Some(q) = file.blur_quadratic {
            let wl = file.wavelengths.as_deref().ok_or_else(|| {
                Error::Config("blur_quadratic requires wavelengths in the dispersion file".into())
            })?;
            model.with_blur_quadratic(q, wl)?
        } else {
            model
        };
        model.validate()?;
        Ok((model, file.wavelengths))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DispersionFile {
    shifts: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    blur_quadratic: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    blur_sigma: Option<Vec<f32>>,
    response: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wavelengths: Option<Vec<f32>>,
}

/// Fit `sigma = a*lambda^2 + b*lambda + c` through three (wavelength, width)
/// observations.
pub fn fit_blur_quadratic(samples: [(f64, f64); 3]) -> [f64; 3] {
    // Solve the 3x3 Vandermonde system by Cramer's rule.
    let m = [
        [samples[0].0 * samples[0].0, samples[0].0, 1.0],
        [samples[1].0 * samples[1].0, samples[1].0, 1.0],
        [samples[2].0 * samples[2].0, samples[2].0, 1.0],
    ];
    let rhs = [samples[0].1, samples[1].1, samples[2].1];
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    let mut out = [0.0; 3];
    for k in 0..3 {
        let mut mk = m;
        for r in 0..3 {
            mk[r][k] = rhs[r];
        }
        out[k] = det(&mk) / d;
    }
    out
}

/// Photon and readout noise settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// Expected photoelectrons at the brightest noiseless pixel.
    pub photon_level: f64,
    /// Readout noise standard deviation in electrons.
    pub read_std: f64,
    pub seed: u64,
}

impl NoiseParams {
    pub fn new(photon_level: f64, seed: u64) -> Self {
        NoiseParams {
            photon_level,
            read_std: 5.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.photon_level < 0.0 || self.read_std < 0.0 {
            return Err(Error::InvalidParam(
                "photon level and read noise must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_model_spans_streak() {
        let m = DispersionModel::linear(68, 68).unwrap();
        assert_eq!(m.n(), 68);
        assert_eq!(m.shifts[0], 0);
        assert_eq!(*m.shifts.last().unwrap(), 67);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(DispersionModel::new(vec![1, 2], vec![0.0; 2], vec![1.0; 2]).is_err());
        assert!(DispersionModel::new(vec![0, 2, 1], vec![0.0; 3], vec![1.0; 3]).is_err());
        assert!(DispersionModel::new(vec![0, 1], vec![0.0; 1], vec![1.0; 2]).is_err());
        assert!(DispersionModel::new(vec![0, 1], vec![-1.0, 0.0], vec![1.0; 2]).is_err());
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let mut m = DispersionModel::linear(4, 16).unwrap();
        m.blur_sigma = vec![0.0, 1.0, 2.5, 4.0];
        for b in 0..4 {
            let (r, taps) = m.kernel(b);
            assert_eq!(taps.len(), (2 * r + 1) as usize);
            let sum: f32 = taps.iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
            for i in 0..taps.len() / 2 {
                assert!((taps[i] - taps[taps.len() - 1 - i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn quadratic_fit_reproduces_observed_widths() {
        // Wide blur at the band edges, sharp in the middle.
        let coeffs = fit_blur_quadratic([(405.0, 4.0), (520.0, 1.0), (635.0, 4.0)]);
        for (w, want) in [(405.0, 4.0), (520.0, 1.0), (635.0, 4.0)] {
            let got = coeffs[0] * w * w + coeffs[1] * w + coeffs[2];
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("disp.json");
        let wl: Vec<f32> = (0..4).map(|i| 400.0 + 100.0 * i as f32).collect();
        let mut m = DispersionModel::linear(4, 10).unwrap();
        m.blur_sigma = vec![0.5, 0.25, 0.25, 0.5];
        m.save(&path, Some(&wl)).unwrap();
        let (back, wl_back) = DispersionModel::load(&path).unwrap();
        assert_eq!(m, back);
        assert_eq!(wl_back.as_deref(), Some(&wl[..]));
    }
}
