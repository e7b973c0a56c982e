//! Core image types: hyperspectral cubes, guide images, and spectral responses.

use crate::error::{Error, Result};

/// Hyperspectral radiance volume, band-sequential storage.
///
/// `data[b * width * height + y * width + x]` holds the radiance of pixel
/// `(x, y)` in band `b`. Wavelengths are strictly increasing and radiance is
/// finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    /// Band-center wavelengths in nanometers, one per band.
    pub wavelengths: Vec<f32>,
    pub data: Vec<f32>,
}

impl HsiCube {
    /// Zero-filled cube.
    pub fn new(width: usize, height: usize, wavelengths: Vec<f32>) -> Result<Self> {
        let bands = wavelengths.len();
        let cube = HsiCube {
            width,
            height,
            bands,
            wavelengths,
            data: vec![0.0; width * height * bands],
        };
        cube.validate_header()?;
        Ok(cube)
    }

    pub fn from_data(
        width: usize,
        height: usize,
        wavelengths: Vec<f32>,
        data: Vec<f32>,
    ) -> Result<Self> {
        let bands = wavelengths.len();
        let cube = HsiCube {
            width,
            height,
            bands,
            wavelengths,
            data,
        };
        cube.validate()?;
        Ok(cube)
    }

    fn validate_header(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCube("zero spatial extent".into()));
        }
        if self.bands == 0 {
            return Err(Error::InvalidCube("zero bands".into()));
        }
        if self.wavelengths.len() != self.bands {
            return Err(Error::InvalidCube(format!(
                "wavelength count {} != bands {}",
                self.wavelengths.len(),
                self.bands
            )));
        }
        if self.wavelengths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidCube(
                "wavelengths not strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Check every invariant, including the payload.
    pub fn validate(&self) -> Result<()> {
        self.validate_header()?;
        let expect = self.width * self.height * self.bands;
        if self.data.len() != expect {
            return Err(Error::InvalidCube(format!(
                "data length {} != width*height*bands = {}",
                self.data.len(),
                expect
            )));
        }
        if self.data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidCube(
                "radiance values must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, b: usize) -> usize {
        (b * self.height + y) * self.width + x
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize, b: usize) -> f32 {
        self.data[self.idx(x, y, b)]
    }

    /// One spatial plane of the cube.
    pub fn band_plane(&self, b: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_plane_mut(&mut self, b: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn spectrum_at(&self, x: usize, y: usize) -> Vec<f32> {
        (0..self.bands).map(|b| self.value(x, y, b)).collect()
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(0.0f32, f32::max)
    }
}

/// RGB guide image with interleaved channels, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GuideImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved rgb, length `3 * width * height`.
    pub data: Vec<f32>,
}

impl GuideImage {
    pub fn new(width: usize, height: usize) -> Self {
        GuideImage {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        self.pixel_at(y * self.width + x)
    }

    #[inline]
    pub fn pixel_at(&self, idx: usize) -> [f32; 3] {
        let i = 3 * idx;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }
}

/// Single-channel image, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Per-band sensitivity of the guide camera's R, G, B, and gray channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResponse {
    pub red: Vec<f32>,
    pub green: Vec<f32>,
    pub blue: Vec<f32>,
    pub gray: Vec<f32>,
}

impl SpectralResponse {
    /// Smooth default response: three half-overlapping raised-cosine lobes
    /// spanning the wavelength range in thirds, gray = channel average.
    ///
    /// The lobes form a constant-overlap-add partition in the interior of the
    /// range, so flat spectra render to flat guides. If the sampling grid
    /// misses a lobe entirely (very few bands), that channel falls back to a
    /// single unit weight at the band nearest its lobe center.
    pub fn default_for(wavelengths: &[f32]) -> Self {
        let bands = wavelengths.len();
        let lo = wavelengths.first().copied().unwrap_or(0.0);
        let hi = wavelengths.last().copied().unwrap_or(0.0);
        let span = hi - lo;
        if span <= 0.0 {
            let ones = vec![1.0; bands];
            return SpectralResponse {
                red: ones.clone(),
                green: ones.clone(),
                blue: ones.clone(),
                gray: ones,
            };
        }
        let third = span / 3.0;
        let centers = [lo + 2.5 * third, lo + 1.5 * third, lo + 0.5 * third];
        let mut channels: Vec<Vec<f32>> = Vec::with_capacity(3);
        for &c in &centers {
            let mut w: Vec<f32> = wavelengths
                .iter()
                .map(|&lam| {
                    let d = (lam - c).abs();
                    if d <= third {
                        0.5 * (1.0 + (std::f32::consts::PI * d / third).cos())
                    } else {
                        0.0
                    }
                })
                .collect();
            if w.iter().all(|&v| v == 0.0) {
                let nearest = wavelengths
                    .iter()
                    .enumerate()
                    .min_by(|a, b| {
                        (a.1 - c).abs().partial_cmp(&(b.1 - c).abs()).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                w[nearest] = 1.0;
            }
            channels.push(w);
        }
        let blue = channels.pop().unwrap();
        let green = channels.pop().unwrap();
        let red = channels.pop().unwrap();
        let gray = (0..bands)
            .map(|b| (red[b] + green[b] + blue[b]) / 3.0)
            .collect();
        SpectralResponse {
            red,
            green,
            blue,
            gray,
        }
    }

    /// Explicit channels; gray defaults to the channel average when `None`.
    pub fn from_channels(
        red: Vec<f32>,
        green: Vec<f32>,
        blue: Vec<f32>,
        gray: Option<Vec<f32>>,
    ) -> Result<Self> {
        let bands = red.len();
        let gray = gray.unwrap_or_else(|| {
            (0..bands)
                .map(|b| (red[b] + green[b] + blue[b]) / 3.0)
                .collect()
        });
        let resp = SpectralResponse {
            red,
            green,
            blue,
            gray,
        };
        resp.validate(bands)?;
        Ok(resp)
    }

    pub fn validate(&self, bands: usize) -> Result<()> {
        for (name, ch) in [
            ("red", &self.red),
            ("green", &self.green),
            ("blue", &self.blue),
            ("gray", &self.gray),
        ] {
            if ch.len() != bands {
                return Err(Error::DimensionMismatch(format!(
                    "response channel {name} has {} weights, cube has {bands} bands",
                    ch.len()
                )));
            }
            if ch.iter().any(|&v| !v.is_finite() || v < 0.0) {
                return Err(Error::InvalidParam(format!(
                    "response channel {name} has negative or non-finite weights"
                )));
            }
            if ch.iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidParam(format!(
                    "response channel {name} is identically zero"
                )));
            }
        }
        Ok(())
    }
}

/// Render the RGB guide and gray image a guide camera would see.
///
/// Channel value at (x, y) is the dot product of the pixel spectrum with the
/// channel response, then all four planes are divided by one global maximum
/// taken over every channel so relative channel intensity is preserved.
pub fn render_guide(cube: &HsiCube, resp: &SpectralResponse) -> Result<(GuideImage, GrayImage)> {
    resp.validate(cube.bands)?;
    let n = cube.width * cube.height;
    let mut r = vec![0.0f32; n];
    let mut g = vec![0.0f32; n];
    let mut b = vec![0.0f32; n];
    let mut gray = vec![0.0f32; n];

    for band in 0..cube.bands {
        let plane = cube.band_plane(band);
        let (wr, wg, wb, wy) = (
            resp.red[band],
            resp.green[band],
            resp.blue[band],
            resp.gray[band],
        );
        for i in 0..n {
            let v = plane[i];
            r[i] += v * wr;
            g[i] += v * wg;
            b[i] += v * wb;
            gray[i] += v * wy;
        }
    }

    let mut peak = 0.0f32;
    for i in 0..n {
        peak = peak.max(r[i]).max(g[i]).max(b[i]).max(gray[i]);
    }
    let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };

    let mut guide = GuideImage::new(cube.width, cube.height);
    for i in 0..n {
        guide.data[3 * i] = r[i] * scale;
        guide.data[3 * i + 1] = g[i] * scale;
        guide.data[3 * i + 2] = b[i] * scale;
    }
    let gray_img = GrayImage {
        width: cube.width,
        height: cube.height,
        data: gray.iter().map(|v| v * scale).collect(),
    };
    Ok((guide, gray_img))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_response(bands: usize) -> SpectralResponse {
        // Three disjoint box channels over the band index range.
        let mut red = vec![0.0; bands];
        let mut green = vec![0.0; bands];
        let mut blue = vec![0.0; bands];
        for b in 0..bands {
            if b < bands / 3 {
                blue[b] = 1.0;
            } else if b < 2 * bands / 3 {
                green[b] = 1.0;
            } else {
                red[b] = 1.0;
            }
        }
        SpectralResponse::from_channels(red, green, blue, None).unwrap()
    }

    #[test]
    fn constant_cube_renders_constant_guide() {
        let wl: Vec<f32> = (0..6).map(|i| 400.0 + 60.0 * i as f32).collect();
        let cube =
            HsiCube::from_data(4, 3, wl, vec![1.0; 4 * 3 * 6]).unwrap();
        let resp = box_response(6);
        let (guide, _) = render_guide(&cube, &resp).unwrap();
        // Every channel integrates the same number of unit bands, so after
        // normalization the guide is constant 1.
        for i in 0..4 * 3 {
            let px = guide.pixel_at(i);
            assert!((px[0] - 1.0).abs() < 1e-6);
            assert!((px[1] - 1.0).abs() < 1e-6);
            assert!((px[2] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn energy_in_red_support_leaves_other_channels_zero() {
        let wl: Vec<f32> = (0..6).map(|i| 400.0 + 60.0 * i as f32).collect();
        let mut cube = HsiCube::new(4, 3, wl).unwrap();
        // Band 5 lies fully inside the red box channel.
        cube.band_plane_mut(5).fill(2.0);
        let resp = box_response(6);
        let (guide, _) = render_guide(&cube, &resp).unwrap();
        for i in 0..4 * 3 {
            let px = guide.pixel_at(i);
            assert_eq!(px[1], 0.0);
            assert_eq!(px[2], 0.0);
            assert!(px[0] > 0.0);
        }
    }

    #[test]
    fn random_cube_matches_dot_product_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (w, h, bands) = (8, 8, 5);
        let wl: Vec<f32> = (0..bands).map(|i| 400.0 + 10.0 * i as f32).collect();
        let data: Vec<f32> = (0..w * h * bands).map(|_| rng.gen_range(0.0..1.0)).collect();
        let cube = HsiCube::from_data(w, h, wl.clone(), data).unwrap();
        let resp = SpectralResponse::default_for(&wl);
        let (guide, gray) = render_guide(&cube, &resp).unwrap();

        // Direct per-pixel summation oracle, including the normalization.
        let mut raw = vec![[0.0f64; 4]; w * h];
        for y in 0..h {
            for x in 0..w {
                for b in 0..bands {
                    let v = cube.value(x, y, b) as f64;
                    raw[y * w + x][0] += v * resp.red[b] as f64;
                    raw[y * w + x][1] += v * resp.green[b] as f64;
                    raw[y * w + x][2] += v * resp.blue[b] as f64;
                    raw[y * w + x][3] += v * resp.gray[b] as f64;
                }
            }
        }
        let peak = raw
            .iter()
            .flat_map(|q| q.iter().copied())
            .fold(0.0f64, f64::max);
        for i in 0..w * h {
            let px = guide.pixel_at(i);
            for c in 0..3 {
                assert!(
                    (px[c] as f64 - raw[i][c] / peak).abs() < 1e-6,
                    "channel {c} at {i}"
                );
            }
            assert!((gray.data[i] as f64 - raw[i][3] / peak).abs() < 1e-6);
        }
    }

    #[test]
    fn render_is_linear_before_normalization() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let wl: Vec<f32> = (0..4).map(|i| 450.0 + 25.0 * i as f32).collect();
        let d1: Vec<f32> = (0..2 * 2 * 4).map(|_| rng.gen_range(0.0..1.0)).collect();
        let d2: Vec<f32> = (0..2 * 2 * 4).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (a, b) = (0.7f32, 1.9f32);
        let mix: Vec<f32> = d1
            .iter()
            .zip(&d2)
            .map(|(x, y)| a * x + b * y)
            .collect();
        let resp = SpectralResponse::default_for(&wl);

        // Compare unnormalized sums by undoing the normalization peak.
        let raw = |data: Vec<f32>| {
            let cube = HsiCube::from_data(2, 2, wl.clone(), data).unwrap();
            let mut sums = vec![0.0f32; 4];
            for b in 0..4 {
                let plane = cube.band_plane(b);
                for i in 0..4 {
                    sums[i] += plane[i] * resp.gray[b];
                }
            }
            sums
        };
        let s1 = raw(d1);
        let s2 = raw(d2);
        let sm = raw(mix);
        for i in 0..4 {
            assert!((sm[i] - (a * s1[i] + b * s2[i])).abs() < 1e-4);
        }
    }

    #[test]
    fn gray_is_channel_mean_with_default_response() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let wl: Vec<f32> = (0..8).map(|i| 400.0 + 40.0 * i as f32).collect();
        let data: Vec<f32> = (0..6 * 5 * 8).map(|_| rng.gen_range(0.0..2.0)).collect();
        let cube = HsiCube::from_data(6, 5, wl.clone(), data).unwrap();
        let resp = SpectralResponse::default_for(&wl);
        let (guide, gray) = render_guide(&cube, &resp).unwrap();
        for i in 0..6 * 5 {
            let px = guide.pixel_at(i);
            let mean = (px[0] + px[1] + px[2]) / 3.0;
            assert!((gray.data[i] - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_cubes_rejected() {
        assert!(HsiCube::new(4, 4, vec![]).is_err());
        assert!(HsiCube::new(4, 4, vec![500.0, 500.0]).is_err());
        assert!(HsiCube::from_data(2, 2, vec![400.0], vec![1.0; 3]).is_err());
        assert!(HsiCube::from_data(2, 2, vec![400.0], vec![-1.0; 4]).is_err());
        assert!(HsiCube::from_data(2, 2, vec![400.0], vec![f32::NAN; 4]).is_err());
    }
}
