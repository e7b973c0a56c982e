//! Background-offset estimation and removal.
//!
//! A mask with finite contrast leaks `eps` of the scene everywhere, adding a
//! smooth background under the spectral streaks. Streak pixels are predicted
//! from the mask and dispersion model, the remaining pixels anchor a per-row
//! natural cubic spline across the gaps, and a 5-tap vertical box smooth
//! yields the offset estimate. `clean = img - offset` and the returned pair
//! always recomposes to the input.

use crate::dispersion::DispersionModel;
use crate::error::{Error, Result};
use crate::mask::SamplingMask;
use crate::sensor::SensorImage;

/// Natural cubic spline with linear extrapolation outside the knot range.
#[derive(Debug)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots (natural: zero at both ends).
    m: Vec<f64>,
}

impl CubicSpline {
    /// Fit through `(xs[i], ys[i])`; xs must be strictly increasing.
    pub fn fit(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() || xs.is_empty() {
            return Err(Error::InvalidParam("spline needs matching knots".into()));
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParam(
                "spline knots must be strictly increasing".into(),
            ));
        }
        let n = xs.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior second-derivative system.
            let k = n - 2;
            let mut diag = vec![0.0f64; k];
            let mut upper = vec![0.0f64; k];
            let mut rhs = vec![0.0f64; k];
            for i in 0..k {
                let h0 = xs[i + 1] - xs[i];
                let h1 = xs[i + 2] - xs[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h1 - (ys[i + 1] - ys[i]) / h0);
            }
            for i in 1..k {
                let h0 = xs[i + 1] - xs[i]; // lower coefficient of row i
                let f = h0 / diag[i - 1];
                diag[i] -= f * upper[i - 1];
                rhs[i] -= f * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(CubicSpline {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if n == 1 {
            return self.ys[0];
        }
        let (x0, xn) = (self.xs[0], self.xs[n - 1]);
        if x <= x0 {
            let h = self.xs[1] - x0;
            let slope = (self.ys[1] - self.ys[0]) / h - h * self.m[1] / 6.0;
            return self.ys[0] + slope * (x - x0);
        }
        if x >= xn {
            let h = xn - self.xs[n - 2];
            let slope = (self.ys[n - 1] - self.ys[n - 2]) / h + h * self.m[n - 2] / 6.0;
            return self.ys[n - 1] + slope * (x - xn);
        }
        let i = match self
            .xs
            .binary_search_by(|v| v.partial_cmp(&x).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let i = i.min(n - 2);
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// Columns covered by any streak (including blur tails) in each row.
fn streak_bitmap(mask: &SamplingMask, disp: &DispersionModel) -> Vec<bool> {
    let (w, h) = (mask.width, mask.height);
    let r_max = (0..disp.bands())
        .map(|b| disp.kernel(b).0)
        .max()
        .unwrap_or(0);
    let mut covered = vec![false; w * h];
    for &(x, y) in &mask.points {
        let lo = (x as isize - r_max).max(0) as usize;
        let hi = ((x + disp.n() - 1) as isize + r_max).min(w as isize - 1) as usize;
        for c in covered[y * w + lo..=y * w + hi].iter_mut() {
            *c = true;
        }
    }
    let _ = h;
    covered
}

/// Split a frame into the streak signal and the smooth leakage background.
///
/// Returns `(clean, offset)` with `clean + offset == img`. Rows entirely
/// covered by streaks borrow the interpolation of the nearest row that has
/// free pixels.
pub fn remove_offset(
    img: &SensorImage,
    mask: &SamplingMask,
    disp: &DispersionModel,
) -> Result<(SensorImage, SensorImage)> {
    if img.width != mask.width || img.height != mask.height {
        return Err(Error::DimensionMismatch(format!(
            "sensor {}x{} vs mask {}x{}",
            img.width, img.height, mask.width, mask.height
        )));
    }
    disp.validate()?;
    let (w, h) = (img.width, img.height);
    let covered = streak_bitmap(mask, disp);

    // Per-row spline across the streak gaps.
    let mut interpolated = vec![f64::NAN; w * h];
    let mut rows_with_data = Vec::new();
    for y in 0..h {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for x in 0..w {
            if !covered[y * w + x] {
                xs.push(x as f64);
                ys.push(img.values[y * w + x] as f64);
            }
        }
        if xs.is_empty() {
            continue;
        }
        rows_with_data.push(y);
        let spline = CubicSpline::fit(&xs, &ys)?;
        for x in 0..w {
            interpolated[y * w + x] = spline.eval(x as f64);
        }
    }
    if rows_with_data.is_empty() {
        return Err(Error::InvalidParam(
            "every row is fully covered by streaks".into(),
        ));
    }
    // Fully covered rows copy the nearest interpolated row (ties upward).
    for y in 0..h {
        if !interpolated[y * w].is_nan() {
            continue;
        }
        let src = *rows_with_data
            .iter()
            .min_by_key(|&&r| (r.abs_diff(y), r))
            .unwrap();
        let (dst_row, src_row) = (y * w, src * w);
        for x in 0..w {
            interpolated[dst_row + x] = interpolated[src_row + x];
        }
    }

    // Vertical 5-tap box smoothing with truncated, renormalized windows.
    let mut offset = SensorImage::new(w, h);
    for y in 0..h {
        let lo = y.saturating_sub(2);
        let hi = (y + 2).min(h - 1);
        let count = (hi - lo + 1) as f64;
        for x in 0..w {
            let mut acc = 0.0;
            for yy in lo..=hi {
                acc += interpolated[yy * w + x];
            }
            offset.values[y * w + x] = (acc / count) as f32;
        }
    }

    let mut clean = SensorImage::new(w, h);
    for i in 0..w * h {
        clean.values[i] = img.values[i] - offset.values[i];
        // Recompose exactly: the returned offset is whatever remains.
        offset.values[i] = img.values[i] - clean.values[i];
    }
    Ok((clean, offset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::HsiCube;
    use crate::sensor::{capture_noiseless, extract_spectra};
    use rand::{Rng, SeedableRng};

    #[test]
    fn spline_reproduces_knots_and_lines() {
        let xs: Vec<f64> = vec![0.0, 1.0, 3.0, 7.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let s = CubicSpline::fit(&xs, &ys).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((s.eval(*x) - y).abs() < 1e-12);
        }
        // Natural splines are exact on affine data, including extrapolation.
        for x in [-2.0, 0.5, 2.0, 5.5, 9.5] {
            assert!((s.eval(x) - (2.0 * x + 1.0)).abs() < 1e-9, "x = {x}");
        }
    }

    #[test]
    fn spline_interpolates_smooth_data_closely() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let f = |x: f64| (0.3 * x).sin() + 0.1 * x;
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let s = CubicSpline::fit(&xs, &ys).unwrap();
        for i in 0..19 {
            let x = i as f64 + 0.5;
            assert!((s.eval(x) - f(x)).abs() < 0.01, "x = {x}");
        }
    }

    fn smooth_cube(w: usize, h: usize, bands: usize) -> HsiCube {
        let wl: Vec<f32> = (0..bands).map(|i| 400.0 + 20.0 * i as f32).collect();
        let mut cube = HsiCube::new(w, h, wl).unwrap();
        for b in 0..bands {
            for y in 0..h {
                for x in 0..w {
                    let v = 0.4
                        + 0.3 * ((x as f32) / w as f32)
                        + 0.2 * ((y as f32) / h as f32)
                        + 0.1 * ((b as f32) / bands as f32);
                    cube.data[cube.idx(x, y, b)] = v;
                }
            }
        }
        cube
    }

    fn spaced_mask(w: usize, h: usize, n: usize) -> SamplingMask {
        let mut pts = Vec::new();
        let mut y = 1;
        while y < h {
            let mut x = 2;
            while x + n <= w {
                pts.push((x, y));
                x += n + 3;
            }
            y += 2;
        }
        SamplingMask::from_points(w, h, &pts).unwrap()
    }

    #[test]
    fn zero_leakage_estimates_zero_offset() {
        let cube = smooth_cube(48, 24, 4);
        let disp = DispersionModel::linear(4, 6).unwrap();
        let mask = spaced_mask(48, 24, 6);
        let img = capture_noiseless(&cube, &mask, &disp, 0.0).unwrap();
        let (clean, offset) = remove_offset(&img, &mask, &disp).unwrap();
        let max_off = offset.values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(max_off < 1e-6, "offset peak {max_off}");
        for i in 0..img.values.len() {
            assert_eq!(clean.values[i] + offset.values[i], img.values[i]);
        }
    }

    #[test]
    fn cleaned_spectra_match_ideal_reference_within_two_percent() {
        let cube = smooth_cube(64, 32, 4);
        let disp = DispersionModel::linear(4, 6).unwrap();
        let mask = spaced_mask(64, 32, 6);
        let ideal = capture_noiseless(&cube, &mask, &disp, 0.0).unwrap();
        let leaky = capture_noiseless(&cube, &mask, &disp, 0.01).unwrap();
        let (clean, _) = remove_offset(&leaky, &mask, &disp).unwrap();

        let ref_spectra = extract_spectra(&ideal, &mask, &disp).unwrap();
        let got_spectra = extract_spectra(&clean, &mask, &disp).unwrap();
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (a, b) in got_spectra.iter().zip(&ref_spectra) {
            for (va, vb) in a.values.iter().zip(&b.values) {
                num += ((va - vb) as f64).powi(2);
                den += (*vb as f64).powi(2);
            }
        }
        let rel_rms = (num / den).sqrt();
        assert!(rel_rms < 0.02, "relative rms {rel_rms}");
    }

    #[test]
    fn injected_ramp_recovered_within_one_percent() {
        let cube = smooth_cube(64, 32, 4);
        let disp = DispersionModel::linear(4, 6).unwrap();
        let mask = spaced_mask(64, 32, 6);
        let base = capture_noiseless(&cube, &mask, &disp, 0.0).unwrap();
        let mut img = base.clone();
        let mut ramp = vec![0.0f32; 64 * 32];
        for y in 0..32 {
            for x in 0..64 {
                ramp[y * 64 + x] = 0.5 + 0.01 * x as f32 + 0.02 * y as f32;
                img.values[y * 64 + x] += ramp[y * 64 + x];
            }
        }
        let (_, offset) = remove_offset(&img, &mask, &disp).unwrap();
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..ramp.len() {
            num += ((offset.values[i] - ramp[i]) as f64).powi(2);
            den += (ramp[i] as f64).powi(2);
        }
        let rel_rms = (num / den).sqrt();
        assert!(rel_rms < 0.01, "relative rms {rel_rms}");
    }

    #[test]
    fn fully_streaked_rows_borrow_neighbors() {
        // Width equals the streak length, so any opening covers its row.
        let cube = smooth_cube(8, 6, 2);
        let disp = DispersionModel::linear(2, 8).unwrap();
        let mask = SamplingMask::from_points(8, 6, &[(0, 2)]).unwrap();
        let img = capture_noiseless(&cube, &mask, &disp, 0.005).unwrap();
        let (clean, offset) = remove_offset(&img, &mask, &disp).unwrap();
        for i in 0..img.values.len() {
            assert_eq!(clean.values[i] + offset.values[i], img.values[i]);
        }
    }
}
