//! Deterministic synthetic scenes for simulation and testing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cube::{GuideImage, HsiCube};
use crate::error::{Error, Result};
use crate::superpixel::{enforce_connectivity, KeepRule, SuperpixelMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    /// Voronoi regions, each a single spectrum scaled by a smooth shading
    /// field; exactly rank-1 per region.
    Rank1Patches,
    /// Smooth global shading of one spectrum; no material boundaries.
    Gradient,
    /// One-pixel vertical stripes alternating two spectra; adversarial for
    /// segmentation-driven sampling.
    Stripes,
    /// Two halves holding orthogonal spectra of equal energy.
    TwoCluster,
}

impl SceneKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SceneKind::Rank1Patches => "rank1-patches",
            SceneKind::Gradient => "gradient",
            SceneKind::Stripes => "stripes",
            SceneKind::TwoCluster => "two-cluster",
        }
    }
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rank1-patches" => Ok(SceneKind::Rank1Patches),
            "gradient" => Ok(SceneKind::Gradient),
            "stripes" => Ok(SceneKind::Stripes),
            "two-cluster" => Ok(SceneKind::TwoCluster),
            other => Err(Error::InvalidParam(format!("unknown scene kind '{other}'"))),
        }
    }
}

pub fn default_wavelengths(bands: usize, lambda_min: f32, lambda_max: f32) -> Vec<f32> {
    if bands == 1 {
        return vec![lambda_min];
    }
    (0..bands)
        .map(|b| lambda_min + (lambda_max - lambda_min) * b as f32 / (bands - 1) as f32)
        .collect()
}

/// Smooth positive spectrum: a floor plus a few Gaussian bumps over the band
/// index, normalized to peak 1.
fn smooth_spectrum(bands: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut s = vec![0.05f32; bands];
    for _ in 0..3 {
        let amp: f32 = rng.gen_range(0.2..1.0);
        let mu: f32 = rng.gen_range(0.0..bands as f32);
        let sigma: f32 = rng.gen_range(bands as f32 / 10.0..bands as f32 / 3.0);
        for (b, v) in s.iter_mut().enumerate() {
            *v += amp * (-((b as f32 - mu).powi(2)) / (2.0 * sigma * sigma)).exp();
        }
    }
    let peak = s.iter().copied().fold(0.0f32, f32::max);
    for v in s.iter_mut() {
        *v /= peak;
    }
    s
}

/// Smooth shading field in [0.3, 1.0] from bilinear interpolation of a
/// coarse random grid.
fn shading_field(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    const GRID: usize = 5;
    let mut knots = [[0.0f32; GRID]; GRID];
    for row in knots.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
    }
    let mut field = vec![0.0f32; w * h];
    for y in 0..h {
        let fy = if h > 1 {
            y as f32 / (h - 1) as f32 * (GRID - 1) as f32
        } else {
            0.0
        };
        let gy = (fy as usize).min(GRID - 2);
        let ty = fy - gy as f32;
        for x in 0..w {
            let fx = if w > 1 {
                x as f32 / (w - 1) as f32 * (GRID - 1) as f32
            } else {
                0.0
            };
            let gx = (fx as usize).min(GRID - 2);
            let tx = fx - gx as f32;
            let v = knots[gy][gx] * (1.0 - ty) * (1.0 - tx)
                + knots[gy][gx + 1] * (1.0 - ty) * tx
                + knots[gy + 1][gx] * ty * (1.0 - tx)
                + knots[gy + 1][gx + 1] * ty * tx;
            field[y * w + x] = 0.3 + 0.7 * v;
        }
    }
    field
}

fn validate_dims(w: usize, h: usize, bands: usize) -> Result<()> {
    if w == 0 || h == 0 || bands == 0 {
        return Err(Error::InvalidParam("scene dimensions must be >= 1".into()));
    }
    Ok(())
}

/// Deterministic synthetic cube of the requested family.
pub fn synth_scene(
    kind: SceneKind,
    width: usize,
    height: usize,
    bands: usize,
    seed: u64,
) -> Result<HsiCube> {
    synth_scene_with_regions(kind, width, height, bands, seed).map(|(cube, _)| cube)
}

/// Like `synth_scene`, also returning the ground-truth region partition for
/// the piecewise kinds (`rank1-patches`, `two-cluster`).
pub fn synth_scene_with_regions(
    kind: SceneKind,
    width: usize,
    height: usize,
    bands: usize,
    seed: u64,
) -> Result<(HsiCube, Option<SuperpixelMap>)> {
    validate_dims(width, height, bands)?;
    let wl = default_wavelengths(bands, 400.0, 700.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width, height);
    let n = w * h;
    match kind {
        SceneKind::Rank1Patches => {
            let regions = ((n / 512).max(6)).min(24);
            let mut seeds: Vec<(usize, usize)> = Vec::new();
            while seeds.len() < regions.min(n) {
                let p = (rng.gen_range(0..w), rng.gen_range(0..h));
                if !seeds.contains(&p) {
                    seeds.push(p);
                }
            }
            let mut labels = vec![0u32; n];
            for y in 0..h {
                for x in 0..w {
                    let mut best = usize::MAX;
                    for (k, &(sx, sy)) in seeds.iter().enumerate() {
                        let d = x.abs_diff(sx).pow(2) + y.abs_diff(sy).pow(2);
                        if d < best {
                            best = d;
                            labels[y * w + x] = k as u32;
                        }
                    }
                }
            }
            // Voronoi cells of the Euclidean metric rasterize to connected
            // sets, but split any stragglers so the partition is a valid
            // superpixel map.
            let dummy = GuideImage::new(w, h);
            let map = enforce_connectivity(&labels, &dummy, KeepRule::MinSize(1));
            // Components inherit the spectrum of their Voronoi parent.
            let mut parent = vec![0usize; map.num_labels];
            for i in 0..n {
                parent[map.labels[i] as usize] = labels[i] as usize;
            }
            let spectra: Vec<Vec<f32>> =
                (0..seeds.len()).map(|_| smooth_spectrum(bands, &mut rng)).collect();
            let shading = shading_field(w, h, &mut rng);
            let mut cube = HsiCube::new(w, h, wl)?;
            for i in 0..n {
                let s = &spectra[parent[map.labels[i] as usize]];
                for b in 0..bands {
                    cube.data[b * n + i] = shading[i] * s[b];
                }
            }
            Ok((cube, Some(map)))
        }
        SceneKind::Gradient => {
            let s = smooth_spectrum(bands, &mut rng);
            let mut cube = HsiCube::new(w, h, wl)?;
            for y in 0..h {
                for x in 0..w {
                    let a = 0.15
                        + 0.85 * ((x + y) as f32 / (w + h).saturating_sub(2).max(1) as f32);
                    for b in 0..bands {
                        cube.data[b * n + y * w + x] = a * s[b];
                    }
                }
            }
            Ok((cube, None))
        }
        SceneKind::Stripes => {
            let s0 = smooth_spectrum(bands, &mut rng);
            let s1 = smooth_spectrum(bands, &mut rng);
            let mut cube = HsiCube::new(w, h, wl)?;
            for y in 0..h {
                for x in 0..w {
                    let s = if x % 2 == 0 { &s0 } else { &s1 };
                    for b in 0..bands {
                        cube.data[b * n + y * w + x] = 0.8 * s[b];
                    }
                }
            }
            Ok((cube, None))
        }
        SceneKind::TwoCluster => {
            // Orthogonal supports: lower half of the bands vs upper half,
            // equalized energy.
            let split = (bands / 2).max(1);
            let mut s0 = vec![0.0f32; bands];
            let mut s1 = vec![0.0f32; bands];
            for b in 0..split {
                s0[b] = 0.8;
            }
            for b in split..bands {
                s1[b] = 0.8;
            }
            if bands == 1 {
                s1[0] = 0.8;
            }
            let norm0 = s0.iter().map(|v| v * v).sum::<f32>().sqrt();
            let norm1 = s1.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-6);
            for v in s1.iter_mut() {
                *v *= norm0 / norm1;
            }
            let mut labels = vec![0u32; n];
            let mut cube = HsiCube::new(w, h, wl)?;
            for y in 0..h {
                for x in 0..w {
                    let left = x < w / 2;
                    labels[y * w + x] = if left { 0 } else { 1 };
                    let s = if left { &s0 } else { &s1 };
                    for b in 0..bands {
                        cube.data[b * n + y * w + x] = s[b];
                    }
                }
            }
            let dummy = GuideImage::new(w, h);
            let map = enforce_connectivity(&labels, &dummy, KeepRule::MinSize(1));
            Ok((cube, Some(map)))
        }
    }
}
