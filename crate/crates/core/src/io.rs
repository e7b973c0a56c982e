//! File formats: cubes (raw f32 + JSON sidecar), 16-bit PNG images, masks,
//! label maps, and sensor frames.
//!
//! A cube at `scene.hsi` is a raw little-endian f32 payload, band-sequential
//! and row-major within each band, described by a sidecar `scene.hsi.json`
//! holding `{width, height, bands, wavelengths, dtype: "f32le", order: "bsq"}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cube::{GrayImage, GuideImage, HsiCube};
use crate::error::{Error, Result};
use crate::mask::SamplingMask;
use crate::sensor::SensorImage;
use crate::superpixel::{Centroid, SuperpixelMap};

#[derive(Debug, Serialize, Deserialize)]
struct CubeHeader {
    width: usize,
    height: usize,
    bands: usize,
    wavelengths: Vec<f32>,
    dtype: String,
    order: String,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    std::path::PathBuf::from(s)
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedFile {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn save_cube(cube: &HsiCube, path: &Path) -> Result<()> {
    cube.validate()?;
    let header = CubeHeader {
        width: cube.width,
        height: cube.height,
        bands: cube.bands,
        wavelengths: cube.wavelengths.clone(),
        dtype: "f32le".into(),
        order: "bsq".into(),
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&header)?)?;
    let mut payload = Vec::with_capacity(cube.data.len() * 4);
    for v in &cube.data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, payload)?;
    Ok(())
}

pub fn load_cube(path: &Path) -> Result<HsiCube> {
    let header_bytes = fs::read(sidecar_path(path))
        .map_err(|e| malformed(path, format!("missing sidecar header: {e}")))?;
    let header: CubeHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| malformed(path, format!("bad header: {e}")))?;
    if header.dtype != "f32le" || header.order != "bsq" {
        return Err(malformed(
            path,
            format!("unsupported dtype/order {}/{}", header.dtype, header.order),
        ));
    }
    let payload = fs::read(path)?;
    let expect = header.width * header.height * header.bands * 4;
    if payload.len() != expect {
        return Err(malformed(
            path,
            format!(
                "payload holds {} bytes, header implies {expect}",
                payload.len()
            ),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if header.wavelengths.len() != header.bands {
        return Err(malformed(
            path,
            format!(
                "{} wavelengths for {} bands",
                header.wavelengths.len(),
                header.bands
            ),
        ));
    }
    HsiCube::from_data(header.width, header.height, header.wavelengths, data)
}

// --- 16-bit PNG guide / gray images ------------------------------------

pub fn save_guide_png(guide: &GuideImage, path: &Path) -> Result<()> {
    let mut img = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::new(
        guide.width as u32,
        guide.height as u32,
    );
    for (x, y, px) in img.enumerate_pixels_mut() {
        let rgb = guide.pixel(x as usize, y as usize);
        *px = image::Rgb([
            (rgb[0].clamp(0.0, 1.0) * 65535.0).round() as u16,
            (rgb[1].clamp(0.0, 1.0) * 65535.0).round() as u16,
            (rgb[2].clamp(0.0, 1.0) * 65535.0).round() as u16,
        ]);
    }
    img.save(path)?;
    Ok(())
}

pub fn load_guide_png(path: &Path) -> Result<GuideImage> {
    let img = image::open(path)?.into_rgb16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut guide = GuideImage::new(w, h);
    for (x, y, px) in img.enumerate_pixels() {
        guide.set_pixel(
            x as usize,
            y as usize,
            [
                px.0[0] as f32 / 65535.0,
                px.0[1] as f32 / 65535.0,
                px.0[2] as f32 / 65535.0,
            ],
        );
    }
    Ok(guide)
}

pub fn save_gray_png(gray: &GrayImage, path: &Path) -> Result<()> {
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
        gray.width as u32,
        gray.height as u32,
    );
    for (x, y, px) in img.enumerate_pixels_mut() {
        *px = image::Luma([
            (gray.at(x as usize, y as usize).clamp(0.0, 1.0) * 65535.0).round() as u16,
        ]);
    }
    img.save(path)?;
    Ok(())
}

pub fn load_gray_png(path: &Path) -> Result<GrayImage> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut gray = GrayImage::new(w, h);
    for (x, y, px) in img.enumerate_pixels() {
        gray.data[y as usize * w + x as usize] = px.0[0] as f32 / 65535.0;
    }
    Ok(gray)
}

// --- Masks: 8-bit PGM or PNG, 0 = closed, 255 = open ---------------------

pub fn save_mask(mask: &SamplingMask, path: &Path) -> Result<()> {
    let mut img =
        image::GrayImage::new(mask.width as u32, mask.height as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        *px = image::Luma([if mask.is_open(x as usize, y as usize) {
            255
        } else {
            0
        }]);
    }
    if path.extension().and_then(|e| e.to_str()) == Some("pgm") {
        img.save_with_format(path, image::ImageFormat::Pnm)?;
    } else {
        img.save(path)?;
    }
    Ok(())
}

pub fn load_mask(path: &Path) -> Result<SamplingMask> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let bitmap = img.pixels().map(|p| p.0[0] >= 128).collect();
    SamplingMask::from_bitmap(w, h, bitmap)
}

// --- Superpixel label maps: raw u32 + JSON sidecar ------------------------

#[derive(Debug, Serialize, Deserialize)]
struct LabelHeader {
    width: usize,
    height: usize,
    num_labels: usize,
    /// Per-label `[x, y, r, g, b]`.
    centroids: Vec<[f32; 5]>,
}

pub fn save_labels(spmap: &SuperpixelMap, path: &Path) -> Result<()> {
    let header = LabelHeader {
        width: spmap.width,
        height: spmap.height,
        num_labels: spmap.num_labels,
        centroids: spmap
            .centroids
            .iter()
            .map(|c| [c.x, c.y, c.color[0], c.color[1], c.color[2]])
            .collect(),
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&header)?)?;
    let mut payload = Vec::with_capacity(spmap.labels.len() * 4);
    for v in &spmap.labels {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, payload)?;
    Ok(())
}

pub fn load_labels(path: &Path) -> Result<SuperpixelMap> {
    let header_bytes = fs::read(sidecar_path(path))
        .map_err(|e| malformed(path, format!("missing sidecar header: {e}")))?;
    let header: LabelHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| malformed(path, format!("bad header: {e}")))?;
    let payload = fs::read(path)?;
    if payload.len() != header.width * header.height * 4 {
        return Err(malformed(path, "label payload size mismatch"));
    }
    let labels: Vec<u32> = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if header.centroids.len() != header.num_labels {
        return Err(malformed(path, "centroid count != num_labels"));
    }
    if labels.iter().any(|&l| l as usize >= header.num_labels) {
        return Err(malformed(path, "label value out of range"));
    }
    Ok(SuperpixelMap {
        width: header.width,
        height: header.height,
        labels,
        num_labels: header.num_labels,
        centroids: header
            .centroids
            .iter()
            .map(|c| Centroid {
                x: c[0],
                y: c[1],
                color: [c[2], c[3], c[4]],
            })
            .collect(),
    })
}

/// False-color rendering of a label map for inspection.
pub fn save_labels_png(spmap: &SuperpixelMap, path: &Path) -> Result<()> {
    let mut img = image::RgbImage::new(spmap.width as u32, spmap.height as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let l = spmap.labels[y as usize * spmap.width + x as usize] as u64;
        // Golden-ratio hue walk keeps adjacent labels distinguishable.
        let h = (l as f64 * 0.618_033_988_749_895).fract();
        let (r, g, b) = hsv_to_rgb(h, 0.55, 0.95);
        *px = image::Rgb([r, g, b]);
    }
    img.save(path)?;
    Ok(())
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (u8, u8, u8) {
    let i = (h * 6.0).floor() as i32 % 6;
    let f = h * 6.0 - (h * 6.0).floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    ((r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8)
}

// --- Sensor frames: 16-bit PNG plus affine scaling sidecar ----------------

#[derive(Debug, Serialize, Deserialize)]
struct SensorHeader {
    width: usize,
    height: usize,
    /// Pixel value = `code * scale + offset`.
    scale: f64,
    offset: f64,
}

pub fn save_sensor_png(img: &SensorImage, path: &Path) -> Result<()> {
    let lo = img.values.iter().copied().fold(f32::INFINITY, f32::min).min(0.0) as f64;
    let hi = img.values.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let scale = if hi > lo { (hi - lo) / 65535.0 } else { 1.0 };
    let header = SensorHeader {
        width: img.width,
        height: img.height,
        scale,
        offset: lo,
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&header)?)?;
    let mut out = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
        img.width as u32,
        img.height as u32,
    );
    for (x, y, px) in out.enumerate_pixels_mut() {
        let v = img.values[y as usize * img.width + x as usize] as f64;
        *px = image::Luma([((v - lo) / scale).round().clamp(0.0, 65535.0) as u16]);
    }
    out.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn load_sensor_png(path: &Path) -> Result<SensorImage> {
    let header_bytes = fs::read(sidecar_path(path))
        .map_err(|e| malformed(path, format!("missing sidecar header: {e}")))?;
    let header: SensorHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| malformed(path, format!("bad header: {e}")))?;
    let img = image::open(path)?.into_luma16();
    if (img.width() as usize, img.height() as usize) != (header.width, header.height) {
        return Err(malformed(path, "png size != sidecar size"));
    }
    let values = img
        .pixels()
        .map(|p| (p.0[0] as f64 * header.scale + header.offset) as f32)
        .collect();
    Ok(SensorImage {
        width: header.width,
        height: header.height,
        values,
    })
}
