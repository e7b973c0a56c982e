//! Scene-adaptive sampling mask generation.
//!
//! Three steps over a superpixel segmentation: open one pixel at each
//! superpixel centroid, move or drop openings until no two spectral streaks
//! can collide, re-own the superpixels around the surviving openings, then
//! greedily open every remaining pixel that keeps the mask conflict-free to
//! maximize light throughput.

use std::time::Instant;

use crate::cube::GuideImage;
use crate::error::{Error, Result};
use crate::mask::{points_conflict, SamplingMask};
use crate::superpixel::{reseed_slic, slic, SlicParams, SuperpixelMap};

#[derive(Debug, Clone)]
pub struct MaskGenParams {
    /// Spectral spread in pixels: streaks occupy `[x, x+n)`.
    pub n: usize,
    /// Vertical guard band in rows; 1 means only same-row openings interact.
    pub v: usize,
    /// Target superpixel count for the initial segmentation.
    pub q: usize,
    pub compactness: f32,
    /// How far a conflicting opening may be moved before it is dropped.
    pub max_shift: usize,
    pub slic_iterations: usize,
}

impl MaskGenParams {
    pub fn new(n: usize, q: usize, compactness: f32) -> Self {
        MaskGenParams {
            n,
            v: 1,
            q,
            compactness,
            max_shift: 2 * n,
            slic_iterations: 10,
        }
    }

    /// The superpixel count used by `--Q auto`: a quarter of the theoretical
    /// sampling budget `W*H/N`.
    pub fn auto_q(width: usize, height: usize, n: usize) -> usize {
        (width * height / (4 * n)).max(1)
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.n == 0 || self.v == 0 {
            return Err(Error::InvalidParam("n and v must be >= 1".into()));
        }
        if self.n > width {
            return Err(Error::InvalidParam(format!(
                "spectral spread n = {} exceeds width {width}",
                self.n
            )));
        }
        if self.v > height {
            return Err(Error::InvalidParam(format!(
                "vertical guard v = {} exceeds height {height}",
                self.v
            )));
        }
        if self.q == 0 {
            return Err(Error::InvalidParam("q must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct MaskGenStats {
    pub slic_ms: f64,
    pub centroid_ms: f64,
    pub enforce_ms: f64,
    pub reseed_ms: f64,
    pub maximize_ms: f64,
    pub shifted_points: usize,
    pub removed_points: usize,
    pub truncated_points: usize,
}

impl MaskGenStats {
    /// Mask generation time without the initial segmentation.
    pub fn mask_ms(&self) -> f64 {
        self.centroid_ms + self.enforce_ms + self.reseed_ms + self.maximize_ms
    }
}

#[derive(Debug)]
pub struct MaskGenOutput {
    pub mask: SamplingMask,
    /// Superpixels re-seeded around the surviving openings.
    pub spmap: SuperpixelMap,
    /// The openings that survived separation enforcement, row-major. These
    /// are the reseed centroids; extra throughput openings land inside the
    /// regions they anchor.
    pub seed_points: Vec<(usize, usize)>,
    pub stats: MaskGenStats,
}

/// One opening per superpixel at its centroid, rounded to the nearest pixel
/// inside the label; if the rounded centroid falls outside the label, the
/// member pixel nearest to it is used.
pub fn centroid_mask(spmap: &SuperpixelMap) -> Result<SamplingMask> {
    let (w, h) = (spmap.width, spmap.height);
    let members = spmap.members();
    let mut points = Vec::with_capacity(spmap.num_labels);
    for (l, c) in spmap.centroids.iter().enumerate() {
        let rx = (c.x.round().max(0.0) as usize).min(w - 1);
        let ry = (c.y.round().max(0.0) as usize).min(h - 1);
        if spmap.labels[ry * w + rx] == l as u32 {
            points.push((rx, ry));
            continue;
        }
        let mut best = usize::MAX;
        let mut pick = None;
        for &idx in &members[l] {
            let (x, y) = (idx % w, idx / w);
            let d = x.abs_diff(rx).pow(2) + y.abs_diff(ry).pow(2);
            if d < best {
                best = d;
                pick = Some((x, y));
            }
        }
        points.push(pick.ok_or(Error::EmptyLabel(l as u32))?);
    }
    SamplingMask::from_points(w, h, &points)
}

struct RowIndex {
    rows: Vec<Vec<usize>>,
}

impl RowIndex {
    fn new(height: usize) -> Self {
        RowIndex {
            rows: vec![Vec::new(); height],
        }
    }

    fn insert(&mut self, x: usize, y: usize) {
        let row = &mut self.rows[y];
        let pos = row.partition_point(|&e| e < x);
        row.insert(pos, x);
    }

    /// Any open x within `(x-n, x+n)` in rows `|dy| < v` around `y`?
    fn conflicts(&self, x: usize, y: usize, n: usize, v: usize) -> bool {
        let lo_row = y.saturating_sub(v - 1);
        let hi_row = (y + v - 1).min(self.rows.len() - 1);
        let lo_x = x.saturating_sub(n - 1);
        for yy in lo_row..=hi_row {
            let row = &self.rows[yy];
            let i = row.partition_point(|&e| e < lo_x);
            if i < row.len() && row[i] < x + n {
                return true;
            }
        }
        false
    }
}

/// Remove streak conflicts by a single row-major pass: the earlier opening of
/// a conflicting pair wins; the later one shifts right by the smallest
/// feasible amount, then left, and is dropped when no position within
/// `max_shift` works.
pub fn enforce_separation(mask: &SamplingMask, params: &MaskGenParams) -> SamplingMask {
    enforce_separation_full(mask, params).0
}

pub(crate) fn enforce_separation_full(
    mask: &SamplingMask,
    params: &MaskGenParams,
) -> (SamplingMask, usize, usize) {
    let (n, v) = (params.n, params.v);
    let mut index = RowIndex::new(mask.height);
    let mut kept: Vec<(usize, usize)> = Vec::with_capacity(mask.points.len());
    let mut shifted = 0usize;
    let mut removed = 0usize;

    'points: for &(x, y) in &mask.points {
        if !index.conflicts(x, y, n, v) {
            index.insert(x, y);
            kept.push((x, y));
            continue;
        }
        for dx in 1..=params.max_shift {
            if x + dx < mask.width && !index.conflicts(x + dx, y, n, v) {
                index.insert(x + dx, y);
                kept.push((x + dx, y));
                shifted += 1;
                continue 'points;
            }
        }
        for dx in 1..=params.max_shift {
            if dx <= x && !index.conflicts(x - dx, y, n, v) {
                index.insert(x - dx, y);
                kept.push((x - dx, y));
                shifted += 1;
                continue 'points;
            }
        }
        removed += 1;
    }

    let out = SamplingMask::from_points(mask.width, mask.height, &kept)
        .expect("kept points are in bounds");
    (out, shifted, removed)
}

/// Greedily open every pixel that keeps the mask conflict-free, scanning rows
/// top to bottom and pixels left to right. Only pixels whose full streak fits
/// on the sensor (`x + n <= width`) are added; pre-existing truncated
/// openings are preserved and reported via `SamplingMask::truncated_points`.
pub fn maximize_throughput(mask: &SamplingMask, params: &MaskGenParams) -> Result<SamplingMask> {
    if let Some((p, q)) = mask.find_conflict(params.n, params.v) {
        return Err(Error::MaskConflict(p, q));
    }
    let (w, h) = (mask.width, mask.height);
    let (n, v) = (params.n, params.v);
    let mut index = RowIndex::new(h);
    for &(x, y) in &mask.points {
        index.insert(x, y);
    }
    let mut bitmap = mask.bitmap.clone();
    for y in 0..h {
        for x in 0..w {
            if bitmap[y * w + x] || x + n > w {
                continue;
            }
            if !index.conflicts(x, y, n, v) {
                bitmap[y * w + x] = true;
                index.insert(x, y);
            }
        }
    }
    SamplingMask::from_bitmap(w, h, bitmap)
}

/// The full adaptive pipeline with per-stage telemetry.
pub fn generate_mask_full(guide: &GuideImage, params: &MaskGenParams) -> Result<MaskGenOutput> {
    params.validate(guide.width, guide.height)?;
    let mut stats = MaskGenStats::default();

    let t = Instant::now();
    let slic_params = SlicParams {
        q: params.q,
        compactness: params.compactness,
        iterations: params.slic_iterations,
    };
    let initial_map = slic(guide, &slic_params)?;
    stats.slic_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let seeds = centroid_mask(&initial_map)?;
    stats.centroid_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let (enforced, shifted, removed) = enforce_separation_full(&seeds, params);
    stats.enforce_ms = t.elapsed().as_secs_f64() * 1e3;
    stats.shifted_points = shifted;
    stats.removed_points = removed;

    let t = Instant::now();
    let spmap = reseed_slic(guide, &enforced.points, params.compactness)?;
    stats.reseed_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let mask = maximize_throughput(&enforced, params)?;
    stats.maximize_ms = t.elapsed().as_secs_f64() * 1e3;
    stats.truncated_points = mask.truncated_points(params.n).len();

    Ok(MaskGenOutput {
        mask,
        spmap,
        seed_points: enforced.points,
        stats,
    })
}

/// Adaptive mask plus the re-seeded superpixel map it samples.
pub fn generate_mask(
    guide: &GuideImage,
    params: &MaskGenParams,
) -> Result<(SamplingMask, SuperpixelMap)> {
    let out = generate_mask_full(guide, params)?;
    Ok((out.mask, out.spmap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::superpixel::Centroid;
    use rand::{Rng, SeedableRng};

    /// O(P^2) conflict oracle.
    fn pairwise_conflict_free(mask: &SamplingMask, n: usize, v: usize) -> bool {
        for (i, &p) in mask.points.iter().enumerate() {
            for &q in &mask.points[i + 1..] {
                if points_conflict(p, q, n, v) {
                    return false;
                }
            }
        }
        true
    }

    fn grid_map(w: usize, h: usize, bx: usize, by: usize) -> SuperpixelMap {
        let nx = w / bx;
        let labels: Vec<u32> = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                ((y / by) * nx + x / bx) as u32
            })
            .collect();
        let num_labels = nx * (h / by);
        let mut acc = vec![[0.0f64; 3]; num_labels];
        for (i, &l) in labels.iter().enumerate() {
            acc[l as usize][0] += (i % w) as f64;
            acc[l as usize][1] += (i / w) as f64;
            acc[l as usize][2] += 1.0;
        }
        let centroids = acc
            .iter()
            .map(|a| Centroid {
                x: (a[0] / a[2]) as f32,
                y: (a[1] / a[2]) as f32,
                color: [0.5; 3],
            })
            .collect();
        SuperpixelMap {
            width: w,
            height: h,
            labels,
            num_labels,
            centroids,
        }
    }

    #[test]
    fn centroid_mask_opens_block_centers() {
        let map = grid_map(16, 16, 8, 8);
        let mask = centroid_mask(&map).unwrap();
        assert_eq!(mask.points, vec![(4, 4), (12, 4), (4, 12), (12, 12)]);
    }

    #[test]
    fn centroid_mask_single_label() {
        let map = grid_map(9, 9, 9, 9);
        let mask = centroid_mask(&map).unwrap();
        assert_eq!(mask.num_open(), 1);
        assert_eq!(mask.points, vec![(4, 4)]);
    }

    #[test]
    fn l_shaped_label_uses_nearest_member_pixel() {
        // Label 0 is an L along the left column and bottom row of an 8x8
        // image; its centroid falls inside label 1.
        let w = 8;
        let h = 8;
        let mut labels = vec![1u32; w * h];
        for y in 0..h {
            labels[y * w] = 0;
        }
        for x in 0..w {
            labels[(h - 1) * w + x] = 0;
        }
        let mut acc = vec![[0.0f64; 3]; 2];
        for (i, &l) in labels.iter().enumerate() {
            acc[l as usize][0] += (i % w) as f64;
            acc[l as usize][1] += (i / w) as f64;
            acc[l as usize][2] += 1.0;
        }
        let centroids: Vec<Centroid> = acc
            .iter()
            .map(|a| Centroid {
                x: (a[0] / a[2]) as f32,
                y: (a[1] / a[2]) as f32,
                color: [0.5; 3],
            })
            .collect();
        let map = SuperpixelMap {
            width: w,
            height: h,
            labels: labels.clone(),
            num_labels: 2,
            centroids: centroids.clone(),
        };
        map.validate().unwrap();

        let rx = centroids[0].x.round() as usize;
        let ry = centroids[0].y.round() as usize;
        assert_ne!(labels[ry * w + rx], 0, "test needs an outside centroid");

        let mask = centroid_mask(&map).unwrap();
        // Exhaustive nearest-member search oracle.
        let mut best = usize::MAX;
        let mut want = (0, 0);
        for (i, &l) in labels.iter().enumerate() {
            if l != 0 {
                continue;
            }
            let (x, y) = (i % w, i / w);
            let d = x.abs_diff(rx).pow(2) + y.abs_diff(ry).pow(2);
            if d < best {
                best = d;
                want = (x, y);
            }
        }
        assert!(mask.points.contains(&want));
        assert_eq!(mask.num_open(), 2);
    }

    #[test]
    fn enforce_shifts_second_point_right() {
        let mask = SamplingMask::from_points(32, 8, &[(5, 3), (10, 3)]).unwrap();
        let params = MaskGenParams::new(8, 4, 10.0);
        let out = enforce_separation(&mask, &params);
        assert_eq!(out.points, vec![(5, 3), (13, 3)]);
        assert!(pairwise_conflict_free(&out, 8, 1));
    }

    #[test]
    fn enforce_keeps_single_point() {
        let mask = SamplingMask::from_points(16, 16, &[(9, 9)]).unwrap();
        let out = enforce_separation(&mask, &MaskGenParams::new(8, 4, 10.0));
        assert_eq!(out.points, vec![(9, 9)]);
    }

    #[test]
    fn different_guard_rows_do_not_conflict() {
        let mask = SamplingMask::from_points(16, 16, &[(0, 0), (0, 1)]).unwrap();
        let out = enforce_separation(&mask, &MaskGenParams::new(8, 4, 10.0));
        assert_eq!(out.points, vec![(0, 0), (0, 1)]);
    }

    #[test]
    fn enforce_random_masks_end_conflict_free() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let mut pts = Vec::new();
            for _ in 0..rng.gen_range(5..40) {
                pts.push((rng.gen_range(0..48), rng.gen_range(0..48)));
            }
            pts.sort();
            pts.dedup();
            let mask = SamplingMask::from_points(48, 48, &pts).unwrap();
            let mut params = MaskGenParams::new(rng.gen_range(2..9), 4, 10.0);
            params.v = rng.gen_range(1..4);
            let out = enforce_separation(&mask, &params);
            assert!(pairwise_conflict_free(&out, params.n, params.v));
            assert!(out.num_open() <= mask.num_open());
        }
    }

    #[test]
    fn maximize_fills_empty_row_at_streak_pitch() {
        let mask = SamplingMask::empty(40, 1);
        let out = maximize_throughput(&mask, &MaskGenParams::new(8, 1, 10.0)).unwrap();
        assert_eq!(out.points, vec![(0, 0), (8, 0), (16, 0), (24, 0), (32, 0)]);
        assert_eq!(out.num_open(), 40 / 8);
    }

    #[test]
    fn maximize_respects_full_sensor_budget() {
        // Full sensor scale, empty seed: per row floor(931/68) = 13 openings,
        // total 13 * 698 = 9074, within the floor(H*W/N) = 9556 budget.
        let mask = SamplingMask::empty(931, 698);
        let out = maximize_throughput(&mask, &MaskGenParams::new(68, 1, 10.0)).unwrap();
        assert_eq!(out.num_open(), 13 * 698);
        assert!(out.num_open() <= 931 * 698 / 68);
    }

    #[test]
    fn maximize_is_maximal_and_monotone() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let params = MaskGenParams::new(8, 4, 10.0);
        for _ in 0..10 {
            let mut seed = SamplingMask::empty(64, 64);
            // Random conflict-free seed via rejection.
            for _ in 0..60 {
                let (x, y) = (rng.gen_range(0..64), rng.gen_range(0..64));
                let candidate = (x, y);
                let ok = seed
                    .points
                    .iter()
                    .all(|&p| p != candidate && !points_conflict(p, candidate, 8, 1));
                if ok {
                    seed.bitmap[y * 64 + x] = true;
                }
            }
            seed.rebuild_points();
            let out = maximize_throughput(&seed, &params).unwrap();
            assert!(pairwise_conflict_free(&out, 8, 1));
            // Monotone: every seed opening survives.
            for &p in &seed.points {
                assert!(out.is_open(p.0, p.1));
            }
            // Maximal: no closed full-streak pixel can be opened.
            for y in 0..64 {
                for x in 0..=(64 - 8) {
                    if out.is_open(x, y) {
                        continue;
                    }
                    let blocked = out
                        .points
                        .iter()
                        .any(|&p| points_conflict(p, (x, y), 8, 1));
                    assert!(blocked, "pixel ({x},{y}) could still be opened");
                }
            }
        }
    }

    #[test]
    fn maximize_rejects_conflicting_input() {
        let mask = SamplingMask::from_points(32, 8, &[(5, 3), (10, 3)]).unwrap();
        assert!(matches!(
            maximize_throughput(&mask, &MaskGenParams::new(8, 4, 10.0)),
            Err(Error::MaskConflict(_, _))
        ));
    }

    fn uniform_guide(w: usize, h: usize) -> GuideImage {
        let mut g = GuideImage::new(w, h);
        for v in g.data.iter_mut() {
            *v = 0.5;
        }
        g
    }

    #[test]
    fn generate_mask_covers_every_label() {
        let guide = uniform_guide(64, 64);
        let params = MaskGenParams::new(8, 16, 10.0);
        let out = generate_mask_full(&guide, &params).unwrap();
        out.spmap.validate().unwrap();
        assert!(pairwise_conflict_free(&out.mask, 8, 1));
        assert_eq!(out.spmap.num_labels, out.seed_points.len());
        let mut covered = vec![0usize; out.spmap.num_labels];
        for &(x, y) in &out.mask.points {
            covered[out.spmap.label_at(x, y) as usize] += 1;
        }
        assert!(covered.iter().all(|&c| c >= 1));
    }

    #[test]
    fn generate_mask_survives_one_pixel_stripes() {
        // Vertical 1-px stripes are adversarial: superpixels want to be
        // thin and tall, forcing heavy shifting during enforcement.
        let mut guide = GuideImage::new(48, 48);
        for y in 0..48 {
            for x in 0..48 {
                let v = if x % 2 == 0 { 0.15 } else { 0.85 };
                guide.set_pixel(x, y, [v, v, v]);
            }
        }
        let params = MaskGenParams::new(6, 24, 10.0);
        let out = generate_mask_full(&guide, &params).unwrap();
        assert!(pairwise_conflict_free(&out.mask, 6, 1));
        // Coverage oracle: count open points per reseeded label.
        let mut covered = vec![0usize; out.spmap.num_labels];
        for &(x, y) in &out.mask.points {
            covered[out.spmap.label_at(x, y) as usize] += 1;
        }
        assert!(
            covered.iter().all(|&c| c >= 1),
            "labels without openings: {}",
            covered.iter().filter(|&&c| c == 0).count()
        );
    }

    #[test]
    fn generate_mask_budget_with_unit_guard() {
        let guide = uniform_guide(64, 64);
        let params = MaskGenParams::new(8, 32, 10.0);
        let (mask, _) = generate_mask(&guide, &params).unwrap();
        assert!(mask.num_open() <= 64 * 64 / 8);
    }

    #[test]
    fn params_validated_against_guide() {
        let guide = uniform_guide(16, 16);
        let params = MaskGenParams::new(17, 4, 10.0);
        assert!(generate_mask(&guide, &params).is_err());
    }
}
