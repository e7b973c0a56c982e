//! Binary sampling masks and the streak-conflict predicate.

use crate::error::{Error, Result};

/// Two open points conflict when their spectral streaks can overlap on the
/// sensor: vertical distance under the guard band `v` and horizontal streak
/// intervals `[x, x+n)` intersecting.
#[inline]
pub fn points_conflict(p: (usize, usize), q: (usize, usize), n: usize, v: usize) -> bool {
    let dy = p.1.abs_diff(q.1);
    let dx = p.0.abs_diff(q.0);
    dy < v && dx < n
}

/// Per-pixel transmission mask plus the ordered list of open locations.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    pub width: usize,
    pub height: usize,
    /// Row-major open/closed bitmap.
    pub bitmap: Vec<bool>,
    /// Open locations `(x, y)` sorted row-major; always mirrors `bitmap`.
    pub points: Vec<(usize, usize)>,
}

impl SamplingMask {
    pub fn empty(width: usize, height: usize) -> Self {
        SamplingMask {
            width,
            height,
            bitmap: vec![false; width * height],
            points: Vec::new(),
        }
    }

    pub fn from_points(width: usize, height: usize, points: &[(usize, usize)]) -> Result<Self> {
        let mut mask = SamplingMask::empty(width, height);
        for &(x, y) in points {
            if x >= width || y >= height {
                return Err(Error::InvalidParam(format!(
                    "mask point ({x},{y}) out of {width}x{height} bounds"
                )));
            }
            mask.bitmap[y * width + x] = true;
        }
        mask.rebuild_points();
        Ok(mask)
    }

    pub fn from_bitmap(width: usize, height: usize, bitmap: Vec<bool>) -> Result<Self> {
        if bitmap.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "bitmap length {} != {width}x{height}",
                bitmap.len()
            )));
        }
        let mut mask = SamplingMask {
            width,
            height,
            bitmap,
            points: Vec::new(),
        };
        mask.rebuild_points();
        Ok(mask)
    }

    /// Re-derive the point list from the bitmap in row-major order.
    pub fn rebuild_points(&mut self) {
        self.points.clear();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.bitmap[y * self.width + x] {
                    self.points.push((x, y));
                }
            }
        }
    }

    #[inline]
    pub fn is_open(&self, x: usize, y: usize) -> bool {
        self.bitmap[y * self.width + x]
    }

    pub fn num_open(&self) -> usize {
        self.points.len()
    }

    /// Open points whose streak of length `n` runs past the sensor edge.
    pub fn truncated_points(&self, n: usize) -> Vec<(usize, usize)> {
        self.points
            .iter()
            .copied()
            .filter(|&(x, _)| x + n > self.width)
            .collect()
    }

    /// Find one conflicting pair, if any. Row-bucketed so large masks stay
    /// cheap; the O(P^2) scan lives in the test oracles.
    pub fn find_conflict(&self, n: usize, v: usize) -> Option<((usize, usize), (usize, usize))> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); self.height];
        for &(x, y) in &self.points {
            rows[y].push(x);
        }
        for &(x, y) in &self.points {
            let lo = y.saturating_sub(v - 1);
            let hi = (y + v - 1).min(self.height - 1);
            for yy in lo..=hi {
                for &xx in &rows[yy] {
                    if (xx, yy) != (x, y) && points_conflict((x, y), (xx, yy), n, v) {
                        return Some(((x, y), (xx, yy)));
                    }
                }
            }
        }
        None
    }

    pub fn is_conflict_free(&self, n: usize, v: usize) -> bool {
        self.find_conflict(n, v).is_none()
    }

    /// 0/1 transmission plane.
    pub fn to_f32_plane(&self) -> Vec<f32> {
        self.bitmap.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conflict_predicate() {
        // Same row, closer than the streak length.
        assert!(points_conflict((5, 3), (10, 3), 8, 1));
        assert!(!points_conflict((5, 3), (13, 3), 8, 1));
        // Different row with v = 1: never a conflict.
        assert!(!points_conflict((0, 0), (0, 1), 8, 1));
        // Guard band of 3 rows.
        assert!(points_conflict((0, 0), (2, 2), 8, 3));
        assert!(!points_conflict((0, 0), (2, 3), 8, 3));
    }

    #[test]
    fn points_sorted_row_major() {
        let mask =
            SamplingMask::from_points(8, 8, &[(7, 2), (0, 2), (3, 0)]).unwrap();
        assert_eq!(mask.points, vec![(3, 0), (0, 2), (7, 2)]);
        assert_eq!(mask.num_open(), 3);
    }

    #[test]
    fn out_of_bounds_rejected() {
        assert!(SamplingMask::from_points(4, 4, &[(4, 0)]).is_err());
    }

    #[test]
    fn find_conflict_matches_exhaustive() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let mut pts = Vec::new();
            for _ in 0..12 {
                pts.push((rng.gen_range(0..32), rng.gen_range(0..32)));
            }
            pts.sort();
            pts.dedup();
            let mask = SamplingMask::from_points(32, 32, &pts).unwrap();
            let (n, v) = (rng.gen_range(2..10), rng.gen_range(1..4));
            let exhaustive = mask.points.iter().enumerate().any(|(i, &p)| {
                mask.points[i + 1..]
                    .iter()
                    .any(|&q| points_conflict(p, q, n, v))
            });
            assert_eq!(mask.find_conflict(n, v).is_some(), exhaustive);
        }
    }

    #[test]
    fn truncated_points_flagged() {
        let mask = SamplingMask::from_points(10, 2, &[(1, 0), (7, 1)]).unwrap();
        assert_eq!(mask.truncated_points(4), vec![(7, 1)]);
        assert!(mask.truncated_points(3).is_empty());
    }
}
