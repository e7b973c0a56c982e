//! sRGB to CIELAB conversion (D65 white point, sRGB primaries).

/// D65 reference white in XYZ, Y normalized to 1.
const WHITE: [f32; 3] = [0.950_47, 1.0, 1.088_83];

fn srgb_expand(c: f32) -> f32 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f32) -> f32 {
    const DELTA: f32 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Convert one sRGB pixel (components in [0, 1]) to CIELAB.
pub fn srgb_to_lab(r: f32, g: f32, b: f32) -> [f32; 3] {
    let rl = srgb_expand(r);
    let gl = srgb_expand(g);
    let bl = srgb_expand(b);

    let x = 0.412_456_4 * rl + 0.357_576_1 * gl + 0.180_437_5 * bl;
    let y = 0.212_672_9 * rl + 0.715_152_2 * gl + 0.072_175 * bl;
    let z = 0.019_333_9 * rl + 0.119_192 * gl + 0.950_304_1 * bl;

    let fx = lab_f(x / WHITE[0]);
    let fy = lab_f(y / WHITE[1]);
    let fz = lab_f(z / WHITE[2]);

    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Planar CIELAB image used by the clustering code.
#[derive(Debug, Clone)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub l: Vec<f32>,
    pub a: Vec<f32>,
    pub b: Vec<f32>,
}

impl LabImage {
    pub fn from_guide(guide: &crate::cube::GuideImage) -> Self {
        let n = guide.width * guide.height;
        let mut l = vec![0.0; n];
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        for i in 0..n {
            let px = guide.pixel_at(i);
            let lab = srgb_to_lab(px[0], px[1], px[2]);
            l[i] = lab[0];
            a[i] = lab[1];
            b[i] = lab[2];
        }
        LabImage {
            width: guide.width,
            height: guide.height,
            l,
            a,
            b,
        }
    }

    #[inline]
    pub fn at(&self, idx: usize) -> [f32; 3] {
        [self.l[idx], self.a[idx], self.b[idx]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_maps_to_l100() {
        let lab = srgb_to_lab(1.0, 1.0, 1.0);
        assert!((lab[0] - 100.0).abs() < 0.05, "L = {}", lab[0]);
        assert!(lab[1].abs() < 0.05);
        assert!(lab[2].abs() < 0.05);
    }

    #[test]
    fn black_maps_to_origin() {
        let lab = srgb_to_lab(0.0, 0.0, 0.0);
        assert!(lab[0].abs() < 1e-4);
        assert!(lab[1].abs() < 1e-4);
        assert!(lab[2].abs() < 1e-4);
    }

    #[test]
    fn primary_red_reference_value() {
        // Reference Lab for sRGB (1,0,0): L=53.24, a=80.09, b=67.20.
        let lab = srgb_to_lab(1.0, 0.0, 0.0);
        assert!((lab[0] - 53.24).abs() < 0.1, "L = {}", lab[0]);
        assert!((lab[1] - 80.09).abs() < 0.2, "a = {}", lab[1]);
        assert!((lab[2] - 67.20).abs() < 0.2, "b = {}", lab[2]);
    }
}
