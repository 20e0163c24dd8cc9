//! Procedural scenes: one coloured shape on a flat coloured background.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;
pub const IMAGE_SIZE: usize = 16;
pub const IMAGE_SHAPE: [usize; 3] = [CHANNELS, IMAGE_SIZE, IMAGE_SIZE];

/// Saturation and value shared by every rendered colour.
pub const SATURATION: f64 = 0.8;
pub const VALUE: f64 = 0.9;

pub const MIN_HUE_GAP: f64 = 0.15;
pub const CENTER_RANGE: (f64, f64) = (0.2, 0.8);
pub const SIZE_RANGE: (f64, f64) = (0.15, 0.35);

/// Object shape, indexed by class id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Square,
    Disc,
    Triangle,
    Diamond,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Square, Shape::Disc, Shape::Triangle, Shape::Diamond];

    pub fn from_class(class_id: usize) -> Option<Shape> {
        Self::ALL.get(class_id).copied()
    }

    pub fn class_id(self) -> usize {
        self as usize
    }

    /// Area in units of `r²`, where `r` is the circumradius.
    pub fn area_factor(self) -> f64 {
        match self {
            Shape::Square | Shape::Diamond => 2.0,
            Shape::Disc => std::f64::consts::PI,
            Shape::Triangle => 3.0 * 3f64.sqrt() / 4.0,
        }
    }

    /// Signed distance (negative inside) from offset `(dx, dy)` to the shape
    /// of circumradius `r`; image `y` grows downwards.
    pub fn signed_distance(self, dx: f64, dy: f64, r: f64) -> f64 {
        match self {
            Shape::Disc => dx.hypot(dy) - r,
            Shape::Square => {
                let h = r / std::f64::consts::SQRT_2;
                let qx = dx.abs() - h;
                let qy = dy.abs() - h;
                qx.max(0.0).hypot(qy.max(0.0)) + qx.max(qy).min(0.0)
            }
            Shape::Diamond => (dx.abs() + dy.abs() - r) / std::f64::consts::SQRT_2,
            Shape::Triangle => {
                // Equilateral, apex up, centroid at the origin.
                let k = 3f64.sqrt();
                let half_side = r * k / 2.0;
                let mut px = dx.abs() - half_side;
                let mut py = -dy + half_side / k;
                if px + k * py > 0.0 {
                    let (nx, ny) = ((px - k * py) / 2.0, (-k * px - py) / 2.0);
                    px = nx;
                    py = ny;
                }
                px -= px.clamp(-2.0 * half_side, 0.0);
                -px.hypot(py) * py.signum()
            }
        }
    }

    /// Fraction of a pixel covered, with one pixel of linear edge blending.
    pub fn coverage(self, dx: f64, dy: f64, r: f64) -> f64 {
        (0.5 - self.signed_distance(dx, dy, r)).clamp(0.0, 1.0)
    }
}

/// Ground-truth semantic description of a scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneParams {
    pub class_id: usize,
    pub background_hue: f64,
    pub object_hue: f64,
    pub cx: f64,
    pub cy: f64,
    /// Circumradius of the shape as a fraction of the image width.
    pub size: f64,
}

/// Circular distance between two hues in `[0, 1)`.
pub fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::InvalidScene(m));
        if Shape::from_class(self.class_id).is_none() {
            return err(format!("class_id {} has no shape", self.class_id));
        }
        for (name, h) in [("background_hue", self.background_hue), ("object_hue", self.object_hue)] {
            if !(0.0..1.0).contains(&h) {
                return err(format!("{name} {h} outside [0, 1)"));
            }
        }
        for (name, c) in [("cx", self.cx), ("cy", self.cy)] {
            if !(CENTER_RANGE.0..=CENTER_RANGE.1).contains(&c) {
                return err(format!("{name} {c} outside {CENTER_RANGE:?}"));
            }
        }
        if !(SIZE_RANGE.0..=SIZE_RANGE.1).contains(&self.size) {
            return err(format!("size {} outside {SIZE_RANGE:?}", self.size));
        }
        // Tolerance for hues produced by modular arithmetic right at the gap.
        if hue_distance(self.background_hue, self.object_hue) < MIN_HUE_GAP - 1e-12 {
            return err(format!(
                "hues {} and {} closer than {MIN_HUE_GAP}",
                self.background_hue, self.object_hue
            ));
        }
        Ok(())
    }
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// `(hue, saturation, value)`; hue is 0 for achromatic colours.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h.rem_euclid(1.0), s, max)
}

/// Pixel-centre offsets from the object centre, in pixels.
pub(crate) fn pixel_offset(x: usize, y: usize, cx: f64, cy: f64) -> (f64, f64) {
    let n = IMAGE_SIZE as f64;
    (x as f64 + 0.5 - cx * n, y as f64 + 0.5 - cy * n)
}

/// Coverage map `[h·w]` of a shape at centre `(cx, cy)` and circumradius `size`
/// (both as fractions of the image width).
pub fn coverage_map(shape: Shape, cx: f64, cy: f64, size: f64) -> Vec<f64> {
    let r = size * IMAGE_SIZE as f64;
    let mut out = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let (dx, dy) = pixel_offset(x, y, cx, cy);
            out.push(shape.coverage(dx, dy, r));
        }
    }
    out
}

/// Renders a `[3, 16, 16]` image in `[0, 1]`.
pub fn render(params: &SceneParams) -> Result<Tensor> {
    params.validate()?;
    let shape = Shape::from_class(params.class_id).expect("validated");
    let bg = hsv_to_rgb(params.background_hue, SATURATION, VALUE);
    let fg = hsv_to_rgb(params.object_hue, SATURATION, VALUE);
    let alpha = coverage_map(shape, params.cx, params.cy, params.size);
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    let mut data = vec![0.0; CHANNELS * plane];
    for (i, a) in alpha.iter().enumerate() {
        for c in 0..CHANNELS {
            data[c * plane + i] = (1.0 - a) * bg[c] + a * fg[c];
        }
    }
    Tensor::new(IMAGE_SHAPE.to_vec(), data)
}

/// RGB triple of pixel `i` (row-major index into one channel plane).
pub(crate) fn pixel(image: &Tensor, i: usize) -> [f64; 3] {
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    let d = image.data();
    [d[i], d[plane + i], d[2 * plane + i]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(class_id: usize) -> SceneParams {
        SceneParams {
            class_id,
            background_hue: 0.1,
            object_hue: 0.6,
            cx: 0.5,
            cy: 0.5,
            size: 0.35,
        }
    }

    #[test]
    fn hsv_round_trip() {
        for i in 0..100 {
            let h = i as f64 / 100.0;
            let (h2, s, v) = rgb_to_hsv(hsv_to_rgb(h, SATURATION, VALUE));
            assert!(hue_distance(h, h2) < 1e-12);
            assert!((s - SATURATION).abs() < 1e-12);
            assert!((v - VALUE).abs() < 1e-12);
        }
    }

    #[test]
    fn render_is_deterministic() {
        let a = render(&params(2)).unwrap();
        let b = render(&params(2)).unwrap();
        assert!(a.bit_eq(&b));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn out_of_range_params_are_rejected() {
        let mut p = params(0);
        p.size = 0.5;
        assert!(render(&p).is_err());
        let mut p = params(0);
        p.object_hue = 0.2;
        assert!(render(&p).is_err());
        let mut p = params(0);
        p.cx = 0.1;
        assert!(render(&p).is_err());
        let mut p = params(0);
        p.class_id = 9;
        assert!(render(&p).is_err());
    }

    #[test]
    fn hue_distance_wraps() {
        assert!((hue_distance(0.95, 0.05) - 0.1).abs() < 1e-12);
        assert_eq!(hue_distance(0.3, 0.3), 0.0);
    }

    /// Pixel count of the largest square: each pixel whose colour is not
    /// the pure background counts as object.
    #[test]
    fn largest_square_covers_a_quarter_to_two_fifths() {
        let img = render(&params(0)).unwrap();
        let bg = hsv_to_rgb(0.1, SATURATION, VALUE);
        let count = (0..IMAGE_SIZE * IMAGE_SIZE)
            .filter(|&i| {
                let p = pixel(&img, i);
                (0..3).any(|c| (p[c] - bg[c]).abs() > 1e-12)
            })
            .count();
        let frac = count as f64 / (IMAGE_SIZE * IMAGE_SIZE) as f64;
        assert!((0.25..=0.40).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn coverage_areas_match_analytic_areas() {
        for shape in Shape::ALL {
            let cov: f64 = coverage_map(shape, 0.5, 0.5, 0.3).iter().sum();
            let r = 0.3 * IMAGE_SIZE as f64;
            let want = shape.area_factor() * r * r;
            assert!((cov - want).abs() / want < 0.05, "{shape:?}: {cov} vs {want}");
        }
    }
}
