//! Feature oracle: recovers scene parameters from an image.
//!
//! Background hue comes from the border ring, the object mask from pixels
//! whose hue differs from the background, and the object's shape, centre and
//! size from a least-squares template fit of rendered coverage maps against
//! an estimated alpha map.

use crate::synthdata::scene::{
    coverage_map, hue_distance, pixel, rgb_to_hsv, Shape, IMAGE_SIZE,
};
use crate::tensor::Tensor;

/// Minimum circular hue difference for a pixel to count as object.
pub const OBJECT_HUE_THRESHOLD: f64 = 0.08;
/// Object estimates are flagged low-confidence below this pixel count.
pub const MIN_OBJECT_PIXELS: usize = 8;
/// Pixels less saturated than this carry no usable hue.
const MIN_SATURATION: f64 = 0.1;
const MIN_VALUE: f64 = 0.05;
const HUE_BINS: usize = 100;
const MODE_WINDOW: f64 = 0.03;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneEstimate {
    pub background_hue: f64,
    /// False when the border carries no usable hue (e.g. a black image).
    pub background_confident: bool,
    pub object_hue: f64,
    pub cx: f64,
    pub cy: f64,
    /// Fitted circumradius as a fraction of image width.
    pub size: f64,
    pub class_id: usize,
    pub object_pixels: usize,
    /// `sqrt` of the fraction of pixels in the object mask.
    pub object_fraction_sqrt: f64,
    /// False when fewer than [`MIN_OBJECT_PIXELS`] object pixels were found.
    pub object_confident: bool,
}

struct PixelHsv {
    rgb: [f64; 3],
    hue: f64,
    chromatic: bool,
}

fn analyse(image: &Tensor) -> Vec<PixelHsv> {
    (0..IMAGE_SIZE * IMAGE_SIZE)
        .map(|i| {
            let rgb = pixel(image, i).map(|v| v.clamp(0.0, 1.0));
            let (hue, s, v) = rgb_to_hsv(rgb);
            PixelHsv {
                rgb,
                hue,
                chromatic: s >= MIN_SATURATION && v >= MIN_VALUE,
            }
        })
        .collect()
}

/// Modal hue: the densest 3-bin window of a circular histogram, refined by
/// the median of hues near it (unwrapped around the window centre).
fn modal_hue(hues: &[f64]) -> Option<f64> {
    if hues.is_empty() {
        return None;
    }
    let mut hist = [0usize; HUE_BINS];
    for &h in hues {
        hist[((h * HUE_BINS as f64) as usize).min(HUE_BINS - 1)] += 1;
    }
    let best = (0..HUE_BINS)
        .max_by_key(|&b| {
            let window = hist[(b + HUE_BINS - 1) % HUE_BINS] + hist[b] + hist[(b + 1) % HUE_BINS];
            // Prefer the lowest bin on ties.
            (window, std::cmp::Reverse(b))
        })
        .expect("non-empty range");
    let centre = (best as f64 + 0.5) / HUE_BINS as f64;
    let mut offsets: Vec<f64> = hues
        .iter()
        .map(|&h| (h - centre + 0.5).rem_euclid(1.0) - 0.5)
        .filter(|d| d.abs() <= MODE_WINDOW)
        .collect();
    if offsets.is_empty() {
        return Some(centre);
    }
    offsets.sort_by(f64::total_cmp);
    let median = offsets[(offsets.len() - 1) / 2];
    Some((centre + median).rem_euclid(1.0))
}

fn mean_rgb<'a>(pixels: impl Iterator<Item = &'a PixelHsv>) -> Option<[f64; 3]> {
    let mut acc = [0.0; 3];
    let mut n = 0usize;
    for p in pixels {
        for c in 0..3 {
            acc[c] += p.rgb[c];
        }
        n += 1;
    }
    (n > 0).then(|| acc.map(|v| v / n as f64))
}

fn border_indices() -> impl Iterator<Item = usize> {
    let n = IMAGE_SIZE;
    (0..n * n).filter(move |&i| {
        let (x, y) = (i % n, i / n);
        x == 0 || y == 0 || x == n - 1 || y == n - 1
    })
}

struct Fit {
    sse: f64,
    cx: f64,
    cy: f64,
    size: f64,
}

fn fit_error(alpha: &[f64], shape: Shape, cx: f64, cy: f64, size: f64) -> f64 {
    coverage_map(shape, cx, cy, size)
        .iter()
        .zip(alpha)
        .map(|(c, a)| (c - a) * (c - a))
        .sum()
}

/// Compass search over centre and size, halving the step whenever no
/// neighbouring candidate improves the fit.
fn fit_shape(alpha: &[f64], shape: Shape, cx0: f64, cy0: f64, size0: f64) -> Fit {
    let px = 1.0 / IMAGE_SIZE as f64;
    let min_size = 0.5 * px;
    let mut best = Fit {
        sse: fit_error(alpha, shape, cx0, cy0, size0.max(min_size)),
        cx: cx0,
        cy: cy0,
        size: size0.max(min_size),
    };
    let mut step = 0.5 * px;
    while step >= px / 64.0 {
        let moves = [
            (step, 0.0, 0.0),
            (-step, 0.0, 0.0),
            (0.0, step, 0.0),
            (0.0, -step, 0.0),
            (0.0, 0.0, step),
            (0.0, 0.0, -step),
        ];
        let mut improved = false;
        for (dx, dy, ds) in moves {
            let (cx, cy, size) = (best.cx + dx, best.cy + dy, (best.size + ds).max(min_size));
            let sse = fit_error(alpha, shape, cx, cy, size);
            if sse < best.sse {
                best = Fit { sse, cx, cy, size };
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

/// Estimates scene parameters, considering every known shape.
pub fn extract_features(image: &Tensor) -> SceneEstimate {
    extract_features_among(image, Shape::ALL.len())
}

/// Estimates scene parameters, restricting the shape fit to class ids below
/// `classes`.
pub fn extract_features_among(image: &Tensor, classes: usize) -> SceneEstimate {
    let pixels = analyse(image);
    let border: Vec<&PixelHsv> = border_indices().map(|i| &pixels[i]).collect();
    let border_hues: Vec<f64> = border.iter().filter(|p| p.chromatic).map(|p| p.hue).collect();
    let background_confident = border_hues.len() * 2 >= border.len();
    let background_hue = modal_hue(&border_hues).unwrap_or(0.0);

    let mask: Vec<bool> = pixels
        .iter()
        .map(|p| {
            background_confident
                && p.chromatic
                && hue_distance(p.hue, background_hue) >= OBJECT_HUE_THRESHOLD
        })
        .collect();
    let object_pixels = mask.iter().filter(|&&m| m).count();
    let total = (IMAGE_SIZE * IMAGE_SIZE) as f64;
    let object_fraction_sqrt = (object_pixels as f64 / total).sqrt();
    let object_confident = background_confident && object_pixels >= MIN_OBJECT_PIXELS;

    let object_hues: Vec<f64> = pixels
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(p, _)| p.hue)
        .collect();
    let object_hue = modal_hue(&object_hues).unwrap_or(background_hue);

    let mut estimate = SceneEstimate {
        background_hue,
        background_confident,
        object_hue,
        cx: 0.5,
        cy: 0.5,
        size: 0.0,
        class_id: 0,
        object_pixels,
        object_fraction_sqrt,
        object_confident,
    };
    if object_pixels == 0 {
        return estimate;
    }

    let n = IMAGE_SIZE as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        sx += (i % IMAGE_SIZE) as f64 + 0.5;
        sy += (i / IMAGE_SIZE) as f64 + 0.5;
    }
    let cx0 = sx / object_pixels as f64 / n;
    let cy0 = sy / object_pixels as f64 / n;
    estimate.cx = cx0;
    estimate.cy = cy0;
    if !object_confident {
        return estimate;
    }

    let bg_rgb = mean_rgb(
        border
            .iter()
            .copied()
            .filter(|p| p.chromatic && hue_distance(p.hue, background_hue) <= MODE_WINDOW),
    );
    let fg_rgb = mean_rgb(
        pixels
            .iter()
            .zip(&mask)
            .filter(|(p, &m)| m && hue_distance(p.hue, object_hue) <= MODE_WINDOW)
            .map(|(p, _)| p),
    );
    let (Some(bg), Some(mut fg)) = (bg_rgb, fg_rgb) else {
        return estimate;
    };
    // Small objects may have no fully covered pixel, so the object colour is
    // re-estimated from the fitted coverage and the fit repeated.
    for _ in 0..4 {
        let Some(alpha) = alpha_map(&pixels, bg, fg) else {
            return estimate;
        };
        let coverage: f64 = alpha.iter().sum();
        let mut best: Option<(Shape, Fit)> = None;
        for shape in Shape::ALL.iter().take(classes.clamp(1, Shape::ALL.len())) {
            let size0 = (coverage / shape.area_factor()).sqrt() / n;
            let fit = fit_shape(&alpha, *shape, cx0, cy0, size0);
            if best.as_ref().map_or(true, |(_, b)| fit.sse < b.sse) {
                best = Some((*shape, fit));
            }
        }
        let Some((shape, fit)) = best else {
            return estimate;
        };
        estimate.class_id = shape.class_id();
        estimate.cx = fit.cx;
        estimate.cy = fit.cy;
        estimate.size = fit.size;

        let cov = coverage_map(shape, fit.cx, fit.cy, fit.size);
        let denom: f64 = cov.iter().map(|c| c * c).sum();
        if denom <= 1e-9 {
            break;
        }
        let mut refined = bg;
        for c in 0..3 {
            let num: f64 = cov.iter().zip(&pixels).map(|(a, p)| a * (p.rgb[c] - bg[c])).sum();
            refined[c] = (bg[c] + num / denom).clamp(0.0, 1.0);
        }
        let (hue, s, v) = rgb_to_hsv(refined);
        if s < MIN_SATURATION || v < MIN_VALUE {
            break;
        }
        estimate.object_hue = hue;
        let shift: f64 = (0..3).map(|c| (refined[c] - fg[c]).abs()).sum();
        fg = refined;
        if shift < 1e-6 {
            break;
        }
    }
    estimate
}

/// Projection of each pixel onto the background-to-object colour segment.
fn alpha_map(pixels: &[PixelHsv], bg: [f64; 3], fg: [f64; 3]) -> Option<Vec<f64>> {
    let axis = [fg[0] - bg[0], fg[1] - bg[1], fg[2] - bg[2]];
    let axis_sq: f64 = axis.iter().map(|v| v * v).sum();
    if axis_sq <= 1e-12 {
        return None;
    }
    Some(
        pixels
            .iter()
            .map(|p| {
                let d: f64 = (0..3).map(|c| (p.rgb[c] - bg[c]) * axis[c]).sum();
                (d / axis_sq).clamp(0.0, 1.0)
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::scene::{hsv_to_rgb, render, SceneParams, IMAGE_SHAPE, SATURATION, VALUE};

    fn uniform(hue: f64) -> Tensor {
        let rgb = hsv_to_rgb(hue, SATURATION, VALUE);
        let plane = IMAGE_SIZE * IMAGE_SIZE;
        let mut data = vec![0.0; 3 * plane];
        for c in 0..3 {
            data[c * plane..(c + 1) * plane].fill(rgb[c]);
        }
        Tensor::new(IMAGE_SHAPE.to_vec(), data).unwrap()
    }

    #[test]
    fn uniform_image_has_background_only() {
        let e = extract_features(&uniform(0.42));
        assert!(e.background_confident);
        assert!(hue_distance(e.background_hue, 0.42) < 1e-9);
        assert!(!e.object_confident);
        assert_eq!(e.object_pixels, 0);
    }

    #[test]
    fn black_image_is_low_confidence() {
        let e = extract_features(&Tensor::zeros(&IMAGE_SHAPE));
        assert!(!e.background_confident);
        assert!(!e.object_confident);
        assert!((0.0..1.0).contains(&e.background_hue));
    }

    #[test]
    fn recovers_a_rendered_disc() {
        let p = SceneParams {
            class_id: 1,
            background_hue: 0.9,
            object_hue: 0.4,
            cx: 0.3,
            cy: 0.7,
            size: 0.25,
        };
        let e = extract_features(&render(&p).unwrap());
        assert!(e.object_confident);
        assert_eq!(e.class_id, 1);
        assert!(hue_distance(e.background_hue, 0.9) < 0.02);
        assert!(hue_distance(e.object_hue, 0.4) < 0.02);
        assert!((e.cx - 0.3).abs() * 16.0 < 0.5);
        assert!((e.cy - 0.7).abs() * 16.0 < 0.5);
        assert!((e.size - 0.25).abs() < 0.03);
    }
}
