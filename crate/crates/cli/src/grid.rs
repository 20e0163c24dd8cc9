use std::path::Path;

use gentest_core::synthdata::write_ppm;
use gentest_core::{Error, Result, Tensor};

pub const GUTTER: usize = 2;

/// Rows of `[seed | gutter | test]` stacked with white gutters into one image.
pub fn image_grid(pairs: &[(&Tensor, &Tensor)]) -> Result<Tensor> {
    let (first, _) = pairs.first().ok_or(Error::EmptyTests)?;
    let shape = first.shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::InvalidShape {
            shape,
            len: first.len(),
        });
    }
    for (a, b) in pairs {
        for t in [a, b] {
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "image grid",
                    left: shape.clone(),
                    right: t.shape().to_vec(),
                });
            }
        }
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let width = 2 * w + GUTTER;
    let height = pairs.len() * h + (pairs.len() - 1) * GUTTER;
    let mut data = vec![1.0; c * height * width];
    for (row, (seed, test)) in pairs.iter().enumerate() {
        let top = row * (h + GUTTER);
        for (img, left) in [(seed, 0), (test, w + GUTTER)] {
            let src = img.data();
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data[ch * height * width + (top + y) * width + left + x] = src[ch * h * w + y * w + x];
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, height, width], data)
}

/// Writes [`image_grid`] as a binary PPM.
pub fn emit_image_grid(pairs: &[(&Tensor, &Tensor)], path: &Path) -> Result<()> {
    write_ppm(path, &image_grid(pairs)?)
}
