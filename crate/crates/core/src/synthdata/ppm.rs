//! Binary PPM (P6) images and dataset directories with a text manifest.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::synthdata::dataset::{LabeledDataset, Sample, Split};
use crate::synthdata::scene::{SceneParams, CHANNELS};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.txt";

/// 8-bit encoding of an intensity, `round(255 v)` after clamping to `[0, 1]`.
pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Encodes a `[3, h, w]` tensor as P6 with maxval 255.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != CHANNELS {
        return Err(Error::ShapeMismatch {
            op: "encode_ppm",
            left: shape.to_vec(),
            right: vec![CHANNELS, 0, 0],
        });
    }
    let (h, w) = (shape[1], shape[2]);
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * plane);
    let d = image.data();
    for i in 0..plane {
        for c in 0..CHANNELS {
            out.push(to_byte(d[c * plane + i]));
        }
    }
    Ok(out)
}

/// Decodes a P6 image with maxval 255 into a `[3, h, w]` tensor in `[0, 1]`.
pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let mut pos = 0;
    let mut token = |bytes: &[u8]| -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token(bytes).ok_or_else(|| format_err(path, "empty file"))?;
    if magic != "P6" {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic.into_bytes(),
        });
    }
    let mut number = |what: &str| -> Result<usize> {
        token(bytes)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| format_err(path, format!("bad {what} in header")))
    };
    let (w, h, maxval) = (number("width")?, number("height")?, number("maxval")?);
    if maxval != 255 {
        return Err(format_err(path, format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let plane = w * h;
    let raster = bytes
        .get(start..)
        .filter(|r| r.len() == 3 * plane)
        .ok_or_else(|| format_err(path, format!("raster is not {w}x{h}x3 bytes")))?;
    let mut data = vec![0.0; 3 * plane];
    for i in 0..plane {
        for c in 0..CHANNELS {
            data[c * plane + i] = f64::from(raster[3 * i + c]) / 255.0;
        }
    }
    Tensor::new(vec![CHANNELS, h, w], data)
}

pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, path)
}

fn manifest_line(file: &str, s: &Sample) -> String {
    let p = &s.params;
    format!(
        "{file} {} {:.6} {:.6} {:.6} {:.6} {:.6}\n",
        s.label, p.background_hue, p.object_hue, p.cx, p.cy, p.size
    )
}

/// Writes `NNNNN.ppm` per sample plus a manifest into `dir`.
pub fn export_dataset(data: &LabeledDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (i, s) in data.samples.iter().enumerate() {
        let file = format!("{i:05}.ppm");
        write_ppm(&dir.join(&file), &s.image)?;
        manifest.push_str(&manifest_line(&file, s));
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Reads a directory written by [`export_dataset`]. Images come back
/// quantized to 8 bits and parameters rounded to 6 decimals.
pub fn import_dataset(dir: &Path, split: Split) -> Result<LabeledDataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut samples = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |detail: String| format_err(&path, format!("line {}: {detail}", n + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [file, label, rest @ ..] = fields.as_slice() else {
            return Err(bad("expected 7 fields".into()));
        };
        if rest.len() != 5 {
            return Err(bad(format!("expected 7 fields, got {}", fields.len())));
        }
        let label: usize = label.parse().map_err(|_| bad(format!("bad label {label:?}")))?;
        let mut v = [0.0; 5];
        for (slot, text) in v.iter_mut().zip(rest) {
            *slot = text.parse().map_err(|_| bad(format!("bad number {text:?}")))?;
        }
        samples.push(Sample {
            image: read_ppm(&dir.join(file))?,
            label,
            params: SceneParams {
                class_id: label,
                background_hue: v[0],
                object_hue: v[1],
                cx: v[2],
                cy: v[3],
                size: v[4],
            },
        });
    }
    Ok(LabeledDataset { split, samples })
}
