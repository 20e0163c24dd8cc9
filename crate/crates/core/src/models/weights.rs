//! Binary tensor archive used for model weights and lossless image bundles.
//!
//! Layout (all integers little-endian `u32`, no padding):
//! `"NNW1"`, tensor count, then per tensor: name length, UTF-8 name, rank,
//! `rank` dims, and `product(dims)` little-endian `f64` values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::models::classifier::{ClassifierArch, ClassifierModel};
use crate::models::dense::{Activation, DenseLayer};
use crate::models::discriminator::{DiscriminatorArch, DiscriminatorModel};
use crate::models::generator::{GeneratorArch, GeneratorModel};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NNW1";

pub fn encode_tensors(tensors: &[(String, Tensor)]) -> Vec<u8> {
    let payload: usize = tensors
        .iter()
        .map(|(n, t)| 8 + n.len() + 4 * t.rank() + 8 * t.len())
        .sum();
    let mut out = Vec::with_capacity(8 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, tensor: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                tensor: tensor.to_string(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, tensor: &str) -> Result<u32> {
        let b = self.take(4, tensor)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

pub fn decode_tensors(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    let mut r = Reader {
        bytes,
        pos: 4,
        path,
    };
    let count = r.u32("<header>")? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let placeholder = format!("#{i}");
        let name_len = r.u32(&placeholder)? as usize;
        let name = std::str::from_utf8(r.take(name_len, &placeholder)?)
            .map_err(|_| Error::Format {
                path: path.to_path_buf(),
                detail: format!("tensor {placeholder} has a non-UTF-8 name"),
            })?
            .to_string();
        let rank = r.u32(&name)? as usize;
        let mut dims = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            dims.push(r.u32(&name)? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| rank > 0 && n > 0)
            .ok_or_else(|| Error::ShapeTable {
                path: path.to_path_buf(),
                detail: format!("tensor {name} has invalid dims {dims:?}"),
            })?;
        let byte_len = numel.checked_mul(8).ok_or_else(|| Error::ShapeTable {
            path: path.to_path_buf(),
            detail: format!("tensor {name} is too large"),
        })?;
        let raw = r.take(byte_len, &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name, Tensor::new(dims, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::ShapeTable {
            path: path.to_path_buf(),
            detail: format!("{} trailing bytes after last tensor", bytes.len() - r.pos),
        });
    }
    Ok(tensors)
}

pub fn write_tensors(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    std::fs::write(path, encode_tensors(tensors)).map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensors(&bytes, path)
}

/// A model that round-trips through the tensor archive.
pub trait WeightsFile: Sized {
    fn to_tensors(&self) -> Vec<(String, Tensor)>;
    fn from_tensors(tensors: Vec<(String, Tensor)>, path: &Path) -> Result<Self>;
}

pub fn save_weights<M: WeightsFile>(model: &M, path: &Path) -> Result<()> {
    write_tensors(path, &model.to_tensors())
}

pub fn load_weights<M: WeightsFile>(path: &Path) -> Result<M> {
    M::from_tensors(read_tensors(path)?, path)
}

const KIND_GENERATOR: f64 = 1.0;
const KIND_CLASSIFIER: f64 = 2.0;
const KIND_DISCRIMINATOR: f64 = 3.0;

fn layer_tensors(meta: Vec<f64>, layers: &[DenseLayer]) -> Vec<(String, Tensor)> {
    let mut out = vec![("meta".to_string(), Tensor::vector(meta))];
    for (i, l) in layers.iter().enumerate() {
        out.push((format!("layer{i}.weight"), (**l.weight()).clone()));
        out.push((format!("layer{i}.bias"), (**l.bias()).clone()));
    }
    out
}

struct Parsed {
    meta: Vec<f64>,
    layers: Vec<(Tensor, Tensor)>,
}

fn parse_layers(tensors: Vec<(String, Tensor)>, path: &Path, kind: f64) -> Result<Parsed> {
    let mut meta = None;
    let mut weights = std::collections::BTreeMap::new();
    let mut biases = std::collections::BTreeMap::new();
    let bad = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    for (name, t) in tensors {
        if name == "meta" {
            meta = Some(t.into_data());
        } else if let Some(rest) = name.strip_prefix("layer") {
            let (idx, part) = rest
                .split_once('.')
                .ok_or_else(|| bad(format!("unexpected tensor name {name}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| bad(format!("unexpected tensor name {name}")))?;
            match part {
                "weight" => weights.insert(idx, t),
                "bias" => biases.insert(idx, t),
                _ => return Err(bad(format!("unexpected tensor name {name}"))),
            };
        } else {
            return Err(bad(format!("unexpected tensor name {name}")));
        }
    }
    let meta = meta.ok_or_else(|| Error::MissingTensor {
        path: path.to_path_buf(),
        name: "meta".into(),
    })?;
    if meta.first() != Some(&kind) {
        return Err(bad(format!("model kind {:?} does not match expected {kind}", meta.first())));
    }
    let mut layers = Vec::with_capacity(weights.len());
    for i in 0..weights.len() {
        let w = weights.remove(&i).ok_or_else(|| Error::MissingTensor {
            path: path.to_path_buf(),
            name: format!("layer{i}.weight"),
        })?;
        let b = biases.remove(&i).ok_or_else(|| Error::MissingTensor {
            path: path.to_path_buf(),
            name: format!("layer{i}.bias"),
        })?;
        layers.push((w, b));
    }
    if !biases.is_empty() || layers.is_empty() {
        return Err(bad("weight and bias tensors do not pair up".into()));
    }
    Ok(Parsed { meta, layers })
}

fn meta_usize(meta: &[f64], i: usize, path: &Path) -> Result<usize> {
    meta.get(i)
        .filter(|v| v.fract() == 0.0 && **v >= 0.0)
        .map(|&v| v as usize)
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            detail: format!("meta entry {i} missing or not an integer"),
        })
}

fn image_shape(meta: &[f64], from: usize, path: &Path) -> Result<[usize; 3]> {
    Ok([
        meta_usize(meta, from, path)?,
        meta_usize(meta, from + 1, path)?,
        meta_usize(meta, from + 2, path)?,
    ])
}

fn hidden_widths(layers: &[(Tensor, Tensor)]) -> Vec<usize> {
    layers[..layers.len() - 1]
        .iter()
        .map(|(w, _)| w.shape().get(1).copied().unwrap_or(0))
        .collect()
}

fn build_layers(
    layers: Vec<(Tensor, Tensor)>,
    act: impl Fn(usize, usize) -> Activation,
) -> Result<Vec<DenseLayer>> {
    let n = layers.len();
    layers
        .into_iter()
        .enumerate()
        .map(|(i, (w, b))| DenseLayer::new(w, b, act(i, n)))
        .collect()
}

impl WeightsFile for GeneratorModel {
    fn to_tensors(&self) -> Vec<(String, Tensor)> {
        let a = self.arch();
        let meta = vec![
            KIND_GENERATOR,
            a.latent_dim as f64,
            a.classes as f64,
            a.image_shape[0] as f64,
            a.image_shape[1] as f64,
            a.image_shape[2] as f64,
        ];
        layer_tensors(meta, self.layers())
    }

    fn from_tensors(tensors: Vec<(String, Tensor)>, path: &Path) -> Result<Self> {
        let p = parse_layers(tensors, path, KIND_GENERATOR)?;
        let arch = GeneratorArch {
            latent_dim: meta_usize(&p.meta, 1, path)?,
            classes: meta_usize(&p.meta, 2, path)?,
            image_shape: image_shape(&p.meta, 3, path)?,
            hidden: hidden_widths(&p.layers),
        };
        let layers = build_layers(p.layers, |i, n| {
            if i + 1 == n {
                Activation::Sigmoid
            } else {
                Activation::Tanh
            }
        })?;
        GeneratorModel::from_layers(arch, layers)
    }
}

impl WeightsFile for ClassifierModel {
    fn to_tensors(&self) -> Vec<(String, Tensor)> {
        let a = self.arch();
        let meta = vec![
            KIND_CLASSIFIER,
            a.classes as f64,
            a.image_shape[0] as f64,
            a.image_shape[1] as f64,
            a.image_shape[2] as f64,
        ];
        layer_tensors(meta, self.layers())
    }

    fn from_tensors(tensors: Vec<(String, Tensor)>, path: &Path) -> Result<Self> {
        let p = parse_layers(tensors, path, KIND_CLASSIFIER)?;
        let arch = ClassifierArch {
            classes: meta_usize(&p.meta, 1, path)?,
            image_shape: image_shape(&p.meta, 2, path)?,
            hidden: hidden_widths(&p.layers),
        };
        let layers = build_layers(p.layers, |i, n| {
            if i + 1 == n {
                Activation::Identity
            } else {
                Activation::Relu
            }
        })?;
        ClassifierModel::from_layers(arch, layers)
    }
}

impl WeightsFile for DiscriminatorModel {
    fn to_tensors(&self) -> Vec<(String, Tensor)> {
        let a = self.arch();
        let meta = vec![
            KIND_DISCRIMINATOR,
            a.classes as f64,
            a.image_shape[0] as f64,
            a.image_shape[1] as f64,
            a.image_shape[2] as f64,
        ];
        layer_tensors(meta, self.layers())
    }

    fn from_tensors(tensors: Vec<(String, Tensor)>, path: &Path) -> Result<Self> {
        let p = parse_layers(tensors, path, KIND_DISCRIMINATOR)?;
        let arch = DiscriminatorArch {
            classes: meta_usize(&p.meta, 1, path)?,
            image_shape: image_shape(&p.meta, 2, path)?,
            hidden: hidden_widths(&p.layers),
        };
        let layers = build_layers(p.layers, |i, n| {
            if i + 1 == n {
                Activation::Identity
            } else {
                Activation::Relu
            }
        })?;
        DiscriminatorModel::from_layers(arch, layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;

    fn sample() -> Vec<(String, Tensor)> {
        vec![
            ("a".into(), Tensor::vector(vec![1.5, -0.0, f64::MIN_POSITIVE])),
            ("bb".into(), Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap()),
        ]
    }

    #[test]
    fn byte_layout_is_exact() {
        let bytes = encode_tensors(&[("w".into(), Tensor::vector(vec![1.0]))]);
        let mut want = b"NNW1".to_vec();
        want.extend(1u32.to_le_bytes());
        want.extend(1u32.to_le_bytes());
        want.push(b'w');
        want.extend(1u32.to_le_bytes());
        want.extend(1u32.to_le_bytes());
        want.extend(1.0f64.to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_tensors(&sample());
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            decode_tensors(&bytes, Path::new("x")),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn truncation_names_tensor() {
        let bytes = encode_tensors(&sample());
        let cut = &bytes[..bytes.len() - 4];
        match decode_tensors(cut, Path::new("x")) {
            Err(Error::Truncated { tensor, .. }) => assert_eq!(tensor, "bb"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_are_a_shape_table_error() {
        let mut bytes = encode_tensors(&sample());
        bytes.extend([0u8; 8]);
        assert!(matches!(
            decode_tensors(&bytes, Path::new("x")),
            Err(Error::ShapeTable { .. })
        ));
    }

    #[test]
    fn zero_dim_is_a_shape_table_error() {
        let mut bytes = b"NNW1".to_vec();
        bytes.extend(1u32.to_le_bytes());
        bytes.extend(1u32.to_le_bytes());
        bytes.push(b'z');
        bytes.extend(1u32.to_le_bytes());
        bytes.extend(0u32.to_le_bytes());
        assert!(matches!(
            decode_tensors(&bytes, Path::new("x")),
            Err(Error::ShapeTable { .. })
        ));
    }

    #[test]
    fn generator_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.nnw");
        let mut rng = Rng::new(9);
        let g = GeneratorModel::new(GeneratorArch::default(), &mut rng).unwrap();
        save_weights(&g, &path).unwrap();
        let back: GeneratorModel = load_weights(&path).unwrap();
        assert_eq!(back.arch(), g.arch());
        for (a, b) in g.to_tensors().iter().zip(back.to_tensors().iter()) {
            assert_eq!(a.0, b.0);
            assert!(a.1.bit_eq(&b.1));
        }
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.nnw");
        let mut rng = Rng::new(9);
        let c = ClassifierModel::new(ClassifierArch::default(), &mut rng).unwrap();
        save_weights(&c, &path).unwrap();
        assert!(load_weights::<GeneratorModel>(&path).is_err());
        let back: ClassifierModel = load_weights(&path).unwrap();
        assert_eq!(back.arch(), c.arch());
    }
}
