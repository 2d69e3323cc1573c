//! `SAMM0001` container: an 8-byte magic, a little-endian `u64` header
//! length, a UTF-8 JSON header, then every array as raw little-endian
//! `f64` values in header order.
//!
//! The JSON header carries only integers and strings. All real-valued
//! data lives in the binary payload so a round trip is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::appearance::{AppearanceModel, TextureModel};
use crate::error::{Error, Result};
use crate::shape::ShapeModel;

use super::{ImagingMode, Sex};

const MAGIC: &[u8; 8] = b"SAMM0001";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Shape,
    Texture,
    Appearance,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Shape => "shape",
            ModelKind::Texture => "texture",
            ModelKind::Appearance => "appearance",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    sex: Sex,
    mode: Option<ImagingMode>,
    n_points: usize,
    frame_dims: Option<[usize; 2]>,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

/// Decoded container contents: typed header fields, free-form integer
/// and string metadata, and named `f64` arrays (column-major).
#[derive(Debug, Clone, PartialEq)]
pub struct ContainerBlocks {
    pub kind: ModelKind,
    pub sex: Sex,
    pub mode: Option<ImagingMode>,
    pub n_points: usize,
    pub frame_dims: Option<[usize; 2]>,
    pub meta: serde_json::Value,
    arrays: Vec<(ArrayEntry, Vec<f64>)>,
}

impl ContainerBlocks {
    pub fn new(kind: ModelKind, sex: Sex, mode: Option<ImagingMode>, n_points: usize) -> Self {
        Self {
            kind,
            sex,
            mode,
            n_points,
            frame_dims: None,
            meta: serde_json::Value::Object(Default::default()),
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) {
        debug_assert_eq!(rows * cols, data.len());
        self.arrays.push((
            ArrayEntry {
                name: name.into(),
                rows,
                cols,
            },
            data,
        ));
    }

    /// Returns `(rows, cols, data)` of the named array.
    pub fn array(&self, name: &str) -> Result<(usize, usize, &[f64])> {
        self.arrays
            .iter()
            .find(|(e, _)| e.name == name)
            .map(|(e, d)| (e.rows, e.cols, d.as_slice()))
            .ok_or_else(|| Error::invalid(format!("model file lacks array {name:?}")))
    }

    pub fn set_meta(&mut self, key: &str, value: serde_json::Value) {
        if let serde_json::Value::Object(map) = &mut self.meta {
            map.insert(key.to_string(), value);
        }
    }

    pub fn meta<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::invalid(format!("model file lacks metadata {key:?}")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::invalid(format!("bad metadata {key:?}: {e}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind,
            sex: self.sex,
            mode: self.mode,
            n_points: self.n_points,
            frame_dims: self.frame_dims,
            meta: self.meta.clone(),
            arrays: self.arrays.iter().map(|(e, _)| e.clone()).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::invalid(format!("cannot encode header: {e}")))?;
        let payload_len: usize = self.arrays.iter().map(|(_, d)| d.len() * 8).sum();
        let mut out = Vec::with_capacity(16 + json.len() + payload_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, data) in &self.arrays {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() >= 8 && &bytes[..8] != MAGIC {
            return Err(Error::BadMagic {
                found: String::from_utf8_lossy(&bytes[..8]).into_owned(),
            });
        }
        if bytes.len() < 16 {
            return Err(Error::Truncated(format!("{} bytes is shorter than the fixed preamble", bytes.len())));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8-byte slice")) as usize;
        let header_bytes = bytes
            .get(16..16usize.saturating_add(header_len))
            .ok_or_else(|| Error::Truncated("header extends past end of file".into()))?;
        let header: Header =
            serde_json::from_slice(header_bytes).map_err(|e| Error::invalid(format!("malformed model header: {e}")))?;
        let mut pos = 16 + header_len;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for entry in header.arrays {
            let n = entry.rows * entry.cols;
            let raw = bytes
                .get(pos..pos + n * 8)
                .ok_or_else(|| Error::Truncated(format!("array {:?} extends past end of file", entry.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            pos += n * 8;
            arrays.push((entry, data));
        }
        if pos != bytes.len() {
            return Err(Error::invalid(format!("{} trailing bytes after payload", bytes.len() - pos)));
        }
        Ok(Self {
            kind: header.kind,
            sex: header.sex,
            mode: header.mode,
            n_points: header.n_points,
            frame_dims: header.frame_dims,
            meta: header.meta,
            arrays,
        })
    }
}

/// Any persisted model.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Shape(ShapeModel),
    Texture(TextureModel),
    Appearance(AppearanceModel),
}

impl SavedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            SavedModel::Shape(_) => ModelKind::Shape,
            SavedModel::Texture(_) => ModelKind::Texture,
            SavedModel::Appearance(_) => ModelKind::Appearance,
        }
    }

    pub fn to_blocks(&self) -> ContainerBlocks {
        match self {
            SavedModel::Shape(m) => m.to_blocks(),
            SavedModel::Texture(m) => m.to_blocks(),
            SavedModel::Appearance(m) => m.to_blocks(),
        }
    }

    pub fn from_blocks(blocks: &ContainerBlocks) -> Result<Self> {
        Ok(match blocks.kind {
            ModelKind::Shape => SavedModel::Shape(ShapeModel::from_blocks(blocks)?),
            ModelKind::Texture => SavedModel::Texture(TextureModel::from_blocks(blocks)?),
            ModelKind::Appearance => SavedModel::Appearance(AppearanceModel::from_blocks(blocks)?),
        })
    }
}

impl From<ShapeModel> for SavedModel {
    fn from(m: ShapeModel) -> Self {
        SavedModel::Shape(m)
    }
}

impl From<TextureModel> for SavedModel {
    fn from(m: TextureModel) -> Self {
        SavedModel::Texture(m)
    }
}

impl From<AppearanceModel> for SavedModel {
    fn from(m: AppearanceModel) -> Self {
        SavedModel::Appearance(m)
    }
}

pub fn write_model(model: &SavedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = model.to_blocks().to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads and validates a model; eigenvalue ordering and eigenvector
/// orthonormality are re-checked.
pub fn read_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let blocks = ContainerBlocks::from_bytes(&bytes)?;
    SavedModel::from_blocks(&blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_blocks() -> ContainerBlocks {
        let mut b = ContainerBlocks::new(ModelKind::Shape, Sex::F, None, 3);
        b.set_meta("ids", serde_json::json!(["a", "b"]));
        b.push("x", 2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 1.0 / 3.0]);
        b.push("y", 1, 1, vec![0.1]);
        b
    }

    #[test]
    fn bytes_round_trip_is_exact() {
        let b = sample_blocks();
        let bytes = b.to_bytes().unwrap();
        let back = ContainerBlocks::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let (_, _, x) = back.array("x").unwrap();
        assert_eq!(x[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back.meta::<Vec<String>>("ids").unwrap(), vec!["a", "b"]);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = sample_blocks().to_bytes().unwrap();
        bytes[..8].copy_from_slice(b"XXXX0001");
        assert!(matches!(ContainerBlocks::from_bytes(&bytes), Err(Error::BadMagic { .. })));
        assert!(ContainerBlocks::from_bytes(&bytes).unwrap_err().to_string().contains("bad magic"));
    }

    #[test]
    fn truncated() {
        let bytes = sample_blocks().to_bytes().unwrap();
        for cut in [10, 20, bytes.len() - 3] {
            assert!(matches!(ContainerBlocks::from_bytes(&bytes[..cut]), Err(Error::Truncated(_))), "cut {cut}");
        }
    }
}
