//! Binary array container: a little-endian `f64` blob plus a JSON manifest.
//!
//! `save("scene.ckpt")` writes `scene.ckpt` (raw data) and
//! `scene.ckpt.json`, a manifest with one `{name, shape, offset}` record per
//! array. Offsets are byte offsets into the blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "fourd-array-container";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub byte_order: String,
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArrayContainer {
    pub arrays: Vec<NamedArray>,
    pub meta: serde_json::Value,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl ArrayContainer {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.arrays.push(NamedArray {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&NamedArray> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("container has no array '{name}'")))
    }

    pub fn to_bytes(&self) -> (Manifest, Vec<u8>) {
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.arrays.len());
        for a in &self.arrays {
            entries.push(ManifestEntry {
                name: a.name.clone(),
                shape: a.shape.clone(),
                offset: blob.len() as u64,
            });
            for v in &a.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            dtype: "f64".into(),
            byte_order: "little".into(),
            entries,
            meta: self.meta.clone(),
        };
        (manifest, blob)
    }

    pub fn from_bytes(manifest: &Manifest, blob: &[u8]) -> Result<Self> {
        if manifest.format != FORMAT_NAME || manifest.dtype != "f64" || manifest.byte_order != "little" {
            return Err(Error::Format(format!(
                "unsupported container ({} / {} / {})",
                manifest.format, manifest.dtype, manifest.byte_order
            )));
        }
        let mut arrays = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let len: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + len * 8;
            let bytes = blob.get(start..end).ok_or_else(|| {
                Error::Format(format!("array '{}' extends past the end of the data", e.name))
            })?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            arrays.push(NamedArray {
                name: e.name.clone(),
                shape: e.shape.clone(),
                data,
            });
        }
        Ok(Self {
            arrays,
            meta: manifest.meta.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let (manifest, blob) = self.to_bytes();
        fs::write(path, blob).map_err(|e| Error::io(path, e))?;
        let mpath = manifest_path(path);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mpath = manifest_path(path);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?;
        let blob = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&manifest, &blob)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 0..40), split in 0usize..40) {
            let split = split.min(values.len());
            let mut c = ArrayContainer::default();
            c.push("a", vec![split], values[..split].to_vec());
            c.push("b.weight", vec![1, values.len() - split], values[split..].to_vec());
            let (m, blob) = c.to_bytes();
            prop_assert_eq!(blob.len(), values.len() * 8);
            prop_assert_eq!(m.entries[1].offset as usize, split * 8);
            let back = ArrayContainer::from_bytes(&m, &blob).unwrap();
            prop_assert_eq!(back, c);
        }
    }

    #[test]
    fn little_endian_layout() {
        let mut c = ArrayContainer::default();
        c.push("x", vec![1], vec![1.0]);
        let (_, blob) = c.to_bytes();
        assert_eq!(blob, 1.0f64.to_le_bytes());
    }

    #[test]
    fn save_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut c = ArrayContainer::default();
        c.push("w", vec![2, 2], vec![1.0, -2.0, 3.5, 0.25]);
        c.meta = serde_json::json!({"kind": "test"});
        c.save(&path).unwrap();
        assert!(manifest_path(&path).exists());
        assert_eq!(ArrayContainer::load(&path).unwrap(), c);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let mut c = ArrayContainer::default();
        c.push("w", vec![3], vec![1.0, 2.0, 3.0]);
        let (m, blob) = c.to_bytes();
        assert!(matches!(ArrayContainer::from_bytes(&m, &blob[..16]), Err(Error::Format(_))));
    }
}
