use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

const FORMAT: &str = "f64-le-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    /// Length in bytes.
    pub length: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    blob: String,
    total_bytes: usize,
    meta: serde_json::Value,
    tensors: Vec<ManifestEntry>,
}

/// Named tensors plus free-form metadata, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

fn blob_path_for(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `<manifest>` (JSON) and a sibling `.bin` blob of little-endian f64s.
pub fn save_checkpoint(
    manifest_path: &Path,
    tensors: &[(&str, &Tensor)],
    meta: serde_json::Value,
) -> Result<()> {
    let blob_path = blob_path_for(manifest_path);
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        let offset = blob.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(ManifestEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            length: blob.len() - offset,
        });
    }
    let blob_name = blob_path
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| {
            Error::Checkpoint(format!("bad checkpoint path {}", manifest_path.display()))
        })?
        .to_string();
    let manifest = Manifest {
        format: FORMAT.to_string(),
        blob: blob_name,
        total_bytes: blob.len(),
        meta,
        tensors: entries,
    };
    fs::write(&blob_path, &blob)?;
    fs::write(manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(manifest_path: &Path) -> Result<Checkpoint> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "unsupported format `{}`",
            manifest.format
        )));
    }
    let blob_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let blob = fs::read(&blob_path)?;
    if blob.len() != manifest.total_bytes {
        return Err(Error::Checkpoint(format!(
            "blob {} has {} bytes, manifest expects {}",
            blob_path.display(),
            blob.len(),
            manifest.total_bytes
        )));
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in manifest.tensors {
        let n: usize = e.shape.iter().product();
        if e.length != n * 8
            || e.offset
                .checked_add(e.length)
                .is_none_or(|end| end > blob.len())
        {
            return Err(Error::Checkpoint(format!(
                "entry `{}` is out of bounds or mis-sized",
                e.name
            )));
        }
        let data = blob[e.offset..e.offset + e.length]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push((e.name, Tensor::new(e.shape, data)?));
    }
    Ok(Checkpoint {
        meta: manifest.meta,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_length_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let a = Tensor::matrix(2, 2, vec![1.0, -2.5, f64::MIN_POSITIVE, 1e300]).unwrap();
        let b = Tensor::vector(vec![0.1, 0.2, 0.3]);
        save_checkpoint(
            &path,
            &[("a", &a), ("b", &b)],
            serde_json::json!({"dim": 2}),
        )
        .unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.meta["dim"], 2);
        assert_eq!(ck.tensors[0], ("a".to_string(), a));
        assert_eq!(ck.tensors[1], ("b".to_string(), b));

        let blob = dir.path().join("model.bin");
        let mut bytes = fs::read(&blob).unwrap();
        bytes.pop();
        fs::write(&blob, bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("bytes"), "{err}");
    }
}
