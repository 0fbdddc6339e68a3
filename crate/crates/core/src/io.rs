//! On-disk formats.
//!
//! Volumes are a JSON sidecar `<name>.vol.json` plus `<name>.vol.raw`
//! holding 32-bit little-endian floats in x-fastest order. Everything else is
//! plain JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Volume};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: Vec<usize>,
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: String,
}

/// Resolves `x.vol`, `x.vol.json` or `x.vol.raw` to the stem `x.vol`.
pub fn volume_stem(path: &Path) -> PathBuf {
    let s = path.to_string_lossy();
    for suffix in [".json", ".raw"] {
        if let Some(stem) = s.strip_suffix(suffix) {
            if stem.ends_with(".vol") {
                return PathBuf::from(stem);
            }
        }
    }
    if s.ends_with(".vol") {
        path.to_path_buf()
    } else {
        PathBuf::from(format!("{s}.vol"))
    }
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}{suffix}", stem.to_string_lossy()))
}

/// Writes `<stem>.json` and `<stem>.raw` for data of any shape.
pub fn write_raw_f32(
    stem: &Path,
    dims: &[usize],
    spacing: [f64; 3],
    origin: [f64; 3],
    data: &[f64],
) -> Result<()> {
    let header = VolumeHeader {
        dims: dims.to_vec(),
        spacing_mm: spacing,
        origin_mm: origin,
        dtype: "f32le".into(),
    };
    if let Some(parent) = stem.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_json(&with_suffix(stem, ".json"), &header)?;
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for &v in data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(with_suffix(stem, ".raw"), bytes)?;
    Ok(())
}

pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    let stem = volume_stem(path);
    write_raw_f32(&stem, &vol.dims(), vol.spacing(), vol.origin(), vol.data())
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let stem = volume_stem(path);
    let json_path = with_suffix(&stem, ".json");
    let header: VolumeHeader = read_json(&json_path)?;
    let fail = |message: String| Error::Format {
        path: json_path.clone(),
        message,
    };
    if header.dtype != "f32le" {
        return Err(fail(format!("unsupported dtype {:?}", header.dtype)));
    }
    if header.dims.len() != 3 {
        return Err(fail(format!("expected 3 dims, got {}", header.dims.len())));
    }
    let raw_path = with_suffix(&stem, ".raw");
    let bytes = fs::read(&raw_path)?;
    let expected = header.dims.iter().product::<usize>() * 4;
    if bytes.len() != expected {
        return Err(Error::Format {
            path: raw_path,
            message: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let dims = [header.dims[0], header.dims[1], header.dims[2]];
    Volume::new(dims, header.spacing_mm, header.origin_mm, data)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stem_resolution() {
        assert_eq!(volume_stem(Path::new("a/m.vol")), PathBuf::from("a/m.vol"));
        assert_eq!(
            volume_stem(Path::new("a/m.vol.json")),
            PathBuf::from("a/m.vol")
        );
        assert_eq!(
            volume_stem(Path::new("a/m.vol.raw")),
            PathBuf::from("a/m.vol")
        );
        assert_eq!(volume_stem(Path::new("a/m")), PathBuf::from("a/m.vol"));
    }

    #[test]
    fn volume_round_trip_through_f32() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..24).map(|v| v as f64 * 0.25 - 1.0).collect();
        let vol = Volume::new([2, 3, 4], [0.4, 0.5, 0.6], [1.0, 2.0, 3.0], data).unwrap();
        let path = dir.path().join("img.vol");
        write_volume(&path, &vol).unwrap();
        let raw = fs::read(dir.path().join("img.vol.raw")).unwrap();
        assert_eq!(raw.len(), 24 * 4);
        assert_eq!(&raw[4..8], &(-0.75f32).to_le_bytes());
        let back = read_volume(&dir.path().join("img.vol.json")).unwrap();
        assert_eq!(back, vol);
    }

    #[test]
    fn truncated_raw_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let vol = Volume::filled([2, 2, 2], [1.0; 3], [0.0; 3], 1.0).unwrap();
        let path = dir.path().join("v.vol");
        write_volume(&path, &vol).unwrap();
        fs::write(dir.path().join("v.vol.raw"), [0u8; 12]).unwrap();
        assert!(matches!(read_volume(&path), Err(Error::Format { .. })));
    }
}
