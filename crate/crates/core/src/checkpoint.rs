//! Model checkpoints: a directory with `manifest.json` plus one raw
//! little-endian `float32` file per parameter tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::{Hyper, ModelBundle};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "mixgan-checkpoint/1";

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: [usize; 2],
    dtype: String,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    params: Vec<ParamEntry>,
    shared_aliases: Vec<(String, String)>,
    hyper: Hyper,
}

fn file_name(param: &str) -> String {
    format!("{param}.f32")
}

pub fn save(bundle: &ModelBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(bundle.params.len());
    for (name, m) in &bundle.params {
        let mut bytes = Vec::with_capacity(m.data.len() * 4);
        for &v in &m.data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let file = file_name(name);
        fs::write(dir.join(&file), bytes)?;
        entries.push(ParamEntry {
            name: name.clone(),
            shape: [m.rows, m.cols],
            dtype: "float32".into(),
            file,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        params: entries,
        shared_aliases: bundle.shared_aliases.clone(),
        hyper: bundle.hyper.clone(),
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<ModelBundle> {
    let path = dir.join(MANIFEST);
    let manifest: Manifest = serde_json::from_slice(&fs::read(&path)?)?;
    if manifest.format != FORMAT {
        return Err(Error::malformed(path, format!("unknown format `{}`", manifest.format)));
    }
    let mut bundle = ModelBundle {
        shared_aliases: manifest.shared_aliases,
        hyper: manifest.hyper,
        ..Default::default()
    };
    for e in manifest.params {
        if e.dtype != "float32" {
            return Err(Error::malformed(&path, format!("unsupported dtype `{}`", e.dtype)));
        }
        let fpath = dir.join(&e.file);
        let bytes = fs::read(&fpath)?;
        let [rows, cols] = e.shape;
        if bytes.len() != rows * cols * 4 {
            return Err(Error::malformed(
                fpath,
                format!("expected {} bytes, found {}", rows * cols * 4, bytes.len()),
            ));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        bundle.params.insert(e.name, Matrix::from_vec(rows, cols, data)?);
    }
    if !bundle.aliases_consistent() {
        return Err(Error::malformed(path, "aliased tensors differ"));
    }
    Ok(bundle)
}

/// Rounds every parameter to `float32` precision, matching a save/load cycle.
pub fn quantize(bundle: &mut ModelBundle) {
    for m in bundle.params.values_mut() {
        for v in &mut m.data {
            *v = *v as f32 as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_preserves_values_and_aliases() {
        let mut b = ModelBundle::default();
        b.params.insert("x.w".into(), Matrix::from_vec(2, 2, vec![0.1, -2.5, 3.0, 1e-3]).unwrap());
        b.params.insert("y.w".into(), Matrix::from_vec(2, 2, vec![0.1, -2.5, 3.0, 1e-3]).unwrap());
        b.shared_aliases.push(("x.w".into(), "y.w".into()));
        b.hyper.iteration = 42;
        let dir = tempfile::tempdir().unwrap();
        save(&b, dir.path()).unwrap();
        let loaded = load(dir.path()).unwrap();
        quantize(&mut b);
        assert_eq!(loaded, b);
        assert!(loaded.aliases_consistent());
        assert_eq!(loaded.hyper.iteration, 42);
    }

    #[test]
    fn truncated_tensor_file_is_rejected() {
        let mut b = ModelBundle::default();
        b.params.insert("w".into(), Matrix::zeros(2, 3));
        let dir = tempfile::tempdir().unwrap();
        save(&b, dir.path()).unwrap();
        std::fs::write(dir.path().join("w.f32"), [0u8; 4]).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Malformed { .. })));
    }
}
