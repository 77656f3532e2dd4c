//! On-disk formats: datasets as plain text, partitions as JSON, model
//! checkpoints as a JSON manifest plus a little-endian `f64` payload.
//!
//! Dataset text: a header line `d C n`, then one line per sample,
//! `label v1 ... vd`. Values are printed in their shortest round-trip form
//! (exponent notation for very large or small magnitudes), independent of
//! locale.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fedgnp_core::datagen::{Dataset, Partition};
use fedgnp_core::model::{MlpClassifier, ModelDims, PeftMask};
use fedgnp_core::tensorlab::{Matrix, ParamSet};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub fn dataset_to_string(ds: &Dataset) -> String {
    let mut out = String::new();
    writeln!(out, "{} {} {}", ds.dim(), ds.classes(), ds.len()).unwrap();
    for i in 0..ds.len() {
        write!(out, "{}", ds.label(i)).unwrap();
        for v in ds.features(i) {
            write!(out, " {v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_dataset(text: &str, name: &str, path: &Path) -> Result<Dataset> {
    let bad = |line: usize, msg: String| HarnessError::format(path, format!("line {line}: {msg}"));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
    let head: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| bad(1, format!("header: {e}")))?;
    let [dim, classes, n] = head[..] else {
        return Err(bad(1, format!("header must be `d C n`, got `{header}`")));
    };
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (idx, line) in lines {
        let lineno = idx + 1;
        let mut fields = line.split_whitespace();
        let label: usize = fields
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|e| bad(lineno, format!("label: {e}")))?;
        let before = features.len();
        for f in fields {
            features.push(f.parse::<f64>().map_err(|e| bad(lineno, format!("`{f}`: {e}")))?);
        }
        if features.len() - before != dim {
            return Err(bad(
                lineno,
                format!("expected {dim} features, got {}", features.len() - before),
            ));
        }
        labels.push(label);
    }
    if labels.len() != n {
        return Err(HarnessError::format(
            path,
            format!("header declares {n} samples, found {}", labels.len()),
        ));
    }
    Dataset::new(name, dim, classes, features, labels)
        .map_err(|e| HarnessError::format(path, e.to_string()))
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    fs::write(path, dataset_to_string(ds)).map_err(HarnessError::io(path))
}

/// The dataset name is taken from the file stem.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(HarnessError::io(path))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_dataset(&text, &name, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionFile {
    pub alpha: f64,
    pub seed: u64,
    pub clients: Vec<Vec<usize>>,
}

impl From<&Partition> for PartitionFile {
    fn from(p: &Partition) -> Self {
        PartitionFile {
            alpha: p.alpha,
            seed: p.seed,
            clients: p.client_indices.clone(),
        }
    }
}

impl From<PartitionFile> for Partition {
    fn from(p: PartitionFile) -> Self {
        Partition {
            client_indices: p.clients,
            alpha: p.alpha,
            seed: p.seed,
        }
    }
}

pub fn partition_to_json(p: &Partition) -> String {
    serde_json::to_string(&PartitionFile::from(p)).expect("partition serializes")
}

pub fn write_partition(path: &Path, p: &Partition) -> Result<()> {
    fs::write(path, partition_to_json(p) + "\n").map_err(HarnessError::io(path))
}

pub fn read_partition(path: &Path) -> Result<Partition> {
    let text = fs::read_to_string(path).map_err(HarnessError::io(path))?;
    let file: PartitionFile =
        serde_json::from_str(&text).map_err(|e| HarnessError::format(path, e.to_string()))?;
    Ok(file.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub mask: String,
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    /// Payload file name, relative to the manifest.
    pub payload: String,
    pub tensors: Vec<TensorEntry>,
}

fn payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `<stem>.json` and `<stem>.bin` next to each other.
pub fn save_checkpoint(manifest_path: &Path, model: &MlpClassifier) -> Result<()> {
    let bin = payload_path(manifest_path);
    let dims = model.dims();
    let mut payload = Vec::with_capacity(model.params().num_values() * 8);
    let mut tensors = Vec::new();
    for (name, t) in model.params().iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            rows: t.rows(),
            cols: t.cols(),
            trainable: model.params().is_trainable(name),
        });
        for v in t.as_slice() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        mask: model.mask().to_string(),
        input: dims.input,
        hidden: dims.hidden,
        classes: dims.classes,
        payload: bin
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        tensors,
    };
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(manifest_path, json).map_err(HarnessError::io(manifest_path))?;
    fs::write(&bin, payload).map_err(HarnessError::io(&bin))
}

pub fn load_checkpoint(manifest_path: &Path) -> Result<MlpClassifier> {
    let text = fs::read_to_string(manifest_path).map_err(HarnessError::io(manifest_path))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| HarnessError::format(manifest_path, e.to_string()))?;
    let bin = manifest_path.with_file_name(&manifest.payload);
    let bytes = fs::read(&bin).map_err(HarnessError::io(&bin))?;
    let expected: usize = manifest.tensors.iter().map(|t| t.rows * t.cols * 8).sum();
    if bytes.len() != expected {
        return Err(HarnessError::format(
            &bin,
            format!("payload has {} bytes, manifest needs {expected}", bytes.len()),
        ));
    }
    let mask: PeftMask = manifest
        .mask
        .parse()
        .map_err(|e: fedgnp_core::Error| HarnessError::format(manifest_path, e.to_string()))?;
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut params = ParamSet::new();
    for t in &manifest.tensors {
        let data: Vec<f64> = values.by_ref().take(t.rows * t.cols).collect();
        let m = Matrix::new(t.rows, t.cols, data)
            .map_err(|e| HarnessError::format(&bin, format!("{}: {e}", t.name)))?;
        params.insert(t.name.clone(), m, t.trainable);
    }
    let dims = ModelDims {
        input: manifest.input,
        hidden: manifest.hidden,
        classes: manifest.classes,
    };
    let model = MlpClassifier::from_params(dims, mask, params)
        .map_err(|e| HarnessError::format(manifest_path, e.to_string()))?;
    for t in &manifest.tensors {
        if model.params().is_trainable(&t.name) != t.trainable {
            return Err(HarnessError::format(
                manifest_path,
                format!("trainable flag of `{}` disagrees with mask {mask}", t.name),
            ));
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_text_layout() {
        let ds = Dataset::new("t", 2, 3, vec![0.5, -1.0, 1e-300, 2.0], vec![2, 0]).unwrap();
        let text = dataset_to_string(&ds);
        assert_eq!(text, "2 3 2\n2 0.5 -1.0\n0 1e-300 2.0\n");
        let back = parse_dataset(&text, "t", Path::new("t.txt")).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn dataset_parse_errors_name_the_line() {
        let p = Path::new("x.txt");
        let err = parse_dataset("2 3 1\n0 1.0\n", "x", p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = parse_dataset("2 3 2\n0 1 2\n", "x", p).unwrap_err().to_string();
        assert!(err.contains("declares 2"), "{err}");
        let err = parse_dataset("2 3 1\n5 1 2\n", "x", p).unwrap_err().to_string();
        assert!(err.contains("x.txt"), "{err}");
        assert!(parse_dataset("", "x", p).is_err());
    }

    #[test]
    fn partition_json_shape() {
        let p = Partition {
            client_indices: vec![vec![0, 2], vec![1]],
            alpha: 0.5,
            seed: 3,
        };
        assert_eq!(
            partition_to_json(&p),
            r#"{"alpha":0.5,"seed":3,"clients":[[0,2],[1]]}"#
        );
    }
}
