//! Import of externally computed dense embeddings.
//!
//! On disk: a JSON manifest `{"model_name", "dimension", "count", ...}` and a
//! JSONL vector file with one `{"id": "<bug_id>", "v": [floats]}` per line.
//! The vector file is `vectors` from the manifest when present (relative to
//! the manifest's directory), otherwise `vectors.jsonl` beside it. Extra
//! manifest keys (pooling, max length, ...) are kept as metadata.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::FeatureError;

pub const DEFAULT_VECTOR_FILE: &str = "vectors.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub model_name: String,
    pub dimension: usize,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vectors: Option<String>,
    #[serde(flatten)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub id: String,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    manifest: EmbeddingManifest,
    index: HashMap<String, usize>,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn dimension(&self) -> usize {
        self.manifest.dimension
    }

    pub fn model_name(&self) -> &str {
        &self.manifest.model_name
    }

    pub fn manifest(&self) -> &EmbeddingManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.vectors[i].as_slice())
    }

    /// Validates rows against the manifest.
    pub fn from_rows(manifest: EmbeddingManifest, rows: Vec<EmbeddingRow>) -> Result<Self, FeatureError> {
        if manifest.dimension == 0 {
            return Err(FeatureError::Format("dimension must be positive".into()));
        }
        let mut index = HashMap::with_capacity(rows.len());
        let mut vectors = Vec::with_capacity(rows.len());
        for row in rows {
            if row.v.len() != manifest.dimension {
                return Err(FeatureError::Dimension {
                    bug_id: row.id,
                    expected: manifest.dimension,
                    got: row.v.len(),
                });
            }
            if row.v.iter().any(|x| !x.is_finite()) {
                return Err(FeatureError::NonFinite(row.id));
            }
            if index.insert(row.id.clone(), vectors.len()).is_some() {
                return Err(FeatureError::Duplicate(row.id));
            }
            vectors.push(row.v);
        }
        if vectors.len() != manifest.count {
            return Err(FeatureError::Format(format!(
                "manifest declares {} rows, vector file has {}",
                manifest.count,
                vectors.len()
            )));
        }
        Ok(EmbeddingTable {
            manifest,
            index,
            vectors,
        })
    }
}

pub fn vector_path(manifest_path: &Path, manifest: &EmbeddingManifest) -> PathBuf {
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    dir.join(manifest.vectors.as_deref().unwrap_or(DEFAULT_VECTOR_FILE))
}

fn read(path: &Path) -> Result<String, FeatureError> {
    fs::read_to_string(path).map_err(|e| FeatureError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn import_dense(manifest_path: &Path) -> Result<EmbeddingTable, FeatureError> {
    let manifest: EmbeddingManifest =
        serde_json::from_str(&read(manifest_path)?).map_err(|e| FeatureError::Format(format!("manifest: {e}")))?;
    let vectors = vector_path(manifest_path, &manifest);
    let mut rows = Vec::new();
    for (i, line) in read(&vectors)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        // NaN/Infinity are not JSON; serde_json rejects them here, which we
        // report as a validation failure for that row.
        let row: EmbeddingRow = serde_json::from_str(line).map_err(|e| {
            if line.contains("NaN") || line.contains("Infinity") {
                FeatureError::NonFinite(format!("line {}", i + 1))
            } else {
                FeatureError::Format(format!("{} line {}: {e}", vectors.display(), i + 1))
            }
        })?;
        rows.push(row);
    }
    EmbeddingTable::from_rows(manifest, rows)
}

/// Writes a manifest and vector file that `import_dense` accepts.
pub fn write_dense(manifest_path: &Path, manifest: &EmbeddingManifest, rows: &[EmbeddingRow]) -> std::io::Result<()> {
    let mut body = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut body, r)?;
        body.push(b'\n');
    }
    crate::io::write_atomic(&vector_path(manifest_path, manifest), &body)?;
    crate::io::write_atomic(manifest_path, &serde_json::to_vec_pretty(manifest)?)
}
