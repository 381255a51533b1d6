//! Row-aligned feature matrices from TF-IDF or imported dense embeddings.

mod dense;
mod tfidf;

pub use dense::{import_dense, write_dense, EmbeddingManifest, EmbeddingRow, EmbeddingTable};
pub use tfidf::{fit_tfidf, transform_tfidf, TfidfModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textprep::Document;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot fit TF-IDF: no documents")]
    NoDocuments,
    #[error("cannot fit TF-IDF: every document is empty")]
    EmptyVocabulary,
    #[error("io error reading {path}: {message}")]
    Io { path: String, message: String },
    #[error("embedding format error: {0}")]
    Format(String),
    #[error("embedding row {bug_id:?} has {got} components, manifest declares {expected}")]
    Dimension {
        bug_id: String,
        expected: usize,
        got: usize,
    },
    #[error("embedding row {0:?} has a non-finite component")]
    NonFinite(String),
    #[error("duplicate embedding row for {0:?}")]
    Duplicate(String),
    #[error("ids not found in the feature source: {0:?}")]
    Lookup(Vec<String>),
    #[error("matrix shape mismatch: {0}")]
    Shape(String),
}

/// Sparse row with strictly increasing column indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseRow {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseRow {
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        let (indices, values) = pairs.into_iter().unzip();
        SparseRow { indices, values }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Storage {
    Sparse {
        rows: Vec<SparseRow>,
    },
    /// Row-major, `n_rows * n_cols` values.
    Dense {
        values: Vec<f64>,
    },
}

/// Borrowed view of one row.
#[derive(Debug, Clone, Copy)]
pub enum Row<'a> {
    Sparse { indices: &'a [u32], values: &'a [f64] },
    Dense(&'a [f64]),
}

impl<'a> Row<'a> {
    pub fn get(&self, col: usize) -> f64 {
        match self {
            Row::Sparse { indices, values } => indices.binary_search(&(col as u32)).map_or(0.0, |k| values[k]),
            Row::Dense(v) => v[col],
        }
    }

    /// Nonzero entries (dense rows yield every entry).
    pub fn entries(&self) -> Box<dyn Iterator<Item = (usize, f64)> + 'a> {
        match *self {
            Row::Sparse { indices, values } => Box::new(indices.iter().zip(values).map(|(i, v)| (*i as usize, *v))),
            Row::Dense(v) => Box::new(v.iter().copied().enumerate()),
        }
    }

    pub fn dot_dense(&self, w: &[f64]) -> f64 {
        match self {
            Row::Sparse { indices, values } => indices.iter().zip(*values).map(|(i, v)| w[*i as usize] * v).sum(),
            Row::Dense(v) => v.iter().zip(w).map(|(a, b)| a * b).sum(),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        match self {
            Row::Sparse { values, .. } => values.iter().map(|v| v * v).sum(),
            Row::Dense(v) => v.iter().map(|x| x * x).sum(),
        }
    }

    pub fn dot(&self, other: &Row<'_>) -> f64 {
        self.merge_fold(other, 0.0, |acc, a, b| acc + a * b)
    }

    pub fn sq_dist(&self, other: &Row<'_>) -> f64 {
        self.merge_fold(other, 0.0, |acc, a, b| acc + (a - b) * (a - b))
    }

    pub fn l1_dist(&self, other: &Row<'_>) -> f64 {
        self.merge_fold(other, 0.0, |acc, a, b| acc + (a - b).abs())
    }

    /// Folds `f(acc, a_j, b_j)` over the union of both supports.
    fn merge_fold<F: Fn(f64, f64, f64) -> f64>(&self, other: &Row<'_>, init: f64, f: F) -> f64 {
        match (self, other) {
            (Row::Dense(a), Row::Dense(b)) => a.iter().zip(*b).fold(init, |acc, (x, y)| f(acc, *x, *y)),
            (
                Row::Sparse {
                    indices: ia,
                    values: va,
                },
                Row::Sparse {
                    indices: ib,
                    values: vb,
                },
            ) => {
                let (mut i, mut j, mut acc) = (0, 0, init);
                while i < ia.len() || j < ib.len() {
                    let ca = ia.get(i).copied().unwrap_or(u32::MAX);
                    let cb = ib.get(j).copied().unwrap_or(u32::MAX);
                    if ca == cb {
                        acc = f(acc, va[i], vb[j]);
                        i += 1;
                        j += 1;
                    } else if ca < cb {
                        acc = f(acc, va[i], 0.0);
                        i += 1;
                    } else {
                        acc = f(acc, 0.0, vb[j]);
                        j += 1;
                    }
                }
                acc
            }
            (Row::Sparse { indices, values }, Row::Dense(b)) => sparse_dense_fold(indices, values, b, init, &f),
            (Row::Dense(a), Row::Sparse { indices, values }) => {
                sparse_dense_fold(indices, values, a, init, |acc, s, d| f(acc, d, s))
            }
        }
    }
}

/// Folds `f(acc, s_j, d_j)` over every column of the dense side.
fn sparse_dense_fold(
    indices: &[u32],
    values: &[f64],
    dense: &[f64],
    init: f64,
    f: impl Fn(f64, f64, f64) -> f64,
) -> f64 {
    let mut k = 0;
    let mut acc = init;
    for (c, d) in dense.iter().enumerate() {
        let s = if indices.get(k) == Some(&(c as u32)) {
            k += 1;
            values[k - 1]
        } else {
            0.0
        };
        acc = f(acc, s, *d);
    }
    acc
}

/// Column-major copy of the nonzero entries, for per-feature scans.
#[derive(Debug, Clone)]
pub struct ColumnIndex {
    pub columns: Vec<Vec<(u32, f64)>>,
}

/// Features plus the aligned label vector (1 = Intrinsic).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    row_ids: Vec<String>,
    n_cols: usize,
    storage: Storage,
    labels: Vec<u8>,
}

impl FeatureMatrix {
    pub fn sparse(
        row_ids: Vec<String>,
        n_cols: usize,
        rows: Vec<SparseRow>,
        labels: Vec<u8>,
    ) -> Result<Self, FeatureError> {
        if rows.len() != row_ids.len() || labels.len() != row_ids.len() {
            return Err(FeatureError::Shape(format!(
                "{} ids, {} rows, {} labels",
                row_ids.len(),
                rows.len(),
                labels.len()
            )));
        }
        if let Some(bad) = rows
            .iter()
            .find(|r| r.indices.iter().any(|&c| c as usize >= n_cols) || r.indices.len() != r.values.len())
        {
            return Err(FeatureError::Shape(format!("sparse row out of bounds: {bad:?}")));
        }
        Ok(FeatureMatrix {
            row_ids,
            n_cols,
            storage: Storage::Sparse { rows },
            labels,
        })
    }

    pub fn dense(row_ids: Vec<String>, n_cols: usize, values: Vec<f64>, labels: Vec<u8>) -> Result<Self, FeatureError> {
        if values.len() != row_ids.len() * n_cols || labels.len() != row_ids.len() {
            return Err(FeatureError::Shape(format!(
                "{} ids x {} cols vs {} values, {} labels",
                row_ids.len(),
                n_cols,
                values.len(),
                labels.len()
            )));
        }
        Ok(FeatureMatrix {
            row_ids,
            n_cols,
            storage: Storage::Dense { values },
            labels,
        })
    }

    /// Convenience constructor for small dense data given as rows.
    pub fn from_dense_rows(rows: &[Vec<f64>], labels: Vec<u8>) -> Result<Self, FeatureError> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(FeatureError::Shape("ragged dense rows".into()));
        }
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        FeatureMatrix::dense(ids, n_cols, rows.concat(), labels)
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse { .. })
    }

    pub fn row(&self, i: usize) -> Row<'_> {
        match &self.storage {
            Storage::Sparse { rows } => Row::Sparse {
                indices: &rows[i].indices,
                values: &rows[i].values,
            },
            Storage::Dense { values } => Row::Dense(&values[i * self.n_cols..(i + 1) * self.n_cols]),
        }
    }

    /// (NonIntrinsic, Intrinsic) counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        (self.labels.len() - pos, pos)
    }

    /// Rows at `indices`, in that order (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        let row_ids = indices.iter().map(|&i| self.row_ids[i].clone()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let storage = match &self.storage {
            Storage::Sparse { rows } => Storage::Sparse {
                rows: indices.iter().map(|&i| rows[i].clone()).collect(),
            },
            Storage::Dense { values } => Storage::Dense {
                values: indices
                    .iter()
                    .flat_map(|&i| values[i * self.n_cols..(i + 1) * self.n_cols].iter().copied())
                    .collect(),
            },
        };
        FeatureMatrix {
            row_ids,
            n_cols: self.n_cols,
            storage,
            labels,
        }
    }

    /// Appends one row given as (column, value) pairs in the matrix's own
    /// storage kind.
    pub fn push_row(&mut self, id: String, entries: Vec<(u32, f64)>, label: u8) {
        match &mut self.storage {
            Storage::Sparse { rows } => rows.push(SparseRow::from_pairs(entries)),
            Storage::Dense { values } => {
                let start = values.len();
                values.resize(start + self.n_cols, 0.0);
                for (c, v) in entries {
                    values[start + c as usize] = v;
                }
            }
        }
        self.row_ids.push(id);
        self.labels.push(label);
    }

    pub fn column_index(&self) -> ColumnIndex {
        let mut columns = vec![Vec::new(); self.n_cols];
        for r in 0..self.n_rows() {
            for (c, v) in self.row(r).entries() {
                if v != 0.0 {
                    columns[c].push((r as u32, v));
                }
            }
        }
        ColumnIndex { columns }
    }

    /// Row-major dense copy.
    pub fn to_dense_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows())
            .map(|r| {
                let mut v = vec![0.0; self.n_cols];
                for (c, x) in self.row(r).entries() {
                    v[c] = x;
                }
                v
            })
            .collect()
    }
}

/// Where feature rows come from.
pub enum FeatureSource<'a> {
    Tfidf(&'a TfidfModel),
    Dense(&'a EmbeddingTable),
}

/// Builds a matrix for `docs` (TF-IDF) or their ids (dense), in the given
/// order, with `labels` aligned.
pub fn assemble_matrix(
    source: FeatureSource<'_>,
    docs: &[&Document],
    labels: &[u8],
) -> Result<FeatureMatrix, FeatureError> {
    if docs.len() != labels.len() {
        return Err(FeatureError::Shape(format!(
            "{} documents vs {} labels",
            docs.len(),
            labels.len()
        )));
    }
    let ids: Vec<String> = docs.iter().map(|d| d.bug_id.clone()).collect();
    match source {
        FeatureSource::Tfidf(model) => {
            let rows = docs.iter().map(|d| transform_tfidf(model, d)).collect();
            FeatureMatrix::sparse(ids, model.n_features(), rows, labels.to_vec())
        }
        FeatureSource::Dense(table) => {
            let missing: Vec<String> = ids.iter().filter(|id| table.get(id).is_none()).cloned().collect();
            if !missing.is_empty() {
                return Err(FeatureError::Lookup(missing));
            }
            let mut values = Vec::with_capacity(ids.len() * table.dimension());
            for id in &ids {
                values.extend_from_slice(table.get(id).unwrap());
            }
            FeatureMatrix::dense(ids, table.dimension(), values, labels.to_vec())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_and_dense_row_ops_agree() {
        let a = SparseRow::from_pairs(vec![(3, 2.0), (0, 1.0)]);
        let b = SparseRow::from_pairs(vec![(1, -1.0), (3, 0.5)]);
        let ra = Row::Sparse {
            indices: &a.indices,
            values: &a.values,
        };
        let rb = Row::Sparse {
            indices: &b.indices,
            values: &b.values,
        };
        let da = [1.0, 0.0, 0.0, 2.0];
        let db = [0.0, -1.0, 0.0, 0.5];
        let (xa, xb) = (Row::Dense(&da), Row::Dense(&db));
        for (s, d) in [
            (ra.dot(&rb), xa.dot(&xb)),
            (ra.sq_dist(&rb), xa.sq_dist(&xb)),
            (ra.l1_dist(&rb), xa.l1_dist(&xb)),
            (ra.sq_dist(&xb), xa.sq_dist(&rb)),
            (ra.l1_dist(&xb), xa.l1_dist(&rb)),
        ] {
            assert_eq!(s, d);
        }
        assert_eq!(ra.dot(&rb), 1.0);
        assert_eq!(ra.sq_dist(&rb), 1.0 + 1.0 + 2.25);
        assert_eq!(ra.get(3), 2.0);
        assert_eq!(ra.get(2), 0.0);
    }

    #[test]
    fn select_and_push_keep_alignment() {
        let mut m = FeatureMatrix::from_dense_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], vec![0, 1]).unwrap();
        let s = m.select(&[1, 1, 0]);
        assert_eq!(s.labels(), &[1, 1, 0]);
        assert_eq!(s.to_dense_rows()[2], vec![1.0, 2.0]);
        m.push_row("x".into(), vec![(1, 9.0)], 1);
        assert_eq!(m.to_dense_rows()[2], vec![0.0, 9.0]);
        assert_eq!(m.class_counts(), (1, 2));
    }

    #[test]
    fn zero_rows_is_valid() {
        let m = FeatureMatrix::sparse(vec![], 5, vec![], vec![]).unwrap();
        assert_eq!((m.n_rows(), m.n_cols()), (0, 5));
    }
}
