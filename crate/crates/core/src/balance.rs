//! SMOTE: grow the minority class with points interpolated between a
//! minority sample and one of its k nearest minority neighbors until both
//! classes have equal counts.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::features::FeatureMatrix;
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum BalanceError {
    #[error("cannot balance: only one class present")]
    SingleClass,
    #[error("minority class has {0} sample(s); at least 2 are needed")]
    InsufficientMinority(usize),
    #[error("k_neighbors must be at least 1")]
    BadK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        SmoteConfig {
            k_neighbors: 5,
            seed: 0,
        }
    }
}

/// Indices (into `members`) of the k nearest other members of `members[i]`,
/// nearest first, ties by position.
fn nearest(matrix: &FeatureMatrix, members: &[usize], i: usize, k: usize) -> Vec<usize> {
    let xi = matrix.row(members[i]);
    let mut d: Vec<(f64, usize)> = members
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(j, &r)| (xi.sq_dist(&matrix.row(r)), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d.into_iter().map(|(_, j)| j).collect()
}

fn interpolate(matrix: &FeatureMatrix, a: usize, b: usize, u: f64) -> Vec<(u32, f64)> {
    let mut merged: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
    for (c, v) in matrix.row(a).entries() {
        merged.entry(c as u32).or_default().0 = v;
    }
    for (c, v) in matrix.row(b).entries() {
        merged.entry(c as u32).or_default().1 = v;
    }
    merged.into_iter().map(|(c, (x, nn))| (c, x + u * (nn - x))).collect()
}

/// Returns the input rows unchanged and in order, followed by the synthetic
/// minority rows (ids `smote-<n>`). Sparse rows are interpolated over the
/// union of supports and are not re-normalized.
pub fn smote(matrix: &FeatureMatrix, config: &SmoteConfig, exec: Exec) -> Result<FeatureMatrix, BalanceError> {
    if config.k_neighbors == 0 {
        return Err(BalanceError::BadK);
    }
    let (n0, n1) = matrix.class_counts();
    if n0 == 0 || n1 == 0 {
        return Err(BalanceError::SingleClass);
    }
    let minority_label: u8 = if n1 < n0 { 1 } else { 0 };
    let (n_min, n_maj) = (n0.min(n1), n0.max(n1));
    if n_min < 2 {
        return Err(BalanceError::InsufficientMinority(n_min));
    }
    let mut out = matrix.clone();
    let n_synthetic = n_maj - n_min;
    if n_synthetic == 0 {
        return Ok(out);
    }
    let members: Vec<usize> = (0..matrix.n_rows())
        .filter(|&r| matrix.labels()[r] == minority_label)
        .collect();
    let k = config.k_neighbors.min(n_min - 1);
    let neighbors = exec.map_range(members.len(), |i| nearest(matrix, &members, i, k));
    let synthetic = exec.map_range(n_synthetic, |j| {
        let base = j % members.len();
        let mut rng = seed::rng(seed::derive_indexed(config.seed, "smote", j as u64));
        let nn = neighbors[base][rng.random_range(0..neighbors[base].len())];
        let u: f64 = rng.random();
        interpolate(matrix, members[base], members[nn], u)
    });
    for (j, entries) in synthetic.into_iter().enumerate() {
        out.push_row(format!("smote-{j}"), entries, minority_label);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[(f64, f64, u8)]) -> FeatureMatrix {
        let data: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0, r.1]).collect();
        FeatureMatrix::from_dense_rows(&data, rows.iter().map(|r| r.2).collect()).unwrap()
    }

    #[test]
    fn two_point_minority_stays_on_segment() {
        let m = matrix(&[
            (0.0, 0.0, 1),
            (1.0, 1.0, 1),
            (5.0, 0.0, 0),
            (5.0, 1.0, 0),
            (6.0, 0.0, 0),
            (6.0, 1.0, 0),
            (7.0, 0.0, 0),
        ]);
        let out = smote(
            &m,
            &SmoteConfig {
                k_neighbors: 5,
                seed: 4,
            },
            Exec::Sequential,
        )
        .unwrap();
        assert_eq!(out.class_counts(), (5, 5));
        for row in &out.to_dense_rows()[7..] {
            assert_eq!(row[0], row[1]);
            assert!((0.0..=1.0).contains(&row[0]));
        }
        assert_eq!(&out.to_dense_rows()[..7], &m.to_dense_rows()[..]);
        assert_eq!(out.row_ids()[7], "smote-0");
    }

    #[test]
    fn balanced_input_unchanged() {
        let m = matrix(&[(0.0, 0.0, 1), (1.0, 1.0, 1), (5.0, 0.0, 0), (5.0, 1.0, 0)]);
        assert_eq!(smote(&m, &SmoteConfig::default(), Exec::Sequential).unwrap(), m);
    }

    #[test]
    fn errors() {
        let one_class = matrix(&[(0.0, 0.0, 1), (1.0, 1.0, 1)]);
        assert_eq!(
            smote(&one_class, &SmoteConfig::default(), Exec::Sequential),
            Err(BalanceError::SingleClass)
        );
        let lonely = matrix(&[(0.0, 0.0, 1), (1.0, 1.0, 0), (2.0, 1.0, 0)]);
        assert_eq!(
            smote(&lonely, &SmoteConfig::default(), Exec::Sequential),
            Err(BalanceError::InsufficientMinority(1))
        );
    }

    #[test]
    fn full_corpus_scale_counts_and_modes_agree() {
        let rows: Vec<(f64, f64, u8)> = (0..1504)
            .map(|i| {
                let x = (i as f64 * 0.37).sin();
                let y = (i as f64 * 0.11).cos();
                (x, y, u8::from(i < 896))
            })
            .collect();
        let m = matrix(&rows);
        let cfg = SmoteConfig {
            k_neighbors: 5,
            seed: 9,
        };
        let seq = smote(&m, &cfg, Exec::Sequential).unwrap();
        assert_eq!(seq.class_counts(), (896, 896));
        assert_eq!(seq.n_rows() - m.n_rows(), 288);
        assert_eq!(seq, smote(&m, &cfg, Exec::Parallel).unwrap());
    }

    #[test]
    fn sparse_rows_use_support_union() {
        use crate::features::SparseRow;
        let rows = vec![
            SparseRow::from_pairs(vec![(0, 1.0)]),
            SparseRow::from_pairs(vec![(2, 1.0)]),
            SparseRow::from_pairs(vec![(1, 1.0)]),
            SparseRow::from_pairs(vec![(1, 0.5)]),
            SparseRow::from_pairs(vec![(1, 0.2)]),
        ];
        let ids = (0..5).map(|i| i.to_string()).collect();
        let m = FeatureMatrix::sparse(ids, 3, rows, vec![1, 1, 0, 0, 0]).unwrap();
        let out = smote(
            &m,
            &SmoteConfig {
                k_neighbors: 1,
                seed: 1,
            },
            Exec::Sequential,
        )
        .unwrap();
        let synth = out.to_dense_rows()[5].clone();
        assert!((synth[0] + synth[2] - 1.0).abs() < 1e-12);
        assert_eq!(synth[1], 0.0);
    }
}
