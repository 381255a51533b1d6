//! k-nearest-neighbor classification over the retained training matrix.

use serde::{Deserialize, Serialize};

use super::{DistanceMetric, KnnConfig, KnnWeights};
use crate::features::{FeatureMatrix, Row};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub config: KnnConfig,
    pub train: FeatureMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnQuery {
    /// (Weighted) Intrinsic fraction among the neighbors.
    pub score: f64,
    /// Label of the single nearest neighbor, used to break 0.5 ties.
    pub nearest: u8,
}

impl KnnQuery {
    pub fn label(&self) -> u8 {
        if self.score == 0.5 {
            self.nearest
        } else {
            u8::from(self.score > 0.5)
        }
    }
}

impl KnnModel {
    pub fn distance(&self, a: &Row<'_>, b: &Row<'_>) -> f64 {
        match self.config.metric {
            DistanceMetric::Euclidean => a.sq_dist(b).sqrt(),
            DistanceMetric::Manhattan => a.l1_dist(b),
        }
    }

    /// The k nearest training rows as (distance, index), closest first; equal
    /// distances keep training order.
    pub fn neighbors(&self, x: &Row<'_>) -> Vec<(f64, usize)> {
        let mut d: Vec<(f64, usize)> = (0..self.train.n_rows())
            .map(|i| (self.distance(&self.train.row(i), x), i))
            .collect();
        let k = self.config.n_neighbors.min(d.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k, cmp);
            d.truncate(k);
        }
        d.sort_by(cmp);
        d
    }

    pub fn query(&self, x: &Row<'_>) -> KnnQuery {
        let nb = self.neighbors(x);
        let labels = self.train.labels();
        let nearest = labels[nb[0].1];
        let frac = |set: &[(f64, usize)]| set.iter().filter(|(_, i)| labels[*i] == 1).count() as f64 / set.len() as f64;
        let score = match self.config.weights {
            KnnWeights::Uniform => frac(&nb),
            KnnWeights::Distance => {
                let exact: Vec<(f64, usize)> = nb.iter().copied().filter(|(d, _)| *d == 0.0).collect();
                if !exact.is_empty() {
                    frac(&exact)
                } else {
                    let (mut pos, mut total) = (0.0, 0.0);
                    for (d, i) in &nb {
                        let w = 1.0 / d;
                        total += w;
                        if labels[*i] == 1 {
                            pos += w;
                        }
                    }
                    pos / total
                }
            }
        };
        KnnQuery { score, nearest }
    }
}

pub fn fit(config: &KnnConfig, matrix: &FeatureMatrix) -> KnnModel {
    KnnModel {
        config: config.clone(),
        train: matrix.clone(),
    }
}
