//! Random forests of CART trees. Tree `t` draws its bootstrap sample and
//! per-node feature subsets from its own stream, seeded from the run seed and
//! `t`, so the ensemble does not depend on how trees are scheduled.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{self, FeatureSampler, TreeModel};
use super::{ForestConfig, MaxFeatures};
use crate::exec::Exec;
use crate::features::{FeatureMatrix, Row};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub trees: Vec<TreeModel>,
    pub seeds: Vec<u64>,
    pub n_features: usize,
}

impl ForestModel {
    /// Mean of the per-tree leaf fractions.
    pub fn score(&self, x: &Row<'_>) -> f64 {
        self.trees.iter().map(|t| t.score(x)).sum::<f64>() / self.trees.len() as f64
    }
}

pub fn max_features(mode: MaxFeatures, d: usize) -> usize {
    match mode {
        MaxFeatures::All => d,
        MaxFeatures::Sqrt => (d as f64).sqrt().ceil() as usize,
    }
}

pub fn fit(config: &ForestConfig, matrix: &FeatureMatrix, seed: u64, exec: Exec) -> ForestModel {
    let columns = matrix.column_index();
    let tree_cfg = config.tree();
    let n = matrix.n_rows();
    let k = max_features(config.max_features, matrix.n_cols());
    let seeds: Vec<u64> = (0..config.n_estimators)
        .map(|t| seed::derive_indexed(seed, "forest", t as u64))
        .collect();
    let trees = exec.map(&seeds, |&s| {
        let mut rng = seed::rng(s);
        let weight = if config.bootstrap {
            let mut w = vec![0.0; n];
            for _ in 0..n {
                w[rng.random_range(0..n)] += 1.0;
            }
            w
        } else {
            vec![1.0; n]
        };
        let sampler = (config.max_features != MaxFeatures::All).then_some(FeatureSampler {
            rng: &mut rng,
            max_features: k,
        });
        tree::grow(&tree_cfg, matrix, &columns, &weight, sampler)
    });
    ForestModel {
        config: config.clone(),
        trees,
        seeds,
        n_features: matrix.n_cols(),
    }
}
