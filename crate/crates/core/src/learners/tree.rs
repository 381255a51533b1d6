//! CART decision trees. Splits are binary threshold tests `x[f] <= t`,
//! chosen to maximize the weighted impurity decrease. Sample weights are
//! integer multiplicities (1 for a plain tree, bootstrap counts in a forest).

use rand::seq::SliceRandom;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use super::{Criterion, TreeConfig};
use crate::features::{ColumnIndex, FeatureMatrix, Row};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        /// Weighted fraction of Intrinsic samples.
        value: f64,
        n_samples: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub config: TreeConfig,
    /// Root at index 0.
    pub nodes: Vec<Node>,
    pub n_features: usize,
}

impl TreeModel {
    pub fn leaf_of(&self, x: &Row<'_>) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x.get(feature) <= threshold { left } else { right },
            }
        }
    }

    /// Intrinsic fraction of the leaf reached by `x`.
    pub fn score(&self, x: &Row<'_>) -> f64 {
        match self.nodes[self.leaf_of(x)] {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!("leaf_of returns a leaf"),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

pub fn impurity(criterion: Criterion, w: f64, pos: f64) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let p = pos / w;
    let q = 1.0 - p;
    match criterion {
        Criterion::Gini => 1.0 - p * p - q * q,
        Criterion::Entropy => {
            let h = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
            h(p) + h(q)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

impl SplitChoice {
    fn beats(&self, other: &SplitChoice) -> bool {
        self.gain > other.gain
            || (self.gain == other.gain
                && (self.feature < other.feature
                    || (self.feature == other.feature && self.threshold < other.threshold)))
    }
}

/// Feature subsampling for forests: a seeded shuffle and the number of
/// non-constant features to examine per node.
pub struct FeatureSampler<'a> {
    pub rng: &'a mut Pcg64,
    pub max_features: usize,
}

struct Grower<'a> {
    config: &'a TreeConfig,
    labels: &'a [u8],
    columns: &'a ColumnIndex,
    weight: &'a [f64],
    nodes: Vec<Node>,
}

/// Best split of `feature` within the node given by `member`, or None when
/// the feature is constant there. The second value reports whether the
/// feature is non-constant.
fn best_for_feature(
    g: &Grower<'_>,
    feature: usize,
    member: &[bool],
    node_w: f64,
    node_pos: f64,
    parent: f64,
) -> (Option<SplitChoice>, bool) {
    let mut vals: Vec<(f64, f64, f64)> = Vec::new();
    let (mut ew, mut ep) = (0.0, 0.0);
    for &(r, v) in &g.columns.columns[feature] {
        let r = r as usize;
        if member[r] && g.weight[r] > 0.0 {
            let w = g.weight[r];
            let p = if g.labels[r] == 1 { w } else { 0.0 };
            ew += w;
            ep += p;
            vals.push((v, w, p));
        }
    }
    let zw = node_w - ew;
    if zw > 0.0 {
        vals.push((0.0, zw, node_pos - ep));
    }
    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut groups: Vec<(f64, f64, f64)> = Vec::with_capacity(vals.len());
    for (v, w, p) in vals {
        match groups.last_mut() {
            Some(last) if last.0 == v => {
                last.1 += w;
                last.2 += p;
            }
            _ => groups.push((v, w, p)),
        }
    }
    if groups.len() < 2 {
        return (None, false);
    }
    let min_leaf = g.config.min_samples_leaf as f64;
    let (mut lw, mut lp) = (0.0, 0.0);
    let mut best: Option<SplitChoice> = None;
    for k in 0..groups.len() - 1 {
        lw += groups[k].1;
        lp += groups[k].2;
        let rw = node_w - lw;
        if lw < min_leaf || rw < min_leaf {
            continue;
        }
        let (a, b) = (groups[k].0, groups[k + 1].0);
        let mut threshold = a + (b - a) / 2.0;
        if threshold >= b {
            threshold = a;
        }
        let child =
            (lw * impurity(g.config.criterion, lw, lp) + rw * impurity(g.config.criterion, rw, node_pos - lp)) / node_w;
        let cand = SplitChoice {
            feature,
            threshold,
            gain: parent - child,
        };
        if best.is_none_or(|b| cand.beats(&b)) {
            best = Some(cand);
        }
    }
    (best, true)
}

fn grow_node(g: &mut Grower<'_>, member: Vec<bool>, depth: usize, sampler: &mut Option<FeatureSampler<'_>>) -> usize {
    let (mut w, mut pos) = (0.0, 0.0);
    for (r, &m) in member.iter().enumerate() {
        if m {
            w += g.weight[r];
            if g.labels[r] == 1 {
                pos += g.weight[r];
            }
        }
    }
    let id = g.nodes.len();
    g.nodes.push(Node::Leaf {
        value: if w > 0.0 { pos / w } else { 0.0 },
        n_samples: w,
    });
    let pure = pos == 0.0 || pos == w;
    if depth >= g.config.max_depth || w < g.config.min_samples_split as f64 || pure {
        return id;
    }
    let parent = impurity(g.config.criterion, w, pos);
    let d = g.columns.columns.len();
    let mut best: Option<SplitChoice> = None;
    let consider = |g: &Grower<'_>, f: usize, best: &mut Option<SplitChoice>| -> bool {
        let (cand, informative) = best_for_feature(g, f, &member, w, pos, parent);
        if let Some(c) = cand {
            if best.is_none_or(|b| c.beats(&b)) {
                *best = Some(c);
            }
        }
        informative
    };
    match sampler {
        None => {
            for f in 0..d {
                consider(g, f, &mut best);
            }
        }
        Some(s) => {
            let mut order: Vec<usize> = (0..d).collect();
            order.shuffle(s.rng);
            let mut seen = 0;
            for f in order {
                if seen >= s.max_features {
                    break;
                }
                if consider(g, f, &mut best) {
                    seen += 1;
                }
            }
        }
    }
    let Some(split) = best else {
        return id;
    };
    let mut left = vec![false; member.len()];
    let mut right = vec![false; member.len()];
    let col = &g.columns.columns[split.feature];
    let mut value = vec![0.0; member.len()];
    for &(r, v) in col {
        value[r as usize] = v;
    }
    for r in 0..member.len() {
        if member[r] {
            if value[r] <= split.threshold {
                left[r] = true;
            } else {
                right[r] = true;
            }
        }
    }
    drop(member);
    let l = grow_node(g, left, depth + 1, sampler);
    let r = grow_node(g, right, depth + 1, sampler);
    g.nodes[id] = Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: l,
        right: r,
    };
    id
}

/// Grows a tree on rows with the given multiplicities (rows with weight 0
/// are left out).
pub fn grow(
    config: &TreeConfig,
    matrix: &FeatureMatrix,
    columns: &ColumnIndex,
    weight: &[f64],
    mut sampler: Option<FeatureSampler<'_>>,
) -> TreeModel {
    let mut g = Grower {
        config,
        labels: matrix.labels(),
        columns,
        weight,
        nodes: Vec::new(),
    };
    let member: Vec<bool> = weight.iter().map(|&w| w > 0.0).collect();
    grow_node(&mut g, member, 0, &mut sampler);
    TreeModel {
        config: config.clone(),
        nodes: g.nodes,
        n_features: matrix.n_cols(),
    }
}

pub fn fit(config: &TreeConfig, matrix: &FeatureMatrix) -> TreeModel {
    let columns = matrix.column_index();
    let weight = vec![1.0; matrix.n_rows()];
    grow(config, matrix, &columns, &weight, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(criterion: Criterion, max_depth: usize, leaf: usize) -> TreeConfig {
        TreeConfig {
            criterion,
            max_depth,
            min_samples_leaf: leaf,
            min_samples_split: 2,
        }
    }

    #[test]
    fn impurity_values() {
        assert_eq!(impurity(Criterion::Gini, 4.0, 2.0), 0.5);
        assert_eq!(impurity(Criterion::Entropy, 4.0, 2.0), 1.0);
        assert_eq!(impurity(Criterion::Gini, 4.0, 4.0), 0.0);
        assert_eq!(impurity(Criterion::Entropy, 4.0, 0.0), 0.0);
    }

    #[test]
    fn xor_needs_depth_two() {
        let rows = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let m = FeatureMatrix::from_dense_rows(&rows, vec![0, 1, 1, 0]).unwrap();
        let t = fit(&cfg(Criterion::Gini, 2, 1), &m);
        for r in 0..4 {
            assert_eq!(t.score(&m.row(r)), f64::from(m.labels()[r]));
        }
        assert_eq!(t.depth(), 2);
        // the root split has zero gain but is still taken
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, threshold, .. } if threshold == 0.5));
    }

    #[test]
    fn depth_and_leaf_limits_hold() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![f64::from(i), f64::from(i % 3)]).collect();
        let labels = (0..20).map(|i| u8::from(i % 2 == 0)).collect();
        let m = FeatureMatrix::from_dense_rows(&rows, labels).unwrap();
        let t = fit(&cfg(Criterion::Entropy, 3, 3), &m);
        assert!(t.depth() <= 3);
        for n in &t.nodes {
            if let Node::Leaf { n_samples, .. } = n {
                assert!(*n_samples >= 3.0);
            }
        }
    }

    #[test]
    fn sparse_and_dense_agree() {
        use crate::features::SparseRow;
        let dense = vec![
            vec![0.0, 0.5, 0.0],
            vec![0.2, 0.0, 0.0],
            vec![0.0, 0.0, 0.9],
            vec![0.7, 0.1, 0.0],
            vec![0.0, 0.3, 0.4],
            vec![0.1, 0.0, 0.2],
        ];
        let labels = vec![0, 1, 0, 1, 0, 1];
        let d = FeatureMatrix::from_dense_rows(&dense, labels.clone()).unwrap();
        let rows = dense
            .iter()
            .map(|r| {
                SparseRow::from_pairs(
                    r.iter()
                        .enumerate()
                        .filter(|(_, v)| **v != 0.0)
                        .map(|(c, v)| (c as u32, *v))
                        .collect(),
                )
            })
            .collect();
        let ids = (0..6).map(|i| i.to_string()).collect();
        let s = FeatureMatrix::sparse(ids, 3, rows, labels).unwrap();
        let c = cfg(Criterion::Gini, 3, 1);
        assert_eq!(fit(&c, &d).nodes, fit(&c, &s).nodes);
    }
}
