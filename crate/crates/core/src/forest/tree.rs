//! CART-style binary decision trees over a dense matrix.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;

/// How candidate thresholds are chosen at each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRule {
    /// Exhaustive scan of midpoints between distinct sorted values.
    Best,
    /// One uniform threshold between the node's min and max per feature.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Weighted Gini decrease, in sample-count units.
        gain: f64,
    },
    Leaf { neg: u32, pos: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_features: usize,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub rule: SplitRule,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Candidate {
    /// Strictly larger gain wins; equal gains keep the earlier candidate in
    /// the seeded feature order (and the lower threshold within a feature).
    fn beats(&self, other: &Option<Candidate>) -> bool {
        other.as_ref().is_none_or(|o| self.gain > o.gain)
    }
}

/// `n * gini` for a node with the given class counts.
fn weighted_gini(neg: f64, pos: f64) -> f64 {
    let n = neg + pos;
    if n == 0.0 {
        0.0
    } else {
        n - (neg * neg + pos * pos) / n
    }
}

fn counts(y: &[bool], samples: &[usize]) -> (u32, u32) {
    let pos = samples.iter().filter(|&&i| y[i]).count() as u32;
    (samples.len() as u32 - pos, pos)
}

impl Tree {
    /// Grow a tree from the given (possibly repeated) sample indices.
    pub(crate) fn grow(
        x: &Matrix,
        y: &[bool],
        samples: Vec<usize>,
        params: &GrowParams,
        rng: &mut ChaCha8Rng,
    ) -> Tree {
        let mut nodes = Vec::new();
        let mut stack = vec![(samples, 0usize, usize::MAX, false)];
        while let Some((samples, depth, parent, is_right)) = stack.pop() {
            let id = nodes.len();
            if parent != usize::MAX {
                if let Node::Split { left, right, .. } = &mut nodes[parent] {
                    if is_right {
                        *right = id;
                    } else {
                        *left = id;
                    }
                }
            }
            let (neg, pos) = counts(y, &samples);
            let splittable = neg > 0
                && pos > 0
                && samples.len() >= 2 * params.min_samples_leaf
                && params.max_depth.is_none_or(|d| depth < d);
            let best = if splittable {
                best_split(x, y, &samples, (neg, pos), params, rng)
            } else {
                None
            };
            match best {
                None => nodes.push(Node::Leaf { neg, pos }),
                Some(c) => {
                    nodes.push(Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left: 0,
                        right: 0,
                        gain: c.gain,
                    });
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        samples.iter().partition(|&&i| x.get(i, c.feature) <= c.threshold);
                    stack.push((r, depth + 1, id, true));
                    stack.push((l, depth + 1, id, false));
                }
            }
        }
        Tree { nodes }
    }

    fn leaf_for(&self, row: &[f64]) -> (u32, u32) {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { neg, pos } => return (*neg, *pos),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Positive-class fraction of the leaf reached by `row`.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let (neg, pos) = self.leaf_for(row);
        pos as f64 / (neg + pos).max(1) as f64
    }

    /// Unnormalized per-feature impurity decrease.
    pub fn impurity_decrease(&self, n_features: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_features];
        for node in &self.nodes {
            if let Node::Split { feature, gain, .. } = node {
                out[*feature] += gain;
            }
        }
        out
    }
}

fn best_split(
    x: &Matrix,
    y: &[bool],
    samples: &[usize],
    (neg, pos): (u32, u32),
    params: &GrowParams,
    rng: &mut ChaCha8Rng,
) -> Option<Candidate> {
    let f = x.n_cols();
    let parent = weighted_gini(neg as f64, pos as f64);
    let msl = params.min_samples_leaf;
    let mut order: Vec<usize> = (0..f).collect();
    let mut best: Option<Candidate> = None;
    let mut informative = 0;
    let mut values: Vec<(f64, bool)> = Vec::with_capacity(samples.len());
    for k in 0..f {
        if informative >= params.max_features {
            break;
        }
        let j = rng.random_range(k..f);
        order.swap(k, j);
        let feat = order[k];
        values.clear();
        values.extend(samples.iter().map(|&i| (x.get(i, feat), y[i])));
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(v, _)| (a.min(v), b.max(v)));
        if lo >= hi {
            continue;
        }
        informative += 1;
        match params.rule {
            SplitRule::Best => {
                values.sort_by(|a, b| a.0.total_cmp(&b.0));
                let (mut ln, mut lp) = (0.0, 0.0);
                for i in 0..values.len() - 1 {
                    if values[i].1 {
                        lp += 1.0;
                    } else {
                        ln += 1.0;
                    }
                    let left = i + 1;
                    if values[i].0 >= values[i + 1].0 || left < msl || values.len() - left < msl {
                        continue;
                    }
                    let gain = parent
                        - weighted_gini(ln, lp)
                        - weighted_gini(neg as f64 - ln, pos as f64 - lp);
                    let mid = 0.5 * (values[i].0 + values[i + 1].0);
                    let threshold = if mid < values[i + 1].0 { mid } else { values[i].0 };
                    let c = Candidate {
                        feature: feat,
                        threshold,
                        gain,
                    };
                    if c.beats(&best) {
                        best = Some(c);
                    }
                }
            }
            SplitRule::Random => {
                let threshold = rng.random_range(lo..hi);
                let (mut ln, mut lp) = (0.0, 0.0);
                for &(v, label) in values.iter() {
                    if v <= threshold {
                        if label {
                            lp += 1.0;
                        } else {
                            ln += 1.0;
                        }
                    }
                }
                let left = (ln + lp) as usize;
                if left < msl || values.len() - left < msl {
                    continue;
                }
                let gain =
                    parent - weighted_gini(ln, lp) - weighted_gini(neg as f64 - ln, pos as f64 - lp);
                let c = Candidate {
                    feature: feat,
                    threshold,
                    gain,
                };
                if c.beats(&best) {
                    best = Some(c);
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    #[test]
    fn weighted_gini_matches_definition() {
        let g = weighted_gini(1.0, 3.0);
        assert!((g - 4.0 * (1.0 - (0.25f64.powi(2) + 0.75f64.powi(2)))).abs() < 1e-12);
        assert_eq!(weighted_gini(5.0, 0.0), 0.0);
    }

    #[test]
    fn depth_one_stump_on_a_threshold() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let y = [false, false, true, true];
        let p = GrowParams {
            max_features: 1,
            min_samples_leaf: 1,
            max_depth: None,
            rule: SplitRule::Best,
        };
        let t = Tree::grow(&x, &y, (0..4).collect(), &p, &mut rng_from(0));
        assert_eq!(t.nodes.len(), 3);
        match &t.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 1.5);
            }
            n => panic!("{n:?}"),
        }
        assert_eq!(t.predict_row(&[0.5]), 0.0);
        assert_eq!(t.predict_row(&[2.5]), 1.0);
    }

    #[test]
    fn max_depth_zero_gives_single_leaf() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let y = [false, true, true, true];
        let p = GrowParams {
            max_features: 1,
            min_samples_leaf: 1,
            max_depth: Some(0),
            rule: SplitRule::Best,
        };
        let t = Tree::grow(&x, &y, (0..4).collect(), &p, &mut rng_from(0));
        assert_eq!(t.nodes, vec![Node::Leaf { neg: 1, pos: 3 }]);
        assert_eq!(t.predict_row(&[9.0]), 0.75);
    }

    #[test]
    fn random_rule_respects_bounds() {
        let x = Matrix::from_rows(&(0..20).map(|i| vec![i as f64]).collect::<Vec<_>>()).unwrap();
        let y: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let p = GrowParams {
            max_features: 1,
            min_samples_leaf: 1,
            max_depth: None,
            rule: SplitRule::Random,
        };
        let t = Tree::grow(&x, &y, (0..20).collect(), &p, &mut rng_from(4));
        for i in 0..20 {
            assert_eq!(t.predict_row(&[i as f64]), if i >= 10 { 1.0 } else { 0.0 });
        }
    }
}
