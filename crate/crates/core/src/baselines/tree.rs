use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::features::DenseMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Features considered per split; `None` means all.
    pub max_features: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Reduction in summed squared error achieved by this split.
        impurity_decrease: f64,
        n_samples: usize,
    },
    Leaf {
        value: f64,
        n_samples: usize,
    },
}

/// Regression tree grown on squared-error impurity. `nodes[0]` is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
}

// Variances below this are treated as pure nodes.
const PURE_VARIANCE: f64 = 1e-14;

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl RegressionTree {
    /// Grows a tree on the given sample indices (repeats allowed).
    pub fn fit<R: Rng>(
        x: &DenseMatrix,
        y: &[f64],
        samples: Vec<usize>,
        config: &TreeConfig,
        rng: &mut R,
    ) -> Self {
        let n_features = x.cols();
        let mut nodes = Vec::new();
        let mut stack = vec![(0usize, samples, 0usize)];
        nodes.push(Node::Leaf {
            value: 0.0,
            n_samples: 0,
        });
        let mut pairs: Vec<(f64, f64)> = Vec::new();

        while let Some((id, idx, depth)) = stack.pop() {
            let n = idx.len();
            let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
            let sse: f64 = idx.iter().map(|&i| (y[i] - mean).powi(2)).sum();
            let leaf = Node::Leaf {
                value: mean,
                n_samples: n,
            };
            let stop = n < config.min_samples_split.max(2)
                || n < 2 * config.min_samples_leaf.max(1)
                || config.max_depth.is_some_and(|d| depth >= d)
                || sse / n as f64 <= PURE_VARIANCE;
            if stop {
                nodes[id] = leaf;
                continue;
            }

            let features: Vec<usize> = match config.max_features {
                Some(m) if m < n_features => {
                    let mut f = sample(rng, n_features, m.max(1)).into_vec();
                    f.sort_unstable();
                    f
                }
                _ => (0..n_features).collect(),
            };
            let best = best_split(
                x,
                y,
                &idx,
                &features,
                config.min_samples_leaf.max(1),
                &mut pairs,
            );
            let Some(best) = best.filter(|c| c.gain > 0.0) else {
                nodes[id] = leaf;
                continue;
            };

            let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
                .iter()
                .partition(|&&i| x.get(i, best.feature) <= best.threshold);
            let left = nodes.len();
            let right = left + 1;
            nodes.push(Node::Leaf {
                value: 0.0,
                n_samples: 0,
            });
            nodes.push(Node::Leaf {
                value: 0.0,
                n_samples: 0,
            });
            nodes[id] = Node::Split {
                feature: best.feature,
                threshold: best.threshold,
                left,
                right,
                impurity_decrease: best.gain,
                n_samples: n,
            };
            stack.push((right, right_idx, depth + 1));
            stack.push((left, left_idx, depth + 1));
        }
        RegressionTree { nodes, n_features }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    id = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    /// Summed impurity decrease per feature.
    pub fn raw_importances(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        for node in &self.nodes {
            if let Node::Split {
                feature,
                impurity_decrease,
                ..
            } = node
            {
                imp[*feature] += impurity_decrease;
            }
        }
        imp
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

/// Exhaustive search over midpoints between consecutive distinct values.
fn best_split(
    x: &DenseMatrix,
    y: &[f64],
    idx: &[usize],
    features: &[usize],
    min_leaf: usize,
    pairs: &mut Vec<(f64, f64)>,
) -> Option<Candidate> {
    let n = idx.len();
    let total: f64 = idx.iter().map(|&i| y[i]).sum();
    let parent = total * total / n as f64;
    let mut best: Option<Candidate> = None;
    for &f in features {
        pairs.clear();
        pairs.extend(idx.iter().map(|&i| (x.get(i, f), y[i])));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pairs[0].0 == pairs[n - 1].0 {
            continue;
        }
        let mut left_sum = 0.0;
        for i in 1..n {
            left_sum += pairs[i - 1].1;
            if pairs[i - 1].0 == pairs[i].0 || i < min_leaf || n - i < min_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            let gain =
                left_sum * left_sum / i as f64 + right_sum * right_sum / (n - i) as f64 - parent;
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                let (lo, hi) = (pairs[i - 1].0, pairs[i].0);
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(Candidate {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}
