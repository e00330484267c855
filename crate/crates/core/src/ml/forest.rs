//! Random forest of CART trees with Gini splits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// `None` means `ceil(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 100, max_depth: None, min_leaf: 1, features_per_split: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
    /// Fraction of malicious training samples that reached the leaf.
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature as usize] <= threshold { left } else { right } as usize;
                }
            }
        }
    }

    pub(crate) fn is_consistent(&self, dim: usize) -> bool {
        let n = self.nodes.len();
        n > 0
            && self.nodes.iter().all(|node| match *node {
                Node::Leaf { value } => (0.0..=1.0).contains(&value),
                Node::Split { feature, threshold, left, right } => {
                    (feature as usize) < dim && threshold.is_finite() && (left as usize) < n && (right as usize) < n
                }
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Mean leaf malicious-fraction over all trees.
    pub fn score(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.leaf_value(x)).sum::<f64>() / self.trees.len() as f64
    }
}

pub(crate) fn tree_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<u64>()).collect()
}

pub(crate) fn fit(x: &[Vec<f64>], y: &[bool], cfg: &ForestConfig) -> Forest {
    let d = x[0].len();
    let mtry = cfg.features_per_split.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).clamp(1, d);
    let seeds = tree_seeds(cfg.seed, cfg.n_trees.max(1));
    let build = |s: &u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(*s);
        let n = x.len() as u64;
        let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n) as usize).collect();
        grow(x, y, sample, cfg, mtry, &mut rng)
    };
    #[cfg(feature = "parallel")]
    let trees = {
        use rayon::prelude::*;
        seeds.par_iter().map(build).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let trees = seeds.iter().map(build).collect();
    Forest { trees }
}

struct Pending {
    node: usize,
    samples: Vec<usize>,
    depth: usize,
}

fn grow(x: &[Vec<f64>], y: &[bool], root: Vec<usize>, cfg: &ForestConfig, mtry: usize, rng: &mut ChaCha8Rng) -> Tree {
    let d = x[0].len();
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut stack = vec![Pending { node: 0, samples: root, depth: 0 }];
    while let Some(Pending { node, samples, depth }) = stack.pop() {
        let n = samples.len();
        let pos = samples.iter().filter(|&&i| y[i]).count();
        let value = pos as f64 / n as f64;
        let stop = pos == 0
            || pos == n
            || n < 2 * cfg.min_leaf
            || cfg.max_depth.is_some_and(|m| depth >= m);
        let split = if stop { None } else { best_split(x, y, &samples, d, mtry, cfg.min_leaf, rng) };
        let Some((feature, threshold)) = split else {
            nodes[node] = Node::Leaf { value };
            continue;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = samples.into_iter().partition(|&i| x[i][feature] <= threshold);
        let left = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[node] = Node::Split { feature: feature as u32, threshold, left: left as u32, right: left as u32 + 1 };
        // push right first so the left subtree is expanded first
        stack.push(Pending { node: left + 1, samples: r, depth: depth + 1 });
        stack.push(Pending { node: left, samples: l, depth: depth + 1 });
    }
    Tree { nodes }
}

/// Draw features in random order until `mtry` non-constant ones have been
/// evaluated; constant features do not count toward the budget.
fn best_split(
    x: &[Vec<f64>],
    y: &[bool],
    samples: &[usize],
    d: usize,
    mtry: usize,
    min_leaf: usize,
    rng: &mut ChaCha8Rng,
) -> Option<(usize, f64)> {
    let n = samples.len();
    let total_pos = samples.iter().filter(|&&i| y[i]).count() as f64;
    let mut order: Vec<usize> = (0..d).collect();
    let mut best: Option<(f64, usize, f64)> = None;
    let mut evaluated = 0;
    let mut sorted: Vec<(f64, bool)> = Vec::with_capacity(n);
    for k in 0..d {
        if evaluated >= mtry {
            break;
        }
        let j = rng.random_range(k as u64..d as u64) as usize;
        order.swap(k, j);
        let f = order[k];
        sorted.clear();
        sorted.extend(samples.iter().map(|&i| (x[i][f], y[i])));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        if sorted[0].0 == sorted[n - 1].0 {
            continue;
        }
        evaluated += 1;
        let mut left_pos = 0.0;
        for p in 1..n {
            if sorted[p - 1].1 {
                left_pos += 1.0;
            }
            let (lo, hi) = (sorted[p - 1].0, sorted[p].0);
            if lo == hi || p < min_leaf || n - p < min_leaf {
                continue;
            }
            let nl = p as f64;
            let nr = (n - p) as f64;
            let right_pos = total_pos - left_pos;
            // minimizing weighted child Gini is maximizing this proxy
            let proxy = (left_pos * left_pos + (nl - left_pos) * (nl - left_pos)) / nl
                + (right_pos * right_pos + (nr - right_pos) * (nr - right_pos)) / nr;
            if best.is_none_or(|(b, _, _)| proxy > b) {
                let mut t = lo + (hi - lo) / 2.0;
                if t >= hi {
                    t = lo;
                }
                best = Some((proxy, f, t));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clusters(n: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let mal = i % 2 == 0;
            let a: f64 = rng.random::<f64>() * 0.3;
            x.push(if mal { vec![0.5 + a, 0.0, 0.2] } else { vec![0.0, 0.5 + a, 0.2] });
            y.push(mal);
        }
        (x, y)
    }

    #[test]
    fn separable_clusters_are_learned() {
        let (x, y) = clusters(100);
        let f = fit(&x, &y, &ForestConfig { n_trees: 20, ..Default::default() });
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(f.score(xi) > 0.5, yi);
        }
        assert_eq!(f.trees.len(), 20);
    }

    #[test]
    fn same_seed_same_trees() {
        let (x, y) = clusters(60);
        let cfg = ForestConfig { n_trees: 10, seed: 42, ..Default::default() };
        assert_eq!(fit(&x, &y, &cfg), fit(&x, &y, &cfg));
        let other = ForestConfig { seed: 43, ..cfg };
        assert_ne!(fit(&x, &y, &cfg), fit(&x, &y, &other));
    }

    #[test]
    fn pure_node_is_a_leaf() {
        let x = vec![vec![1.0], vec![2.0]];
        let y = vec![true, true];
        let f = fit(&x, &y, &ForestConfig { n_trees: 1, ..Default::default() });
        assert_eq!(f.trees[0].nodes, vec![Node::Leaf { value: 1.0 }]);
    }

    #[test]
    fn scores_stay_in_unit_interval() {
        let (x, y) = clusters(40);
        let f = fit(&x, &y, &ForestConfig { n_trees: 15, max_depth: Some(1), ..Default::default() });
        for xi in &x {
            let s = f.score(xi);
            assert!((0.0..=1.0).contains(&s));
        }
    }
}
