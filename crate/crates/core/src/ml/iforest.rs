//! Isolation forest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forest::tree_seeds;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsoConfig {
    pub n_trees: usize,
    /// Subsample size; `None` means `min(256, n)`.
    pub psi: Option<usize>,
    /// Fraction of training scores above the threshold.
    pub contamination: f64,
    pub seed: u64,
}

impl Default for IsoConfig {
    fn default() -> Self {
        IsoConfig { n_trees: 100, psi: None, contamination: 0.05, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum INode {
    /// `x[feature] < threshold` goes left.
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
    Leaf { size: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ITree {
    pub nodes: Vec<INode>,
}

impl ITree {
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[i] {
                INode::Leaf { size } => return depth + average_path_length(size as usize),
                INode::Split { feature, threshold, left, right } => {
                    i = if x[feature as usize] < threshold { left } else { right } as usize;
                    depth += 1.0;
                }
            }
        }
    }

    pub(crate) fn is_consistent(&self, dim: usize) -> bool {
        let n = self.nodes.len();
        n > 0
            && self.nodes.iter().all(|node| match *node {
                INode::Leaf { .. } => true,
                INode::Split { feature, threshold, left, right } => {
                    (feature as usize) < dim && threshold.is_finite() && (left as usize) < n && (right as usize) < n
                }
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoForest {
    pub psi: usize,
    pub trees: Vec<ITree>,
}

impl IsoForest {
    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    /// `2^(-E[h(x)] / c(psi))`, in (0, 1).
    pub fn score(&self, x: &[f64]) -> f64 {
        2f64.powf(-self.mean_path_length(x) / average_path_length(self.psi))
    }
}

/// Average unsuccessful-search path length in a binary search tree of `n`
/// points: `c(n) = 2H(n-1) - 2(n-1)/n`, with `c(2) = 1` and `c(n<=1) = 0`.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = (n - 1) as f64;
            2.0 * (m.ln() + EULER_GAMMA) - 2.0 * m / n as f64
        }
    }
}

pub(crate) fn fit(x: &[Vec<f64>], cfg: &IsoConfig) -> IsoForest {
    let n = x.len();
    let psi = cfg.psi.unwrap_or(256).clamp(2, n.max(2)).min(n);
    let limit = (psi as f64).log2().ceil() as usize;
    let seeds = tree_seeds(cfg.seed, cfg.n_trees.max(1));
    let build = |s: &u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(*s);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..psi {
            let j = rng.random_range(i as u64..n as u64) as usize;
            idx.swap(i, j);
        }
        idx.truncate(psi);
        grow(x, idx, limit, &mut rng)
    };
    #[cfg(feature = "parallel")]
    let trees = {
        use rayon::prelude::*;
        seeds.par_iter().map(build).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let trees = seeds.iter().map(build).collect();
    IsoForest { psi, trees }
}

fn grow(x: &[Vec<f64>], root: Vec<usize>, limit: usize, rng: &mut ChaCha8Rng) -> ITree {
    let d = x[0].len();
    let mut nodes = vec![INode::Leaf { size: 0 }];
    let mut stack = vec![(0usize, root, 0usize)];
    while let Some((node, samples, depth)) = stack.pop() {
        let leaf = INode::Leaf { size: samples.len() as u32 };
        if depth >= limit || samples.len() <= 1 {
            nodes[node] = leaf;
            continue;
        }
        let ranges: Vec<(usize, f64, f64)> = (0..d)
            .filter_map(|f| {
                let (lo, hi) = samples
                    .iter()
                    .map(|&i| x[i][f])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                (lo < hi).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            nodes[node] = leaf;
            continue;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len() as u64) as usize];
        let mut threshold = lo + rng.random::<f64>() * (hi - lo);
        if threshold <= lo {
            threshold = lo + (hi - lo) / 2.0;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = samples.into_iter().partition(|&i| x[i][feature] < threshold);
        let left = nodes.len();
        nodes.push(INode::Leaf { size: 0 });
        nodes.push(INode::Leaf { size: 0 });
        nodes[node] = INode::Split { feature: feature as u32, threshold, left: left as u32, right: left as u32 + 1 };
        stack.push((left + 1, r, depth + 1));
        stack.push((left, l, depth + 1));
    }
    ITree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_of_n() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        // 2(ln 255 + gamma) - 2*255/256
        let c256 = average_path_length(256);
        assert!((c256 - 10.244_770_920_119_917).abs() < 1e-9, "{c256}");
    }

    #[test]
    fn degenerate_psi_two() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let m = fit(&x, &IsoConfig { psi: Some(2), n_trees: 10, ..Default::default() });
        assert_eq!(m.psi, 2);
        for xi in &x {
            let s = m.score(xi);
            assert!(s > 0.0 && s < 1.0, "{s}");
        }
    }

    #[test]
    fn outlier_scores_higher() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random::<f64>() * 0.1, rng.random::<f64>() * 0.1]).collect();
        let m = fit(&x, &IsoConfig::default());
        assert!(m.score(&[5.0, 5.0]) > m.score(&[0.05, 0.05]));
        assert_eq!(m.psi, 200);
    }

    #[test]
    fn score_decreases_with_path_length() {
        let tree = |depth_leaf: u32| ITree {
            nodes: vec![
                INode::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
                INode::Leaf { size: 1 },
                INode::Leaf { size: depth_leaf },
            ],
        };
        let shallow = IsoForest { psi: 16, trees: vec![tree(1)] };
        let deep = IsoForest { psi: 16, trees: vec![tree(8)] };
        assert!(shallow.score(&[1.0]) > deep.score(&[1.0]));
    }
}
