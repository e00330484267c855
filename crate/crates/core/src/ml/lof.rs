//! Local outlier factor in novelty mode: training points are stored with
//! their k-distance and local reachability density; a query is compared
//! against its k nearest training points.

use serde::{Deserialize, Serialize};

/// Distances below this are clamped so duplicate points keep a finite density.
pub const MIN_DISTANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LofConfig {
    pub k: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for LofConfig {
    fn default() -> Self {
        LofConfig { k: 20, threshold: 1.5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lof {
    pub k: usize,
    pub points: Vec<Vec<f64>>,
    pub k_distance: Vec<f64>,
    pub lrd: Vec<f64>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    d2.sqrt().max(MIN_DISTANCE)
}

/// The k nearest stored points as `(distance, index)`, ties by index.
fn neighbors(points: &[Vec<f64>], x: &[f64], k: usize, skip: Option<usize>) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> =
        points.iter().enumerate().filter(|(i, _)| Some(*i) != skip).map(|(i, p)| (distance(p, x), i)).collect();
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if all.len() > k {
        all.select_nth_unstable_by(k - 1, by);
        all.truncate(k);
    }
    all.sort_by(by);
    all
}

fn local_density(nbrs: &[(f64, usize)], k_distance: &[f64]) -> f64 {
    let reach: f64 = nbrs.iter().map(|&(d, o)| d.max(k_distance[o])).sum::<f64>() / nbrs.len() as f64;
    1.0 / reach
}

pub(crate) fn fit(x: &[Vec<f64>], k: usize) -> Lof {
    let knn: Vec<Vec<(f64, usize)>> = (0..x.len()).map(|i| neighbors(x, &x[i], k, Some(i))).collect();
    let k_distance: Vec<f64> = knn.iter().map(|n| n.last().expect("k >= 1").0).collect();
    let lrd = knn.iter().map(|n| local_density(n, &k_distance)).collect();
    Lof { k, points: x.to_vec(), k_distance, lrd }
}

impl Lof {
    /// Mean neighbor density over the query's density.
    pub fn score(&self, x: &[f64]) -> f64 {
        let nbrs = neighbors(&self.points, x, self.k, None);
        let own = local_density(&nbrs, &self.k_distance);
        let mean: f64 = nbrs.iter().map(|&(_, o)| self.lrd[o]).sum::<f64>() / nbrs.len() as f64;
        mean / own
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force textbook definition, recomputed from scratch for every call.
    fn reference_lof(train: &[Vec<f64>], x: &[f64], k: usize) -> f64 {
        let dist = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt().max(MIN_DISTANCE)
        };
        let knn = |q: &[f64], skip: Option<usize>| {
            let mut v: Vec<(f64, usize)> = train
                .iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != skip)
                .map(|(i, p)| (dist(p, q), i))
                .collect();
            v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            v.truncate(k);
            v
        };
        let kdist = |i: usize| knn(&train[i], Some(i)).last().unwrap().0;
        let lrd_of = |nb: &[(f64, usize)]| 1.0 / (nb.iter().map(|&(d, o)| d.max(kdist(o))).sum::<f64>() / k as f64);
        let nb = knn(x, None);
        let own = lrd_of(&nb);
        nb.iter().map(|&(_, o)| lrd_of(&knn(&train[o], Some(o)))).sum::<f64>() / k as f64 / own
    }

    fn grid(side: usize) -> Vec<Vec<f64>> {
        (0..side * side).map(|i| vec![(i % side) as f64 * 0.01, (i / side) as f64 * 0.01]).collect()
    }

    #[test]
    fn matches_brute_force() {
        let mut train = grid(8);
        train.push(vec![0.5, 0.5]);
        let m = fit(&train, 5);
        for q in [vec![0.02, 0.03], vec![1.0, 1.0], vec![0.5, 0.49], vec![0.0, 0.0]] {
            let a = m.score(&q);
            let b = reference_lof(&train, &q, 5);
            assert!((a - b).abs() <= 1e-9 * b.abs(), "{q:?}: {a} vs {b}");
        }
    }

    #[test]
    fn duplicates_give_unit_lof() {
        let train = vec![vec![0.25, 0.75]; 30];
        let m = fit(&train, 20);
        assert_eq!(m.score(&[0.25, 0.75]), 1.0);
    }

    #[test]
    fn distant_point_is_an_outlier() {
        let m = fit(&grid(10), 20);
        assert!(m.score(&[3.0, 3.0]) > 1.5);
    }

    #[test]
    fn uniform_grid_interior_is_near_one() {
        let m = fit(&grid(12), 20);
        for i in 0..grid(12).len() {
            let (r, c) = (i / 12, i % 12);
            if (3..9).contains(&r) && (3..9).contains(&c) {
                let s = m.score(&m.points[i].clone());
                assert!((0.8..=1.2).contains(&s), "({r},{c}) -> {s}");
            }
        }
    }
}
