//! Hierarchical clustering with minimax linkage and prototypes.
//!
//! The linkage between clusters `G` and `H` is the minimax radius of their
//! union: the smallest, over candidate centers in `G ∪ H`, of the largest
//! distance from that center to any member. The minimizing center is the
//! merged cluster's prototype.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("series {0} has zero variance; correlation undefined")]
    ZeroVariance(usize),
    #[error("series lengths differ or are shorter than 3")]
    Length,
    #[error("invalid distance matrix: {0}")]
    Invalid(String),
}

/// Symmetric matrix of pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds from a row-major `n×n` buffer, checking symmetry and a zero
    /// diagonal.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self, ClusterError> {
        if data.len() != n * n {
            return Err(ClusterError::Invalid(format!("expected {} entries", n * n)));
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(ClusterError::Invalid(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let v = data[i * n + j];
                if v != data[j * n + i] || !(v >= 0.0) {
                    return Err(ClusterError::Invalid(format!("entry ({i}, {j})")));
                }
            }
        }
        Ok(Self { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, ClusterError> {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self::new(n, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Restriction to a subset of points, in the given order.
    pub fn subset(&self, idx: &[usize]) -> DistanceMatrix {
        let m = idx.len();
        let mut data = vec![0.0; m * m];
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                data[a * m + b] = self.get(i, j);
            }
        }
        DistanceMatrix { n: m, data }
    }
}

/// `1 - |corr|` between every pair of series.
pub fn corr_distance_matrix<S: AsRef<[f64]>>(series: &[S]) -> Result<DistanceMatrix, ClusterError> {
    let n = series.len();
    let len = series.first().map_or(0, |s| s.as_ref().len());
    if n > 0 && (len < 3 || series.iter().any(|s| s.as_ref().len() != len)) {
        return Err(ClusterError::Length);
    }
    let mut centered: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut norms = Vec::with_capacity(n);
    for (i, s) in series.iter().enumerate() {
        let s = s.as_ref();
        let m = s.iter().sum::<f64>() / len as f64;
        let c: Vec<f64> = s.iter().map(|v| v - m).collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 1e-12 * m.abs().max(f64::MIN_POSITIVE)) || norm == 0.0 {
            return Err(ClusterError::ZeroVariance(i));
        }
        centered.push(c);
        norms.push(norm);
    }
    DistanceMatrix::from_fn(n, |i, j| {
        let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
        let corr = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
        1.0 - corr.abs()
    })
}

/// Correlation distances between the columns of a matrix.
pub fn corr_distance_columns(x: &DMatrix<f64>) -> Result<DistanceMatrix, ClusterError> {
    let cols: Vec<Vec<f64>> = x.column_iter().map(|c| c.iter().copied().collect()).collect();
    corr_distance_matrix(&cols)
}

/// Minimax radius and prototype (lowest index on ties) of `members`.
pub fn minimax_radius(dist: &DistanceMatrix, members: &[usize]) -> (f64, usize) {
    assert!(!members.is_empty(), "minimax radius of an empty cluster");
    let mut best = (f64::INFINITY, usize::MAX);
    for &x in members {
        let r = members.iter().map(|&y| dist.get(x, y)).fold(0.0, f64::max);
        if r < best.0 || (r == best.0 && x < best.1) {
            best = (r, x);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Node ids: leaves are `0..n`, merge `i` creates node `n + i`.
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub prototype: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTree {
    pub n: usize,
    pub merges: Vec<Merge>,
}

impl ClusterTree {
    /// Leaf indices under `node`, ascending.
    pub fn members(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            if v < self.n {
                out.push(v);
            } else {
                let m = &self.merges[v - self.n];
                stack.push(m.left);
                stack.push(m.right);
            }
        }
        out.sort_unstable();
        out
    }

    pub fn prototype(&self, node: usize) -> usize {
        if node < self.n {
            node
        } else {
            self.merges[node - self.n].prototype
        }
    }

    pub fn has_inversion(&self) -> bool {
        self.merges.windows(2).any(|w| w[1].height < w[0].height)
    }
}

struct Active {
    node: usize,
    members: Vec<usize>,
    prototype: usize,
}

/// Agglomerative clustering with minimax linkage. Ties between candidate
/// merges go to the pair whose (smaller, larger) prototypes come first.
pub fn minimax_cluster(dist: &DistanceMatrix) -> ClusterTree {
    let n = dist.n();
    let mut clusters: Vec<Option<Active>> = (0..n)
        .map(|i| {
            Some(Active {
                node: i,
                members: vec![i],
                prototype: i,
            })
        })
        .collect();
    // dmax[c * n + x]: largest distance from point x to members of slot c.
    let mut dmax: Vec<f64> = vec![0.0; n * n];
    for c in 0..n {
        for x in 0..n {
            dmax[c * n + x] = dist.get(x, c);
        }
    }
    let linkage = |dmax: &[f64], g: &Active, gs: usize, h: &Active, hs: usize| -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        for &x in g.members.iter().chain(&h.members) {
            let r = dmax[gs * n + x].max(dmax[hs * n + x]);
            if r < best.0 || (r == best.0 && x < best.1) {
                best = (r, x);
            }
        }
        best
    };
    // Pairwise linkage cache, slots a > b stored at a * n + b.
    let mut link: Vec<(f64, usize)> = vec![(f64::INFINITY, usize::MAX); n * n];
    for a in 0..n {
        for b in 0..a {
            link[a * n + b] = (dist.get(a, b), a.min(b));
        }
    }
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(f64, (usize, usize), usize, usize, usize)> = None;
        for a in 0..n {
            let Some(ca) = &clusters[a] else { continue };
            for b in 0..a {
                let Some(cb) = &clusters[b] else { continue };
                let (h, proto) = link[a * n + b];
                let key = (ca.prototype.min(cb.prototype), ca.prototype.max(cb.prototype));
                let better = match &best {
                    None => true,
                    Some((bh, bk, ..)) => h < *bh || (h == *bh && key < *bk),
                };
                if better {
                    best = Some((h, key, a, b, proto));
                }
            }
        }
        let (height, _, a, b, prototype) = best.expect("at least two active clusters");
        let ca = clusters[a].take().expect("active");
        let cb = clusters[b].take().expect("active");
        let (left, right) = (ca.node.min(cb.node), ca.node.max(cb.node));
        let mut members = ca.members;
        members.extend(cb.members);
        members.sort_unstable();
        merges.push(Merge {
            left,
            right,
            height,
            prototype,
            size: members.len(),
        });
        // The merged cluster takes slot b.
        for x in 0..n {
            dmax[b * n + x] = dmax[a * n + x].max(dmax[b * n + x]);
        }
        let merged = Active {
            node: n + step,
            members,
            prototype,
        };
        for c in 0..n {
            if c == b {
                continue;
            }
            if let Some(cc) = &clusters[c] {
                let v = linkage(&dmax, &merged, b, cc, c);
                let (hi, lo) = (b.max(c), b.min(c));
                link[hi * n + lo] = v;
            }
        }
        clusters[b] = Some(merged);
    }
    ClusterTree { n, merges }
}

/// Clusters obtained by applying every merge with height at most `threshold`,
/// as `(prototype, members)` sorted by prototype.
pub fn cut_clusters(tree: &ClusterTree, threshold: f64) -> Vec<(usize, Vec<usize>)> {
    let n = tree.n;
    let mut alive = vec![true; n + tree.merges.len()];
    for (i, m) in tree.merges.iter().enumerate() {
        if m.height > threshold {
            alive[n + i] = false;
            continue;
        }
        // Heights never decrease, but guard against a merge whose children
        // were not admitted.
        if !alive[m.left] || !alive[m.right] {
            alive[n + i] = false;
            continue;
        }
        alive[m.left] = false;
        alive[m.right] = false;
    }
    let mut out: Vec<(usize, Vec<usize>)> = (0..n + tree.merges.len())
        .filter(|&v| alive[v])
        .map(|v| (tree.prototype(v), tree.members(v)))
        .collect();
    out.sort_by_key(|c| c.0);
    out
}

/// Prototypes of the clusters at the cut `threshold`, ascending.
pub fn cut_prototypes(tree: &ClusterTree, threshold: f64) -> Vec<usize> {
    cut_clusters(tree, threshold).into_iter().map(|c| c.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dist(seed: u64, n: usize) -> DistanceMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DistanceMatrix::from_fn(n, |_, _| rng.random_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn correlation_distances() {
        let a = [1.0, 2.0, 4.0, 3.0];
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let c: Vec<f64> = a.iter().map(|v| -v).collect();
        let d = corr_distance_matrix(&[a.to_vec(), b, c]).unwrap();
        assert!(d.get(0, 1).abs() < 1e-15 && d.get(0, 2).abs() < 1e-15);
        let e = corr_distance_matrix(&[vec![1.0, 0.0, 1.0, 0.0], vec![1.0, 1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(e.get(0, 1), 1.0);
        assert_eq!(
            corr_distance_matrix(&[vec![1.0, 2.0, 3.0], vec![2.0, 2.0, 2.0]]),
            Err(ClusterError::ZeroVariance(1))
        );
    }

    #[test]
    fn radius_cases() {
        let d = DistanceMatrix::from_fn(3, |i, j| if i + j == 1 { 0.4 } else { 0.7 }).unwrap();
        assert_eq!(minimax_radius(&d, &[2]), (0.0, 2));
        assert_eq!(minimax_radius(&d, &[0, 1]), (0.4, 0));
    }

    #[test]
    fn three_collinear_points() {
        let d = DistanceMatrix::new(3, vec![0.0, 0.1, 0.2, 0.1, 0.0, 0.1, 0.2, 0.1, 0.0]).unwrap();
        let t = minimax_cluster(&d);
        assert_eq!((t.merges[0].left, t.merges[0].right), (0, 1));
        assert_eq!(t.merges[1].height, 0.1);
        assert_eq!(t.merges[1].prototype, 1);
    }

    #[test]
    fn two_points() {
        let d = DistanceMatrix::new(2, vec![0.0, 0.3, 0.3, 0.0]).unwrap();
        let t = minimax_cluster(&d);
        assert_eq!(t.merges.len(), 1);
        assert_eq!(t.merges[0].height, 0.3);
    }

    #[test]
    fn cut_extremes() {
        let d = random_dist(3, 9);
        let t = minimax_cluster(&d);
        assert_eq!(cut_prototypes(&t, 0.0), (0..9).collect::<Vec<_>>());
        assert_eq!(cut_prototypes(&t, 1.0), vec![t.merges.last().unwrap().prototype]);
    }

    #[test]
    fn block_series_give_one_prototype_per_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let base: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..156).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut series = Vec::new();
        for b in 0..3 {
            for _ in 0..4 {
                series.push(base[b].iter().map(|v| v + 0.1 * rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
            }
        }
        let d = corr_distance_matrix(&series).unwrap();
        let t = minimax_cluster(&d);
        let clusters = cut_clusters(&t, 0.5);
        assert_eq!(clusters.len(), 3);
        for (_, members) in clusters {
            let block = members[0] / 4;
            assert!(members.iter().all(|m| m / 4 == block));
        }
    }

    /// Exhaustive agglomeration: every step recomputes the radius of every
    /// candidate union from scratch. Also reports whether any step had a tied
    /// minimum (between candidate pairs or between prototype candidates).
    pub(crate) fn brute_force(d: &DistanceMatrix) -> (Vec<(f64, usize, Vec<usize>)>, bool) {
        let mut clusters: Vec<(Vec<usize>, usize)> = (0..d.n()).map(|i| (vec![i], i)).collect();
        let mut out = Vec::new();
        let mut tied = false;
        while clusters.len() > 1 {
            let mut cands = Vec::new();
            for a in 0..clusters.len() {
                for b in a + 1..clusters.len() {
                    let mut u = clusters[a].0.clone();
                    u.extend(&clusters[b].0);
                    u.sort_unstable();
                    let (r, p) = minimax_radius(d, &u);
                    let attaining = u
                        .iter()
                        .filter(|&&x| u.iter().map(|&y| d.get(x, y)).fold(0.0, f64::max) == r)
                        .count();
                    let (pa, pb) = (clusters[a].1, clusters[b].1);
                    cands.push((r, (pa.min(pb), pa.max(pb)), a, b, p, u, attaining));
                }
            }
            cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            if cands.len() > 1 && cands[0].0 == cands[1].0 {
                tied = true;
            }
            let (r, _, a, b, p, u, attaining) = cands.swap_remove(0);
            if attaining > 1 && u.len() > 2 {
                tied = true;
            }
            out.push((r, p, u.clone()));
            clusters.remove(b);
            clusters.remove(a);
            clusters.push((u, p));
        }
        (out, tied)
    }

    #[test]
    fn matches_brute_force() {
        for seed in 0..40 {
            let d = random_dist(seed, 2 + (seed as usize % 9));
            let t = minimax_cluster(&d);
            let (oracle, _) = brute_force(&d);
            for (i, (m, (r, p, u))) in t.merges.iter().zip(&oracle).enumerate() {
                assert_eq!((m.height, m.prototype), (*r, *p), "seed {seed} step {i}");
                assert_eq!(&t.members(t.n + i), u);
            }
        }
    }

    /// Every node's prototype attains the node's radius over its leaves.
    fn check_tree(d: &DistanceMatrix, t: &ClusterTree) {
        assert!(!t.has_inversion());
        for (i, m) in t.merges.iter().enumerate() {
            let members = t.members(t.n + i);
            assert!(members.contains(&m.prototype));
            let (r, p) = minimax_radius(d, &members);
            assert_eq!((r, p), (m.height, m.prototype));
        }
    }

    proptest! {
        #[test]
        fn tree_matches_radius_definition(seed in any::<u64>(), n in 1usize..12) {
            let d = random_dist(seed, n);
            check_tree(&d, &minimax_cluster(&d));
        }

        #[test]
        fn permutation_equivariant(seed in any::<u64>(), n in 2usize..10, rot in 0usize..10) {
            let d = random_dist(seed, n);
            let (_, tied) = brute_force(&d);
            prop_assume!(!tied);
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let dp = d.subset(&perm);
            let a = minimax_cluster(&d);
            let b = minimax_cluster(&dp);
            for (i, (ma, mb)) in a.merges.iter().zip(&b.merges).enumerate() {
                prop_assert_eq!(ma.height, mb.height);
                let mut members_b: Vec<usize> = b.members(n + i).into_iter().map(|m| perm[m]).collect();
                members_b.sort_unstable();
                let members_a = a.members(n + i);
                prop_assert_eq!(&members_a, &members_b);
                // Two-point clusters tie by construction; the lowest index wins.
                if members_a.len() > 2 {
                    prop_assert_eq!(ma.prototype, perm[mb.prototype]);
                }
            }
        }

        #[test]
        fn cut_size_non_increasing(seed in any::<u64>(), n in 1usize..15) {
            let t = minimax_cluster(&random_dist(seed, n));
            let mut prev = usize::MAX;
            for k in 0..=20 {
                let c = cut_prototypes(&t, k as f64 / 20.0).len();
                prop_assert!(c <= prev);
                prev = c;
            }
        }
    }
}
