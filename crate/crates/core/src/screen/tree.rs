//! CART trees over pre-binned features.
//!
//! Splits minimize the summed squared error of the node targets. On 0/1
//! targets that is half the Gini impurity times the node size, so the same
//! builder serves regression (variance reduction) and classification (Gini),
//! with leaf values being the mean target or the positive-class share.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Gains at or below this are not worth a split.
const MIN_GAIN: f64 = 1e-12;

/// Each feature's distinct training values and every row's bin index.
pub struct Binned {
    /// Sorted distinct values per feature.
    values: Vec<Vec<f64>>,
    /// Row-major bin index, `bins[i * p + f]`.
    bins: Vec<u32>,
    p: usize,
}

impl Binned {
    pub fn new(x: &DMatrix<f64>) -> Self {
        let (n, p) = x.shape();
        let mut values = Vec::with_capacity(p);
        let mut bins = vec![0u32; n * p];
        for f in 0..p {
            let mut v: Vec<f64> = x.column(f).iter().copied().collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            for i in 0..n {
                let b = v.partition_point(|&u| u < x[(i, f)]);
                bins[i * p + f] = b as u32;
            }
            values.push(v);
        }
        Binned { values, bins, p }
    }

    pub fn n_features(&self) -> usize {
        self.p
    }

    fn bin(&self, row: usize, f: usize) -> usize {
        self.bins[row * self.p + f] as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Features considered per split; `None` means all.
    pub max_features: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

struct Builder<'a> {
    data: &'a Binned,
    y: &'a [f64],
    params: TreeParams,
    rng: &'a mut ChaCha8Rng,
    nodes: Vec<Node>,
    /// Training rows; each node owns a contiguous range, partitioned in place.
    rows: Vec<usize>,
    /// Row range of every leaf, indexed by node.
    ranges: Vec<(usize, usize)>,
    feats: Vec<usize>,
    cnt: Vec<usize>,
    sum: Vec<f64>,
}

impl Builder<'_> {
    fn leaf(&mut self, lo: usize, hi: usize) -> usize {
        let value = self.rows[lo..hi].iter().map(|&i| self.y[i]).sum::<f64>() / (hi - lo) as f64;
        self.nodes.push(Node::Leaf { value });
        self.ranges.push((lo, hi));
        self.nodes.len() - 1
    }

    /// Candidate features for one split, ascending.
    fn features(&mut self) -> Vec<usize> {
        let p = self.data.p;
        match self.params.max_features {
            Some(k) if k < p => {
                let k = k.max(1);
                // partial Fisher-Yates; any prior order of `feats` is fine
                for j in 0..k {
                    let r = self.rng.random_range(j..p);
                    self.feats.swap(j, r);
                }
                let mut f = self.feats[..k].to_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        }
    }

    /// Best (feature, bin) split: rows with bin ≤ the returned bin go left.
    fn best_split(&mut self, lo: usize, hi: usize) -> Option<(usize, usize)> {
        let m = hi - lo;
        let total: f64 = self.rows[lo..hi].iter().map(|&i| self.y[i]).sum();
        let parent = total * total / m as f64;
        let mut best: Option<(f64, usize, usize)> = None;
        for f in self.features() {
            let nb = self.data.values[f].len();
            if nb < 2 {
                continue;
            }
            let (cnt, sum) = (&mut self.cnt, &mut self.sum);
            cnt.clear();
            cnt.resize(nb, 0);
            sum.clear();
            sum.resize(nb, 0.0);
            for &i in &self.rows[lo..hi] {
                let b = self.data.bin(i, f);
                cnt[b] += 1;
                sum[b] += self.y[i];
            }
            let (mut nl, mut sl) = (0usize, 0.0f64);
            for b in 0..nb - 1 {
                nl += cnt[b];
                sl += sum[b];
                if cnt[b] == 0 || nl == m {
                    continue;
                }
                let nr = m - nl;
                let sr = total - sl;
                let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - parent;
                let better = match best {
                    None => gain > MIN_GAIN,
                    Some((g, _, _)) => gain > g + MIN_GAIN * g.abs().max(1.0),
                };
                if better {
                    best = Some((gain, f, b));
                }
            }
        }
        best.map(|(_, f, b)| (f, b))
    }

    fn grow(&mut self, lo: usize, hi: usize, depth: usize) -> usize {
        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        let first = self.y[self.rows[lo]];
        let pure = self.rows[lo..hi].iter().all(|&i| self.y[i] == first);
        if !depth_ok || pure || hi - lo < self.params.min_samples_split.max(2) {
            return self.leaf(lo, hi);
        }
        let Some((f, b)) = self.best_split(lo, hi) else {
            return self.leaf(lo, hi);
        };
        // stable in-place partition keeps row order independent of history
        let (mut left, mut right): (Vec<usize>, Vec<usize>) =
            self.rows[lo..hi].iter().partition(|&&i| self.data.bin(i, f) <= b);
        let mid = lo + left.len();
        let next = right.iter().map(|&i| self.data.bin(i, f)).min().unwrap_or(b + 1);
        left.append(&mut right);
        self.rows[lo..hi].copy_from_slice(&left);
        let v = &self.data.values[f];
        // midpoint to the first occupied bin above b
        let threshold = 0.5 * (v[b] + v[next]);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        self.ranges.push((0, 0));
        let l = self.grow(lo, mid, depth + 1);
        let r = self.grow(mid, hi, depth + 1);
        self.nodes[id] = Node::Split { feature: f, threshold, left: l, right: r };
        id
    }
}

impl Tree {
    /// Fits a tree on the given training rows (duplicates allowed, as in a
    /// bootstrap sample). Also returns each leaf's member rows by node index.
    pub fn fit_with_members(
        data: &Binned,
        y: &[f64],
        rows: Vec<usize>,
        params: TreeParams,
        rng: &mut ChaCha8Rng,
    ) -> (Tree, Vec<Vec<usize>>) {
        let (tree, rows, ranges) = Self::build(data, y, rows, params, rng);
        let members = ranges.iter().map(|&(lo, hi)| rows[lo..hi].to_vec()).collect();
        (tree, members)
    }

    fn build(
        data: &Binned,
        y: &[f64],
        rows: Vec<usize>,
        params: TreeParams,
        rng: &mut ChaCha8Rng,
    ) -> (Tree, Vec<usize>, Vec<(usize, usize)>) {
        assert!(!rows.is_empty(), "tree needs at least one row");
        let n = rows.len();
        let mut b = Builder {
            data,
            y,
            params,
            rng,
            nodes: Vec::new(),
            rows,
            ranges: Vec::new(),
            feats: (0..data.p).collect(),
            cnt: Vec::new(),
            sum: Vec::new(),
        };
        b.grow(0, n, 0);
        (Tree { nodes: b.nodes }, b.rows, b.ranges)
    }

    pub fn fit(data: &Binned, y: &[f64], rows: Vec<usize>, params: TreeParams, rng: &mut ChaCha8Rng) -> Tree {
        Self::build(data, y, rows, params, rng).0
    }

    pub fn set_leaf(&mut self, node: usize, v: f64) {
        if let Node::Leaf { value } = &mut self.nodes[node] {
            *value = v;
        }
    }

    pub fn predict_row(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    k = if x[(i, feature)] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows()).map(|i| self.predict_row(x, i)).collect()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, k: usize) -> usize {
            match t.nodes[k] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn params(max_depth: Option<usize>) -> TreeParams {
        TreeParams { max_depth, min_samples_split: 2, max_features: None }
    }

    #[test]
    fn memorizes_noiseless_target() {
        let x = DMatrix::from_fn(32, 5, |i, j| ((i >> j) & 1) as f64);
        let y: Vec<f64> = (0..32).map(|i| (i * 7 % 11) as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Tree::fit(&Binned::new(&x), &y, (0..32).collect(), params(None), &mut rng);
        assert_eq!(t.predict(&x), y);
    }

    #[test]
    fn depth_limit_respected() {
        let x = DMatrix::from_fn(64, 6, |i, j| ((i >> j) & 1) as f64);
        let y: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Tree::fit(&Binned::new(&x), &y, (0..64).collect(), params(Some(3)), &mut rng);
        assert_eq!(t.depth(), 3);
    }

    #[test]
    fn constant_feature_never_split() {
        let x = DMatrix::from_fn(20, 2, |i, j| if j == 0 { 4.0 } else { (i % 2) as f64 });
        let y: Vec<f64> = (0..20).map(|i| (i % 2) as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Tree::fit(&Binned::new(&x), &y, (0..20).collect(), params(None), &mut rng);
        assert!(t.nodes.iter().all(|n| !matches!(n, Node::Split { feature: 0, .. })));
    }

    #[test]
    fn threshold_between_observed_values() {
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 10.0, 11.0]);
        let y = [0.0, 0.0, 1.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Tree::fit(&Binned::new(&x), &y, vec![0, 1, 2, 3], params(None), &mut rng);
        assert!(matches!(t.nodes[0], Node::Split { threshold, .. } if threshold == 6.0));
    }
}
