//! Gradient-boosted regression trees: squared error, exact greedy splits,
//! level-wise growth over presorted feature orders.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            n_trees: 100,
            max_depth: 4,
            learning_rate: 0.1,
            min_leaf: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    /// `x[feature] <= threshold` goes to `left`.
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(t, left as usize).max(walk(t, right as usize)),
            }
        }
        walk(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedRegressor {
    pub base_prediction: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl BoostedRegressor {
    pub fn constant(value: f64) -> Self {
        BoostedRegressor {
            base_prediction: value,
            learning_rate: 1.0,
            trees: Vec::new(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base_prediction + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    /// Fits `rows` (one feature slice per sample) to `y`.
    pub fn fit(rows: &[&[f64]], y: &[f64], params: &GbdtParams) -> Self {
        assert_eq!(rows.len(), y.len());
        let n = y.len();
        if n == 0 {
            return BoostedRegressor::constant(0.0);
        }
        let base = y.iter().sum::<f64>() / n as f64;
        let nf = rows[0].len();
        let cols: Vec<Vec<f64>> = (0..nf).map(|f| rows.iter().map(|r| r[f]).collect()).collect();
        let order: Vec<Vec<u32>> = cols
            .iter()
            .map(|c| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        let mut pred = vec![base; n];
        let mut trees = Vec::with_capacity(params.n_trees);
        let mut grower = Grower::new(n);
        for _ in 0..params.n_trees {
            let resid: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
            let tree = grower.grow(&cols, &order, &resid, params);
            for (i, p) in pred.iter_mut().enumerate() {
                *p += tree.predict(rows[i]);
            }
            trees.push(tree);
        }
        BoostedRegressor {
            base_prediction: base,
            learning_rate: params.learning_rate,
            trees,
        }
    }

    /// Prediction with only the first `k` trees.
    pub fn predict_truncated(&self, x: &[f64], k: usize) -> f64 {
        self.base_prediction + self.trees.iter().take(k).map(|t| t.predict(x)).sum::<f64>()
    }
}

#[derive(Clone, Copy)]
struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Grower {
    node_of: Vec<u32>,
}

impl Grower {
    fn new(n: usize) -> Self {
        Grower { node_of: vec![0; n] }
    }

    fn grow(&mut self, cols: &[Vec<f64>], order: &[Vec<u32>], resid: &[f64], p: &GbdtParams) -> Tree {
        let n = resid.len();
        self.node_of.iter_mut().for_each(|x| *x = 0);
        let mut nodes = vec![Node::Leaf(0.0)];
        let mut sum = vec![resid.iter().sum::<f64>()];
        let mut cnt = vec![n];
        // nodes still open for splitting, by node index
        let mut open: Vec<bool> = vec![true];
        let min_leaf = p.min_leaf.max(1);
        for _depth in 0..p.max_depth {
            let m = nodes.len();
            let mut best: Vec<Option<Best>> = vec![None; m];
            let mut lsum = vec![0.0; m];
            let mut lcnt = vec![0usize; m];
            let mut last: Vec<f64> = vec![f64::NAN; m];
            for (f, col) in cols.iter().enumerate() {
                lsum.iter_mut().for_each(|x| *x = 0.0);
                lcnt.iter_mut().for_each(|x| *x = 0);
                last.iter_mut().for_each(|x| *x = f64::NAN);
                for &i in &order[f] {
                    let i = i as usize;
                    let nd = self.node_of[i] as usize;
                    if !open[nd] {
                        continue;
                    }
                    let x = col[i];
                    if lcnt[nd] >= min_leaf && x > last[nd] && cnt[nd] - lcnt[nd] >= min_leaf {
                        let (sl, nl) = (lsum[nd], lcnt[nd] as f64);
                        let (sr, nr) = (sum[nd] - sl, (cnt[nd] - lcnt[nd]) as f64);
                        let gain = sl * sl / nl + sr * sr / nr - sum[nd] * sum[nd] / cnt[nd] as f64;
                        if gain > 1e-12 && best[nd].is_none_or(|b| gain > b.gain) {
                            let a = last[nd];
                            let mid = a + (x - a) / 2.0;
                            best[nd] = Some(Best {
                                gain,
                                feature: f,
                                threshold: if mid < x { mid } else { a },
                            });
                        }
                    }
                    lsum[nd] += resid[i];
                    lcnt[nd] += 1;
                    last[nd] = x;
                }
            }
            let mut any = false;
            let mut child_of: Vec<Option<(u32, u32)>> = vec![None; m];
            for nd in 0..m {
                if !open[nd] {
                    continue;
                }
                open[nd] = false;
                if let Some(b) = best[nd] {
                    let l = nodes.len() as u32;
                    nodes.push(Node::Leaf(0.0));
                    nodes.push(Node::Leaf(0.0));
                    sum.extend([0.0, 0.0]);
                    cnt.extend([0, 0]);
                    open.extend([true, true]);
                    nodes[nd] = Node::Split {
                        feature: b.feature as u32,
                        threshold: b.threshold,
                        left: l,
                        right: l + 1,
                    };
                    child_of[nd] = Some((l, l + 1));
                    any = true;
                }
            }
            if !any {
                break;
            }
            for i in 0..n {
                let nd = self.node_of[i] as usize;
                if let (Some((l, r)), Node::Split { feature, threshold, .. }) = (child_of[nd], &nodes[nd]) {
                    let c = if cols[*feature as usize][i] <= *threshold { l } else { r };
                    self.node_of[i] = c;
                    sum[c as usize] += resid[i];
                    cnt[c as usize] += 1;
                }
            }
        }
        for (nd, node) in nodes.iter_mut().enumerate() {
            if let Node::Leaf(v) = node {
                *v = if cnt[nd] > 0 {
                    p.learning_rate * sum[nd] / cnt[nd] as f64
                } else {
                    0.0
                };
            }
        }
        Tree { nodes }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let y = x
            .iter()
            .map(|r| if r[0] > 0.0 { 3.0 } else { -1.0 } + r[1] * r[1] + 0.1 * rng.gen::<f64>())
            .collect();
        (x, y)
    }

    fn sse(m: &BoostedRegressor, x: &[&[f64]], y: &[f64], k: usize) -> f64 {
        x.iter()
            .zip(y)
            .map(|(r, t)| (m.predict_truncated(r, k) - t).powi(2))
            .sum()
    }

    #[test]
    fn zero_trees_predict_base() {
        let m = BoostedRegressor::constant(2.5);
        assert_eq!(m.predict(&[1.0, 2.0]), 2.5);
    }

    #[test]
    fn constant_target() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64]).collect();
        let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let m = BoostedRegressor::fit(&rows, &[4.0; 50], &GbdtParams::default());
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        assert_eq!(m.predict(&[1000.0]), 4.0);
    }

    #[test]
    fn fits_a_step_and_a_curve() {
        let (x, y) = data(2000, 1);
        let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let m = BoostedRegressor::fit(&rows, &y, &GbdtParams::default());
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let tss: f64 = y.iter().map(|t| (t - mean).powi(2)).sum();
        let r2 = 1.0 - sse(&m, &rows, &y, m.trees.len()) / tss;
        assert!(r2 > 0.95, "r2 {r2}");
        assert!(m.trees.iter().all(|t| t.depth() <= 4));
    }

    #[test]
    fn training_error_never_increases() {
        let (x, y) = data(500, 2);
        let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let m = BoostedRegressor::fit(&rows, &y, &GbdtParams::default());
        let mut prev = f64::INFINITY;
        for k in 0..=m.trees.len() {
            let e = sse(&m, &rows, &y, k);
            assert!(e <= prev + 1e-9);
            prev = e;
        }
    }

    #[test]
    fn min_leaf_respected() {
        let (x, y) = data(40, 3);
        let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let p = GbdtParams {
            min_leaf: 15,
            ..Default::default()
        };
        let m = BoostedRegressor::fit(&rows, &y, &p);
        for t in &m.trees {
            let mut counts = vec![0usize; t.nodes.len()];
            for r in &rows {
                let mut i = 0;
                while let Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } = t.nodes[i]
                {
                    i = if r[feature as usize] <= threshold { left } else { right } as usize;
                }
                counts[i] += 1;
            }
            for (i, n) in t.nodes.iter().enumerate() {
                if matches!(n, Node::Leaf(_)) {
                    assert!(counts[i] >= 15);
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let (x, y) = data(300, 4);
        let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let a = BoostedRegressor::fit(&rows, &y, &GbdtParams::default());
        let b = BoostedRegressor::fit(&rows, &y, &GbdtParams::default());
        assert_eq!(a, b);
    }
}
