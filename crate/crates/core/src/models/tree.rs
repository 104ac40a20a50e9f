//! Regression tree kernel shared by the boosted and bagged families.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::features::FeatureMatrix;

/// Column-major copy of a feature matrix.
#[derive(Debug, Clone)]
pub struct Columns {
    pub n: usize,
    pub cols: Vec<Vec<f64>>,
}

impl Columns {
    pub fn from_matrix(m: &FeatureMatrix) -> Self {
        Self {
            n: m.n_rows(),
            cols: (0..m.n_features()).map(|j| m.column(j)).collect(),
        }
    }

    pub fn p(&self) -> usize {
        self.cols.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

/// A binary tree stored as a node arena; the root is node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Add each split's gain to its feature's slot.
    pub fn accumulate_gain(&self, importance: &mut [f64]) {
        for node in &self.nodes {
            if let Node::Split { feature, gain, .. } = node {
                importance[*feature] += gain;
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdRule {
    /// Best midpoint between consecutive distinct values.
    Best,
    /// One uniform threshold per candidate feature.
    Random,
}

/// How many of the tree's features are candidates at each split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSampling {
    /// `ceil(rate * change^depth * m)`.
    Rate { rate: f64, change: f64 },
    /// `round(mtries * change^depth)`.
    Count { mtries: usize, change: f64 },
}

impl SplitSampling {
    fn count(self, depth: usize, m: usize) -> usize {
        let k = match self {
            SplitSampling::Rate { rate, change } => {
                (rate * change.powi(depth as i32) * m as f64 - 1e-9).ceil()
            }
            SplitSampling::Count { mtries, change } => (mtries as f64 * change.powi(depth as i32)).round(),
        };
        (k.max(1.0) as usize).min(m)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GrowParams {
    pub max_depth: usize,
    pub min_rows: f64,
    /// Minimum absolute reduction in squared error for a split.
    pub min_split_improvement: f64,
    pub sampling: SplitSampling,
    pub rule: ThresholdRule,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct Grower<'a> {
    cols: &'a Columns,
    target: &'a [f64],
    features: &'a [usize],
    params: GrowParams,
    leaf: &'a dyn Fn(&[usize]) -> f64,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn build(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let splittable = depth < self.params.max_depth && rows.len() as f64 >= 2.0 * self.params.min_rows;
        let best = if splittable {
            self.best_split(&rows, depth, rng)
        } else {
            None
        };
        match best {
            Some(c) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&i| self.cols.cols[c.feature][i] <= c.threshold);
                let left = self.build(l, depth + 1, rng);
                let right = self.build(r, depth + 1, rng);
                self.nodes[id] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right,
                    gain: c.gain,
                };
            }
            None => {
                self.nodes[id] = Node::Leaf {
                    value: (self.leaf)(&rows),
                };
            }
        }
        id
    }

    fn best_split(&self, rows: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> Option<Candidate> {
        let m = self.features.len();
        let k = self.params.sampling.count(depth, m);
        let mut candidates: Vec<usize> = if k == m {
            self.features.to_vec()
        } else {
            let mut picked: Vec<usize> = index::sample(rng, m, k)
                .into_iter()
                .map(|i| self.features[i])
                .collect();
            picked.sort_unstable();
            picked
        };
        candidates.dedup();

        let n = rows.len() as f64;
        let total: f64 = rows.iter().map(|&i| self.target[i]).sum();
        let base = total * total / n;
        let min_rows = self.params.min_rows;
        let mut best: Option<Candidate> = None;
        let mut consider = |feature: usize, threshold: f64, sl: f64, nl: f64| {
            let nr = n - nl;
            if nl < min_rows || nr < min_rows {
                return;
            }
            let sr = total - sl;
            let gain = sl * sl / nl + sr * sr / nr - base;
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(Candidate {
                    feature,
                    threshold,
                    gain,
                });
            }
        };

        for f in candidates {
            let x = &self.cols.cols[f];
            match self.params.rule {
                ThresholdRule::Best => {
                    let mut order = rows.to_vec();
                    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
                    let mut sl = 0.0;
                    for k in 0..order.len() - 1 {
                        sl += self.target[order[k]];
                        let (lo, hi) = (x[order[k]], x[order[k + 1]]);
                        if lo == hi {
                            continue;
                        }
                        let mut t = lo + (hi - lo) / 2.0;
                        if t >= hi {
                            t = lo;
                        }
                        consider(f, t, sl, (k + 1) as f64);
                    }
                }
                ThresholdRule::Random => {
                    let (lo, hi) = rows
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &i| {
                            (a.min(x[i]), b.max(x[i]))
                        });
                    if lo >= hi {
                        continue;
                    }
                    let t = rng.random_range(lo..hi);
                    let (mut sl, mut nl) = (0.0, 0.0);
                    for &i in rows {
                        if x[i] <= t {
                            sl += self.target[i];
                            nl += 1.0;
                        }
                    }
                    consider(f, t, sl, nl);
                }
            }
        }
        best.filter(|b| b.gain > 0.0 && b.gain >= self.params.min_split_improvement)
    }
}

/// Grow one tree on `rows` (duplicates allowed) fitting `target` by squared
/// error, restricted to `features`. Leaf values come from `leaf`.
pub fn grow(
    cols: &Columns,
    target: &[f64],
    rows: Vec<usize>,
    features: &[usize],
    params: GrowParams,
    leaf: &dyn Fn(&[usize]) -> f64,
    rng: &mut ChaCha8Rng,
) -> Tree {
    if rows.is_empty() || features.is_empty() {
        return Tree::leaf(leaf(&rows));
    }
    let mut g = Grower {
        cols,
        target,
        features,
        params,
        leaf,
        nodes: Vec::new(),
    };
    g.build(rows, 0, rng);
    Tree { nodes: g.nodes }
}

/// `ceil(rate * p)` features drawn without replacement, sorted.
pub fn sample_features(p: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let k = ((rate * p as f64 - 1e-9).ceil().max(1.0) as usize).min(p);
    if k == p {
        return (0..p).collect();
    }
    let mut v = index::sample(rng, p, k).into_vec();
    v.sort_unstable();
    v
}

/// `round(rate * n)` rows without replacement, sorted; all rows when rate is 1.
pub fn sample_rows(n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let k = ((rate * n as f64).round().max(1.0) as usize).min(n);
    if k == n {
        return (0..n).collect();
    }
    let mut v = index::sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn params(depth: usize, min_rows: f64) -> GrowParams {
        GrowParams {
            max_depth: depth,
            min_rows,
            min_split_improvement: 0.0,
            sampling: SplitSampling::Rate {
                rate: 1.0,
                change: 1.0,
            },
            rule: ThresholdRule::Best,
        }
    }

    fn mean_leaf(target: &[f64]) -> impl Fn(&[usize]) -> f64 + '_ {
        move |rows: &[usize]| rows.iter().map(|&i| target[i]).sum::<f64>() / rows.len() as f64
    }

    #[test]
    fn stump_picks_the_sse_minimizing_midpoint() {
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = vec![0.0, 0.1, 0.0, 1.0, 0.9, 1.0];
        let cols = Columns {
            n: 6,
            cols: vec![x.clone()],
        };
        let leaf = mean_leaf(&y);
        let t = grow(
            &cols,
            &y,
            (0..6).collect(),
            &[0],
            params(1, 1.0),
            &leaf,
            &mut seed::rng(0),
        );
        let Node::Split { threshold, .. } = t.nodes[0] else {
            panic!("expected a split");
        };
        assert_eq!(threshold, 3.5);
        assert!((t.predict(&[0.0]) - 0.1 / 3.0).abs() < 1e-12);
        assert!((t.predict(&[9.0]) - 2.9 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ties_never_straddle_a_threshold() {
        let x = vec![1.0, 1.0, 1.0, 2.0];
        let y = vec![0.0, 1.0, 0.0, 1.0];
        let cols = Columns { n: 4, cols: vec![x] };
        let leaf = mean_leaf(&y);
        let t = grow(
            &cols,
            &y,
            (0..4).collect(),
            &[0],
            params(3, 1.0),
            &leaf,
            &mut seed::rng(0),
        );
        assert_eq!(t.depth(), 1);
        assert_eq!(t.predict(&[1.0]), 1.0 / 3.0);
    }

    #[test]
    fn min_rows_is_respected() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = (0..10).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
        let cols = Columns { n: 10, cols: vec![x] };
        let leaf = |rows: &[usize]| rows.len() as f64;
        let t = grow(
            &cols,
            &y,
            (0..10).collect(),
            &[0],
            params(10, 3.0),
            &leaf,
            &mut seed::rng(0),
        );
        for node in &t.nodes {
            if let Node::Leaf { value } = node {
                assert!(*value >= 3.0);
            }
        }
    }

    #[test]
    fn random_thresholds_lie_inside_the_range() {
        let x: Vec<f64> = (0..50).map(|i| f64::from(i) * 0.5).collect();
        let y: Vec<f64> = (0..50).map(|i| f64::from(i % 2)).collect();
        let cols = Columns { n: 50, cols: vec![x] };
        let leaf = mean_leaf(&y);
        let mut p = params(6, 1.0);
        p.rule = ThresholdRule::Random;
        let t = grow(&cols, &y, (0..50).collect(), &[0], p, &leaf, &mut seed::rng(3));
        for node in &t.nodes {
            if let Node::Split { threshold, .. } = node {
                assert!((0.0..24.5).contains(threshold));
            }
        }
    }

    #[test]
    fn sampling_counts() {
        let s = SplitSampling::Rate {
            rate: 0.5,
            change: 0.5,
        };
        assert_eq!(s.count(0, 10), 5);
        assert_eq!(s.count(1, 10), 3);
        assert_eq!(s.count(5, 10), 1);
        let c = SplitSampling::Count {
            mtries: 3,
            change: 2.0,
        };
        assert_eq!(c.count(2, 10), 10);
        assert_eq!(sample_features(10, 0.34, &mut seed::rng(1)).len(), 4);
        assert_eq!(
            sample_rows(10, 1.0, &mut seed::rng(1)),
            (0..10).collect::<Vec<_>>()
        );
    }
}
