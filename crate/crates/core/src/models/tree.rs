//! CART regression tree shared by the forest and the boosting stages.
//!
//! Splits maximise the reduction in squared error (exact greedy search over
//! every distinct value). Thresholds sit at the midpoint between adjacent
//! distinct values; samples with `x <= threshold` go left. Among equal gains
//! the lowest feature index wins, then the lowest threshold.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Candidate features drawn per split; `None` considers all.
    pub features_per_split: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: None,
        }
    }
}

impl Tree {
    /// A tree with a single leaf.
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Index of the leaf node `x` falls into.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    pub(crate) fn set_leaf_value(&mut self, index: usize, v: f64) {
        if let Node::Leaf { value } = &mut self.nodes[index] {
            *value = v;
        }
    }

    /// Fits a tree to `y` over the rows listed in `samples` (repeats count as
    /// weight). `rng` is only consulted when `features_per_split` is smaller
    /// than the feature count.
    pub fn fit(
        x: &Matrix,
        y: &[f64],
        samples: &[usize],
        params: &TreeParams,
        mut rng: Option<&mut Rng>,
    ) -> Self {
        assert!(!samples.is_empty(), "cannot fit a tree on zero samples");
        let mut builder = Builder {
            x,
            y,
            params,
            nodes: Vec::new(),
            order: Vec::with_capacity(samples.len()),
        };
        let mut work = samples.to_vec();
        builder.grow(&mut work, 0, &mut rng);
        Self {
            nodes: builder.nodes,
        }
    }
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    params: &'a TreeParams,
    nodes: Vec<Node>,
    order: Vec<(f64, f64)>,
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

impl Builder<'_> {
    fn grow(&mut self, samples: &mut [usize], depth: usize, rng: &mut Option<&mut Rng>) -> usize {
        let n = samples.len();
        let sum: f64 = samples.iter().map(|&i| self.y[i]).sum();
        let mean = sum / n as f64;
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: mean });

        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        let min_leaf = self.params.min_samples_leaf.max(1);
        if !depth_ok || n < 2 * min_leaf {
            return id;
        }
        let sse: f64 = samples.iter().map(|&i| (self.y[i] - mean).powi(2)).sum();
        if sse <= 0.0 {
            return id;
        }

        let Some(best) = self.best_split(samples, sum, sse, min_leaf, rng) else {
            return id;
        };

        let mid = partition(samples, |i| self.x.get(i, best.feature) <= best.threshold);
        let (l, r) = samples.split_at_mut(mid);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    fn best_split(
        &mut self,
        samples: &[usize],
        total: f64,
        sse: f64,
        min_leaf: usize,
        rng: &mut Option<&mut Rng>,
    ) -> Option<Candidate> {
        let d = self.x.n_cols();
        let k = self.params.features_per_split.unwrap_or(d).clamp(1, d);
        let features: Vec<usize> = if k < d {
            let r = rng
                .as_deref_mut()
                .expect("feature subsampling requires an rng");
            let mut f = sample(r, d, k).into_vec();
            f.sort_unstable();
            f
        } else {
            (0..d).collect()
        };

        let n = samples.len();
        let parent = total * total / n as f64;
        let mut best: Option<Candidate> = None;
        for f in features {
            self.order.clear();
            self.order
                .extend(samples.iter().map(|&i| (self.x.get(i, f), self.y[i])));
            self.order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for pos in 0..n - 1 {
                left_sum += self.order[pos].1;
                let n_left = pos + 1;
                let (a, b) = (self.order[pos].0, self.order[pos + 1].0);
                if a == b || n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / (n - n_left) as f64
                    - parent;
                if gain > 1e-12 * sse && best.as_ref().is_none_or(|c| gain > c.gain) {
                    best = Some(Candidate {
                        gain,
                        feature: f,
                        threshold: midpoint(a, b),
                    });
                }
            }
        }
        best
    }
}

/// In-place partition; returns the count of elements satisfying `pred`,
/// which end up first. Relative order inside each side is preserved.
fn partition(v: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let (mut yes, no): (Vec<usize>, Vec<usize>) = v.iter().partition(|&&i| pred(i));
    let k = yes.len();
    yes.extend(no);
    v.copy_from_slice(&yes);
    k
}
