use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf { value: f64 },
    /// Samples with `x[feature] < threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Regression tree stored as an arena; the root is `nodes[0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self { nodes: vec![Node::Leaf { value }] }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[feature] < threshold { left } else { right };
                }
            }
        }
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value } => Some(*value),
            Node::Split { .. } => None,
        })
    }

    /// The root split, if the tree has one.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes[0] {
            Node::Split { feature, threshold, .. } => Some((feature, threshold)),
            Node::Leaf { .. } => None,
        }
    }
}

/// Second-order split quality for one node.
#[derive(Clone, Copy, Debug)]
pub(crate) struct GainParams {
    pub lambda: f64,
    pub min_child_weight: f64,
}

impl GainParams {
    pub fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.lambda)
    }

    pub fn gain(&self, gl: f64, hl: f64, g: f64, h: f64) -> f64 {
        let (gr, hr) = (g - gl, h - hl);
        0.5 * (self.score(gl, hl) + self.score(gr, hr) - self.score(g, h))
    }

    pub fn leaf_weight(&self, g: f64, h: f64) -> f64 {
        -g / (h + self.lambda)
    }
}

/// Split point between two distinct sorted values, strictly above `lo`.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid > lo {
        mid
    } else {
        hi
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Open {
    node: usize,
    depth: usize,
    g: f64,
    h: f64,
}

/// Grows one tree level by level with exact greedy splits.
///
/// `sorted[f]` lists sample indices ordered by feature `f` (ties by index).
/// Leaf values are multiplied by `scale`.
pub(crate) fn grow(
    x: &[Vec<f64>],
    sorted: &[Vec<usize>],
    grad: &[f64],
    hess: &[f64],
    max_depth: usize,
    params: GainParams,
    scale: f64,
) -> Tree {
    let n = x.len();
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut owner = vec![0usize; n];
    let (g, h) = (grad.iter().sum(), hess.iter().sum());
    let mut open = vec![Open { node: 0, depth: 0, g, h }];

    while !open.is_empty() {
        // slot of each open node, indexed by arena id
        let mut slot = vec![usize::MAX; nodes.len()];
        for (s, o) in open.iter().enumerate() {
            if o.depth < max_depth {
                slot[o.node] = s;
            }
        }
        let mut best: Vec<Option<Candidate>> = vec![None; open.len()];
        let mut gl = vec![0.0; open.len()];
        let mut hl = vec![0.0; open.len()];
        let mut last: Vec<Option<f64>> = vec![None; open.len()];
        for (f, order) in sorted.iter().enumerate() {
            gl.iter_mut().for_each(|v| *v = 0.0);
            hl.iter_mut().for_each(|v| *v = 0.0);
            last.iter_mut().for_each(|v| *v = None);
            for &i in order {
                let s = slot[owner[i]];
                if s == usize::MAX {
                    continue;
                }
                let v = x[i][f];
                if let Some(prev) = last[s] {
                    if v > prev {
                        let o = &open[s];
                        let hr = o.h - hl[s];
                        if hl[s] >= params.min_child_weight && hr >= params.min_child_weight {
                            let gain = params.gain(gl[s], hl[s], o.g, o.h);
                            if gain > 0.0 && best[s].is_none_or(|b| gain > b.gain) {
                                best[s] = Some(Candidate { gain, feature: f, threshold: midpoint(prev, v) });
                            }
                        }
                    }
                }
                gl[s] += grad[i];
                hl[s] += hess[i];
                last[s] = Some(v);
            }
        }

        let mut next = Vec::new();
        let mut child_of = vec![(usize::MAX, usize::MAX); nodes.len()];
        for (s, o) in open.iter().enumerate() {
            match best[s] {
                None => nodes[o.node] = Node::Leaf { value: scale * params.leaf_weight(o.g, o.h) },
                Some(c) => {
                    let left = nodes.len();
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes[o.node] = Node::Split { feature: c.feature, threshold: c.threshold, left, right: left + 1 };
                    child_of[o.node] = (left, left + 1);
                    next.push(Open { node: left, depth: o.depth + 1, g: 0.0, h: 0.0 });
                    next.push(Open { node: left + 1, depth: o.depth + 1, g: 0.0, h: 0.0 });
                }
            }
        }
        let first_new = child_of.len();
        let mut sums = vec![(0.0, 0.0); nodes.len() - first_new];
        for i in 0..n {
            let parent = owner[i];
            if let Node::Split { feature, threshold, left, right } = nodes[parent] {
                if child_of[parent].0 == left {
                    owner[i] = if x[i][feature] < threshold { left } else { right };
                    let e = &mut sums[owner[i] - first_new];
                    e.0 += grad[i];
                    e.1 += hess[i];
                }
            }
        }
        for o in &mut next {
            (o.g, o.h) = sums[o.node - first_new];
        }
        open = next;
    }
    Tree { nodes }
}
