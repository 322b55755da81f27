use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forest::{Hyperparams, SubspaceMode};
use crate::matrix::Matrix;

/// Two candidate splits whose child SSE differ by less than this fraction of
/// the node SSE are treated as equal, so the earlier candidate (lower feature
/// index, then lower threshold) is kept. A split must also improve on the
/// node SSE by more than this margin.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        n_samples: usize,
    },
}

/// A regression tree stored as a preorder node array; the root is node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    n_features: usize,
}

impl Tree {
    pub(crate) fn from_nodes(nodes: Vec<Node>, n_features: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidArgument("tree has no nodes".into()));
        }
        for (i, node) in nodes.iter().enumerate() {
            if let Node::Split {
                feature,
                left,
                right,
                threshold,
            } = *node
            {
                if feature >= n_features
                    || left <= i
                    || right <= i
                    || left >= nodes.len()
                    || right >= nodes.len()
                    || !threshold.is_finite()
                {
                    return Err(Error::InvalidArgument(format!("malformed split node {i}")));
                }
            }
        }
        Ok(Tree { nodes, n_features })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Index of the leaf a row lands in.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[feature] <= threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes[0] {
            Node::Split {
                feature, threshold, ..
            } => Some((feature, threshold)),
            Node::Leaf { .. } => None,
        }
    }
}

pub(crate) fn check_training_data(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.n_rows() == 0 || x.n_cols() == 0 {
        return Err(Error::Empty(
            "training matrix has no rows or no columns".into(),
        ));
    }
    if y.len() != x.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: x.n_rows(),
            actual: y.len(),
        });
    }
    Ok(())
}

/// Grows one regression tree on every row of `x`.
pub fn fit_tree(x: &Matrix, y: &[f64], params: &Hyperparams, seed: u64) -> Result<Tree> {
    check_training_data(x, y)?;
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<usize> = (0..x.n_rows()).collect();
    Ok(grow(x, y, params, rows, &mut rng)?.0)
}

/// Grows a tree on `rows` (repeats allowed), returning it with the SSE
/// decrease attributed to each feature.
pub(crate) fn grow(
    x: &Matrix,
    y: &[f64],
    params: &Hyperparams,
    mut rows: Vec<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<(Tree, Vec<f64>)> {
    let p = x.n_cols();
    let mtry = params.max_features.resolve(p)?;
    let tree_subset = match params.subspace {
        SubspaceMode::PerTree => Some(draw_features(rng, p, mtry)),
        SubspaceMode::PerSplit => None,
    };
    let mut builder = Builder {
        x,
        y,
        params,
        mtry,
        tree_subset,
        rng,
        nodes: Vec::new(),
        importance: vec![0.0; p],
        scratch: Vec::with_capacity(rows.len()),
    };
    builder.build(&mut rows, 0);
    let Builder {
        nodes, importance, ..
    } = builder;
    Ok((
        Tree {
            nodes,
            n_features: p,
        },
        importance,
    ))
}

fn draw_features(rng: &mut ChaCha8Rng, p: usize, m: usize) -> Vec<usize> {
    if m >= p {
        return (0..p).collect();
    }
    let mut f = sample(rng, p, m).into_vec();
    f.sort_unstable();
    f
}

struct Candidate {
    feature: usize,
    threshold: f64,
    children_sse: f64,
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    params: &'a Hyperparams,
    mtry: usize,
    tree_subset: Option<Vec<usize>>,
    rng: &'a mut ChaCha8Rng,
    nodes: Vec<Node>,
    importance: Vec<f64>,
    scratch: Vec<(f64, f64)>,
}

impl Builder<'_> {
    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let n = rows.len();

        // Mean and SSE over targets in sorted order, so the result does not
        // depend on the order rows arrive in.
        let mut ys: Vec<f64> = rows.iter().map(|&r| self.y[r]).collect();
        ys.sort_by(f64::total_cmp);
        let mean = ys.iter().sum::<f64>() / n as f64;
        let sse: f64 = ys.iter().map(|v| (v - mean) * (v - mean)).sum();
        let leaf = Node::Leaf {
            value: mean,
            n_samples: n,
        };

        let depth_reached = self.params.max_depth.is_some_and(|d| depth >= d);
        let constant = ys.first() == ys.last();
        if depth_reached || n < self.params.min_samples_split || constant {
            self.nodes.push(leaf);
            return id;
        }

        let features = match &self.tree_subset {
            Some(f) => f.clone(),
            None => draw_features(self.rng, self.x.n_cols(), self.mtry),
        };
        let Some(best) = self.best_split(rows, &features, mean, sse) else {
            self.nodes.push(leaf);
            return id;
        };

        self.importance[best.feature] += sse - best.children_sse;
        self.nodes.push(leaf); // placeholder, replaced below
        let (x, f, t) = (self.x, best.feature, best.threshold);
        let split_at = partition(rows, |&r| x.get(r, f) <= t);
        let (left_rows, right_rows) = rows.split_at_mut(split_at);
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: f,
            threshold: t,
            left,
            right,
        };
        id
    }

    fn best_split(
        &mut self,
        rows: &[usize],
        features: &[usize],
        mean: f64,
        node_sse: f64,
    ) -> Option<Candidate> {
        let n = rows.len();
        let min_leaf = self.params.min_samples_leaf;
        let tol = TIE_TOLERANCE * node_sse;
        let mut best: Option<Candidate> = None;

        for &f in features {
            self.scratch.clear();
            self.scratch
                .extend(rows.iter().map(|&r| (self.x.get(r, f), self.y[r] - mean)));
            self.scratch
                .sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

            let total: f64 = self.scratch.iter().map(|s| s.1).sum();
            let total_sq: f64 = self.scratch.iter().map(|s| s.1 * s.1).sum();
            let mut sum_l = 0.0;
            let mut sq_l = 0.0;
            for i in 0..n - 1 {
                let (xv, yv) = self.scratch[i];
                sum_l += yv;
                sq_l += yv * yv;
                let next = self.scratch[i + 1].0;
                if next <= xv {
                    continue;
                }
                let n_l = i + 1;
                let n_r = n - n_l;
                if n_l < min_leaf || n_r < min_leaf {
                    continue;
                }
                let sum_r = total - sum_l;
                let sq_r = total_sq - sq_l;
                let sse_l = (sq_l - sum_l * sum_l / n_l as f64).max(0.0);
                let sse_r = (sq_r - sum_r * sum_r / n_r as f64).max(0.0);
                let children = sse_l + sse_r;
                let better = match &best {
                    None => true,
                    Some(b) => children < b.children_sse - tol,
                };
                if better {
                    best = Some(Candidate {
                        feature: f,
                        threshold: midpoint(xv, next),
                        children_sse: children,
                    });
                }
            }
        }
        best.filter(|b| node_sse - b.children_sse > tol)
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

/// Moves rows satisfying `pred` to the front, preserving relative order on
/// both sides. Returns the number of such rows.
fn partition(rows: &mut [usize], pred: impl Fn(&usize) -> bool) -> usize {
    let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|r| pred(r));
    let k = left.len();
    rows[..k].copy_from_slice(&left);
    rows[k..].copy_from_slice(&right);
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::MaxFeatures;
    use proptest::prelude::*;

    fn full(p: usize) -> Hyperparams {
        Hyperparams {
            n_trees: 1,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::Count(p),
            bootstrap: false,
            subspace: SubspaceMode::PerSplit,
        }
    }

    fn col(v: &[f64]) -> Matrix {
        Matrix::new(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn constant_target_is_single_leaf() {
        let t = fit_tree(&col(&[1.0, 2.0, 3.0]), &[4.0, 4.0, 4.0], &full(1), 0).unwrap();
        assert_eq!(
            t.nodes(),
            &[Node::Leaf {
                value: 4.0,
                n_samples: 3
            }]
        );
    }

    #[test]
    fn single_row_is_leaf() {
        let t = fit_tree(&col(&[1.0]), &[9.5], &full(1), 0).unwrap();
        assert_eq!(
            t.nodes(),
            &[Node::Leaf {
                value: 9.5,
                n_samples: 1
            }]
        );
    }

    #[test]
    fn step_function_splits_at_midpoint() {
        let t = fit_tree(
            &col(&[0.0, 1.0, 2.0, 3.0]),
            &[0.0, 0.0, 10.0, 10.0],
            &full(1),
            0,
        )
        .unwrap();
        assert_eq!(
            t.nodes(),
            &[
                Node::Split {
                    feature: 0,
                    threshold: 1.5,
                    left: 1,
                    right: 2
                },
                Node::Leaf {
                    value: 0.0,
                    n_samples: 2
                },
                Node::Leaf {
                    value: 10.0,
                    n_samples: 2
                },
            ]
        );
    }

    #[test]
    fn min_samples_leaf_blocks_small_children() {
        let p = Hyperparams {
            min_samples_leaf: 2,
            ..full(1)
        };
        let t = fit_tree(&col(&[0.0, 1.0, 2.0, 3.0]), &[0.0, 0.0, 0.0, 10.0], &p, 0).unwrap();
        assert_eq!(t.root_split(), Some((0, 1.5)));
        for node in t.nodes() {
            if let Node::Leaf { n_samples, .. } = node {
                assert!(*n_samples >= 2);
            }
        }
    }

    #[test]
    fn max_depth_is_respected() {
        let x: Vec<f64> = (0..64).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let p = Hyperparams {
            max_depth: Some(3),
            ..full(1)
        };
        let t = fit_tree(&col(&x), &y, &p, 0).unwrap();
        assert_eq!(t.depth(), 3);
    }

    #[test]
    fn constant_features_give_leaf() {
        let x = Matrix::new(4, 2, vec![1.0, 5.0, 1.0, 5.0, 1.0, 5.0, 1.0, 5.0]).unwrap();
        let t = fit_tree(&x, &[1.0, 2.0, 3.0, 4.0], &full(2), 0).unwrap();
        assert_eq!(t.nodes().len(), 1);
    }

    #[test]
    fn ties_prefer_lower_feature_then_lower_threshold() {
        // Both features separate the targets identically.
        let x = Matrix::new(4, 2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        let t = fit_tree(&x, &[0.0, 0.0, 5.0, 5.0], &full(2), 0).unwrap();
        assert_eq!(t.root_split(), Some((0, 1.5)));
        // Symmetric targets: splits at 0.5 and 2.5 have equal SSE.
        let t = fit_tree(
            &col(&[0.0, 1.0, 2.0, 3.0]),
            &[1.0, 0.0, 0.0, 1.0],
            &full(1),
            0,
        )
        .unwrap();
        assert_eq!(t.root_split(), Some((0, 0.5)));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_tree(&Matrix::new(0, 1, vec![]).unwrap(), &[], &full(1), 0).is_err());
        assert!(fit_tree(&col(&[1.0, 2.0]), &[1.0], &full(1), 0).is_err());
    }

    #[test]
    fn per_tree_subspace_uses_one_subset() {
        let n = 40;
        let x: Vec<f64> = (0..n * 4).map(|i| ((i * 37) % 101) as f64).collect();
        let x = Matrix::new(n, 4, x).unwrap();
        let y: Vec<f64> = (0..n).map(|i| x.get(i, 0) + 2.0 * x.get(i, 3)).collect();
        let p = Hyperparams {
            max_features: MaxFeatures::Count(2),
            subspace: SubspaceMode::PerTree,
            ..full(4)
        };
        for seed in 0..10 {
            let t = fit_tree(&x, &y, &p, seed).unwrap();
            let used: std::collections::BTreeSet<usize> = t
                .nodes()
                .iter()
                .filter_map(|n| match n {
                    Node::Split { feature, .. } => Some(*feature),
                    _ => None,
                })
                .collect();
            assert!(used.len() <= 2, "seed {seed}: {used:?}");
        }
    }

    proptest! {
        #[test]
        fn permuting_rows_keeps_structure(
            data in prop::collection::vec((0u8..6, 0u8..6, -20i32..20), 2..30),
            rot in 0usize..30,
        ) {
            let rows: Vec<[f64; 2]> = data.iter().map(|&(a, b, _)| [a as f64, b as f64]).collect();
            let y: Vec<f64> = data.iter().map(|&(_, _, t)| t as f64).collect();
            let x = Matrix::from_rows(&rows).unwrap();
            let k = rot % rows.len();
            let perm: Vec<usize> = (0..rows.len()).map(|i| (i + k) % rows.len()).collect();
            let xp = x.select_rows(&perm);
            let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
            let a = fit_tree(&x, &y, &full(2), 1).unwrap();
            let b = fit_tree(&xp, &yp, &full(2), 1).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn monotone_transform_keeps_partition(
            data in prop::collection::vec((0.0f64..10.0, -50.0f64..50.0), 2..40),
        ) {
            let x: Vec<f64> = data.iter().map(|d| d.0).collect();
            let y: Vec<f64> = data.iter().map(|d| d.1).collect();
            let xt: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v).collect();
            let params = Hyperparams { max_depth: Some(4), ..full(1) };
            let a = fit_tree(&col(&x), &y, &params, 3).unwrap();
            let b = fit_tree(&col(&xt), &y, &params, 3).unwrap();
            for i in 0..x.len() {
                prop_assert_eq!(a.leaf_index(&[x[i]]), b.leaf_index(&[xt[i]]));
            }
        }

        #[test]
        fn predictions_within_target_range(
            data in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, -5.0f64..5.0), 1..40),
            q in prop::collection::vec((-1.0f64..2.0, -1.0f64..2.0), 1..10),
        ) {
            let rows: Vec<[f64; 2]> = data.iter().map(|d| [d.0, d.1]).collect();
            let y: Vec<f64> = data.iter().map(|d| d.2).collect();
            let t = fit_tree(&Matrix::from_rows(&rows).unwrap(), &y, &full(2), 0).unwrap();
            let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (a, b) in q {
                let v = t.predict_row(&[a, b]);
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }
    }
}
