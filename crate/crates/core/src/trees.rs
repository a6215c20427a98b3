//! Axis-aligned CART trees: Gini classifiers, squared-error regressors onto
//! probability vectors, and small bootstrap forests.

use crate::datagen::BayesAnnotatedDataset;
use crate::error::{DistError, Result};
use crate::models::Predictor;
use crate::numkit::{clamp_prob, DenseMatrix, ProbVector, RandomStream};

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// Go left iff `x[feature] <= threshold`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        probs: ProbVector,
    },
}

/// A binary tree stored as a node arena; the root is node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    max_depth: usize,
    input_dim: usize,
    num_classes: usize,
}

impl DecisionTree {
    /// A tree from explicit nodes, checked for dangling links and depth.
    pub fn from_nodes(nodes: Vec<Node>, max_depth: usize, input_dim: usize) -> Result<Self> {
        let num_classes = nodes
            .iter()
            .find_map(|n| match n {
                Node::Leaf { probs } => Some(probs.len()),
                _ => None,
            })
            .ok_or_else(|| DistError::param("tree has no leaves"))?;
        let tree = DecisionTree {
            nodes,
            max_depth,
            input_dim,
            num_classes,
        };
        tree.validate()?;
        Ok(tree)
    }

    fn validate(&self) -> Result<()> {
        let mut stack = vec![(0usize, 0usize)];
        let mut seen = vec![false; self.nodes.len()];
        while let Some((i, depth)) = stack.pop() {
            let node = self
                .nodes
                .get(i)
                .ok_or_else(|| DistError::param(format!("dangling node index {i}")))?;
            if std::mem::replace(&mut seen[i], true) {
                return Err(DistError::param(format!("node {i} reached twice")));
            }
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= self.input_dim || !threshold.is_finite() {
                        return Err(DistError::param(format!("bad split at node {i}")));
                    }
                    if depth + 1 > self.max_depth {
                        return Err(DistError::param("tree deeper than max_depth"));
                    }
                    stack.push((*left, depth + 1));
                    stack.push((*right, depth + 1));
                }
                Node::Leaf { probs } => {
                    if probs.len() != self.num_classes {
                        return Err(DistError::param("leaves disagree on class count"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// Length of the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Index of the leaf that `x` falls into.
    pub fn leaf_index(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.input_dim {
            return Err(DistError::Dimension {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return Ok(i),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn leaf_probs(&self, x: &[f64]) -> Result<&ProbVector> {
        match &self.nodes[self.leaf_index(x)?] {
            Node::Leaf { probs } => Ok(probs),
            Node::Split { .. } => unreachable!("leaf_index stops at leaves"),
        }
    }
}

fn log_probs(p: &ProbVector) -> Vec<f64> {
    p.iter().map(|&v| clamp_prob(v).ln()).collect()
}

impl Predictor for DecisionTree {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(log_probs(self.leaf_probs(x)?))
    }

    fn predict_probs(&self, x: &[f64]) -> Result<ProbVector> {
        self.leaf_probs(x).cloned()
    }
}

/// What a node-splitting search minimises.
trait SplitCriterion {
    /// Node cost; zero means the node is pure.
    fn cost(&self, idx: &[usize]) -> f64;
    /// Best `(cost, position, threshold)` on `sorted`, already ordered by
    /// the feature; the left part is `sorted[..position]`.
    fn best_cut(&self, sorted: &[usize], values: &[f64], min_leaf: usize) -> Option<(f64, usize, f64)>;
    fn leaf(&self, idx: &[usize]) -> Result<ProbVector>;
}

fn candidate_positions<'a>(values: &'a [f64], min_leaf: usize) -> impl Iterator<Item = usize> + 'a {
    let n = values.len();
    (min_leaf.max(1)..=n.saturating_sub(min_leaf.max(1))).filter(move |&i| values[i - 1] < values[i])
}

fn midpoint(values: &[f64], pos: usize) -> f64 {
    let t = 0.5 * (values[pos - 1] + values[pos]);
    // The midpoint of adjacent floats can round up to the right value.
    if t < values[pos] {
        t
    } else {
        values[pos - 1]
    }
}

struct Gini<'a> {
    labels: &'a [usize],
    num_classes: usize,
}

fn gini_of(counts: &[f64], n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / n) * (c / n)).sum::<f64>()
}

impl Gini<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<f64> {
        let mut c = vec![0.0; self.num_classes];
        idx.iter().for_each(|&i| c[self.labels[i]] += 1.0);
        c
    }
}

impl SplitCriterion for Gini<'_> {
    fn cost(&self, idx: &[usize]) -> f64 {
        idx.len() as f64 * gini_of(&self.counts(idx), idx.len() as f64)
    }

    fn best_cut(&self, sorted: &[usize], values: &[f64], min_leaf: usize) -> Option<(f64, usize, f64)> {
        let n = sorted.len();
        let total = self.counts(sorted);
        let mut left = vec![0.0; self.num_classes];
        let mut filled = 0;
        let mut best: Option<(f64, usize, f64)> = None;
        for pos in candidate_positions(values, min_leaf) {
            while filled < pos {
                left[self.labels[sorted[filled]]] += 1.0;
                filled += 1;
            }
            let right: Vec<f64> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
            let (nl, nr) = (pos as f64, (n - pos) as f64);
            let cost = nl * gini_of(&left, nl) + nr * gini_of(&right, nr);
            if best.is_none_or(|(c, _, _)| cost < c) {
                best = Some((cost, pos, midpoint(values, pos)));
            }
        }
        best
    }

    /// Laplace add-one class frequencies.
    fn leaf(&self, idx: &[usize]) -> Result<ProbVector> {
        let denom = idx.len() as f64 + self.num_classes as f64;
        ProbVector::new(self.counts(idx).iter().map(|c| (c + 1.0) / denom).collect())
    }
}

struct SquaredError<'a> {
    targets: &'a [ProbVector],
    num_classes: usize,
}

impl SquaredError<'_> {
    fn sums(&self, idx: &[usize]) -> (Vec<f64>, f64) {
        let mut s = vec![0.0; self.num_classes];
        let mut sq = 0.0;
        for &i in idx {
            for (acc, v) in s.iter_mut().zip(self.targets[i].iter()) {
                *acc += v;
                sq += v * v;
            }
        }
        (s, sq)
    }
}

fn sse(sum: &[f64], sq: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    (sq - sum.iter().map(|s| s * s).sum::<f64>() / n).max(0.0)
}

impl SplitCriterion for SquaredError<'_> {
    fn cost(&self, idx: &[usize]) -> f64 {
        let first = &self.targets[idx[0]];
        if idx.iter().all(|&i| self.targets[i] == *first) {
            return 0.0;
        }
        let (s, sq) = self.sums(idx);
        sse(&s, sq, idx.len() as f64)
    }

    fn best_cut(&self, sorted: &[usize], values: &[f64], min_leaf: usize) -> Option<(f64, usize, f64)> {
        let n = sorted.len();
        let (total, total_sq) = self.sums(sorted);
        let mut left = vec![0.0; self.num_classes];
        let mut left_sq = 0.0;
        let mut filled = 0;
        let mut best: Option<(f64, usize, f64)> = None;
        for pos in candidate_positions(values, min_leaf) {
            while filled < pos {
                for (acc, v) in left.iter_mut().zip(self.targets[sorted[filled]].iter()) {
                    *acc += v;
                    left_sq += v * v;
                }
                filled += 1;
            }
            let right: Vec<f64> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
            let cost = sse(&left, left_sq, pos as f64) + sse(&right, total_sq - left_sq, (n - pos) as f64);
            if best.is_none_or(|(c, _, _)| cost < c) {
                best = Some((cost, pos, midpoint(values, pos)));
            }
        }
        best
    }

    /// Node mean, renormalised against rounding drift.
    fn leaf(&self, idx: &[usize]) -> Result<ProbVector> {
        let (s, _) = self.sums(idx);
        let total: f64 = s.iter().sum();
        ProbVector::new(s.into_iter().map(|v| v / total).collect())
    }
}

struct Grower<'a, C> {
    features: &'a DenseMatrix,
    criterion: C,
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

impl<C: SplitCriterion> Grower<'_, C> {
    fn grow(&mut self, idx: &mut [usize], depth: usize) -> Result<usize> {
        let here = self.nodes.len();
        self.nodes.push(Node::Leaf {
            probs: self.criterion.leaf(idx)?,
        });
        if depth >= self.max_depth || idx.len() < 2 * self.min_leaf.max(1) || self.criterion.cost(idx) == 0.0 {
            return Ok(here);
        }

        let mut best: Option<(f64, usize, f64)> = None;
        for feature in 0..self.features.cols() {
            idx.sort_by(|&a, &b| {
                self.features
                    .get(a, feature)
                    .total_cmp(&self.features.get(b, feature))
                    .then(a.cmp(&b))
            });
            let values: Vec<f64> = idx.iter().map(|&i| self.features.get(i, feature)).collect();
            if let Some((cost, _, threshold)) = self.criterion.best_cut(idx, &values, self.min_leaf) {
                if best.is_none_or(|(c, _, _)| cost < c) {
                    best = Some((cost, feature, threshold));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return Ok(here);
        };

        idx.sort_by(|&a, &b| {
            let ka = self.features.get(a, feature) > threshold;
            let kb = self.features.get(b, feature) > threshold;
            ka.cmp(&kb).then(a.cmp(&b))
        });
        let cut = idx.partition_point(|&i| self.features.get(i, feature) <= threshold);
        let (l, r) = idx.split_at_mut(cut);
        let left = self.grow(l, depth + 1)?;
        let right = self.grow(r, depth + 1)?;
        self.nodes[here] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        Ok(here)
    }
}

fn fit_with<C: SplitCriterion>(
    features: &DenseMatrix,
    mut idx: Vec<usize>,
    criterion: C,
    max_depth: usize,
    min_leaf: usize,
    num_classes: usize,
) -> Result<DecisionTree> {
    if idx.is_empty() {
        return Err(DistError::param("cannot fit a tree to an empty dataset"));
    }
    let mut g = Grower {
        features,
        criterion,
        max_depth,
        min_leaf,
        nodes: Vec::new(),
    };
    g.grow(&mut idx, 0)?;
    Ok(DecisionTree {
        nodes: g.nodes,
        max_depth,
        input_dim: features.cols(),
        num_classes,
    })
}

/// Greedy Gini tree with Laplace add-one leaves.
pub fn fit_tree_classifier(dataset: &BayesAnnotatedDataset, max_depth: usize, min_leaf: usize) -> Result<DecisionTree> {
    fit_classifier_on(dataset, (0..dataset.len()).collect(), max_depth, min_leaf)
}

fn fit_classifier_on(
    dataset: &BayesAnnotatedDataset,
    idx: Vec<usize>,
    max_depth: usize,
    min_leaf: usize,
) -> Result<DecisionTree> {
    let criterion = Gini {
        labels: dataset.labels(),
        num_classes: dataset.num_classes(),
    };
    fit_with(dataset.features(), idx, criterion, max_depth, min_leaf, dataset.num_classes())
}

/// Greedy squared-error tree regressing onto probability vectors.
pub fn fit_tree_regressor_to_probs(
    features: &DenseMatrix,
    target_probs: &[ProbVector],
    max_depth: usize,
    min_leaf: usize,
) -> Result<DecisionTree> {
    if features.rows() != target_probs.len() {
        return Err(DistError::Dimension {
            expected: features.rows(),
            got: target_probs.len(),
        });
    }
    let num_classes = target_probs.first().map_or(0, |p| p.len());
    if target_probs.iter().any(|p| p.len() != num_classes) {
        return Err(DistError::param("targets disagree on class count"));
    }
    let criterion = SquaredError {
        targets: target_probs,
        num_classes,
    };
    fit_with(features, (0..features.rows()).collect(), criterion, max_depth, min_leaf, num_classes)
}

/// Equal-weight average of trees.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn new(trees: Vec<DecisionTree>) -> Result<Self> {
        let first = trees.first().ok_or_else(|| DistError::param("forest needs at least one tree"))?;
        if trees
            .iter()
            .any(|t| t.input_dim != first.input_dim || t.num_classes != first.num_classes)
        {
            return Err(DistError::param("forest members disagree on shape"));
        }
        Ok(RandomForest { trees })
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn num_estimators(&self) -> usize {
        self.trees.len()
    }
}

impl Predictor for RandomForest {
    fn input_dim(&self) -> usize {
        self.trees[0].input_dim
    }

    fn num_classes(&self) -> usize {
        self.trees[0].num_classes
    }

    fn predict_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(log_probs(&self.predict_probs(x)?))
    }

    fn predict_probs(&self, x: &[f64]) -> Result<ProbVector> {
        let mut acc = vec![0.0; self.num_classes()];
        for t in &self.trees {
            acc.iter_mut().zip(t.leaf_probs(x)?.iter()).for_each(|(a, p)| *a += p);
        }
        let total: f64 = acc.iter().sum();
        ProbVector::new(acc.into_iter().map(|a| a / total).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestConfig {
    pub num_estimators: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub bootstrap: bool,
}

/// Trees fit on bootstrap resamples with every feature considered at each
/// split. Draws `N` indices per tree from `stream` when bootstrapping.
pub fn fit_forest(dataset: &BayesAnnotatedDataset, config: &ForestConfig, stream: &mut RandomStream) -> Result<RandomForest> {
    let samples = forest_samples(dataset.len(), config, stream)?;
    fit_forest_on(dataset, &samples, config)
}

/// Training rows of each member tree: bootstrap resamples of `n` draws, or
/// every row when bootstrapping is off.
pub fn forest_samples(n: usize, config: &ForestConfig, stream: &mut RandomStream) -> Result<Vec<Vec<usize>>> {
    if config.num_estimators == 0 {
        return Err(DistError::param("forest needs at least one tree"));
    }
    Ok((0..config.num_estimators)
        .map(|_| {
            if config.bootstrap {
                (0..n).map(|_| stream.below(n)).collect()
            } else {
                (0..n).collect()
            }
        })
        .collect())
}

/// Fits one tree per entry of `samples`.
pub fn fit_forest_on(dataset: &BayesAnnotatedDataset, samples: &[Vec<usize>], config: &ForestConfig) -> Result<RandomForest> {
    let trees = samples
        .iter()
        .map(|idx| fit_classifier_on(dataset, idx.clone(), config.max_depth, config.min_leaf))
        .collect::<Result<Vec<_>>>()?;
    RandomForest::new(trees)
}

/// Leaf probabilities of a tree or the mean over a forest.
pub fn tree_predict_probs(model: &dyn Predictor, x: &[f64]) -> Result<ProbVector> {
    model.predict_probs(x)
}

/// Size-weighted Gini impurity of the leaf partition of `dataset`.
pub fn training_gini(tree: &DecisionTree, dataset: &BayesAnnotatedDataset) -> Result<f64> {
    let mut counts = vec![vec![0.0; dataset.num_classes()]; tree.nodes.len()];
    for i in 0..dataset.len() {
        counts[tree.leaf_index(dataset.x(i))?][dataset.labels()[i]] += 1.0;
    }
    let total: f64 = counts
        .iter()
        .map(|c| {
            let n: f64 = c.iter().sum();
            n * gini_of(c, n)
        })
        .sum();
    Ok(total / dataset.len() as f64)
}

/// Mean `‖p(x_i) − t_i‖²` over the rows of `features`.
pub fn mse_to_targets(model: &dyn Predictor, features: &DenseMatrix, targets: &[ProbVector]) -> Result<f64> {
    let total = features
        .iter_rows()
        .zip(targets)
        .map(|(x, t)| {
            let p = model.predict_probs(x)?;
            Ok(p.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        })
        .sum::<Result<f64>>()?;
    Ok(total / targets.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_slab2d;
    use crate::numkit::derive_stream;

    fn line(xs: &[f64], ys: &[usize], l: usize) -> BayesAnnotatedDataset {
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        BayesAnnotatedDataset::new(DenseMatrix::from_rows(&rows).unwrap(), ys.to_vec(), None, l).unwrap()
    }

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn two_point_stump() {
        let t = fit_tree_classifier(&line(&[0.0, 1.0], &[0, 1], 2), 1, 1).unwrap();
        assert_eq!(t.depth(), 1);
        match &t.nodes()[0] {
            Node::Split { threshold, .. } => assert_eq!(*threshold, 0.5),
            other => panic!("{other:?}"),
        }
        let l = t.predict_probs(&[0.0]).unwrap();
        let r = t.predict_probs(&[1.0]).unwrap();
        assert!((l[0] - 2.0 / 3.0).abs() < 1e-15 && (l[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((r[0] - 1.0 / 3.0).abs() < 1e-15 && (r[1] - 2.0 / 3.0).abs() < 1e-15);
        // at the threshold, go left
        assert_eq!(t.predict_probs(&[0.5]).unwrap(), l);
    }

    #[test]
    fn pure_and_depth_zero_trees_are_leaves() {
        let pure = fit_tree_classifier(&line(&[0.0, 1.0, 2.0], &[1, 1, 1], 2), 5, 1).unwrap();
        assert_eq!(pure.depth(), 0);
        let stump = fit_tree_classifier(&line(&[0.0, 1.0, 2.0], &[0, 1, 1], 2), 0, 1).unwrap();
        assert_eq!(stump.depth(), 0);
        assert_eq!(stump.predict_probs(&[7.0]).unwrap().as_slice(), &[2.0 / 5.0, 3.0 / 5.0]);
        assert_eq!(stump.predict_probs(&[-7.0]).unwrap(), stump.predict_probs(&[0.3]).unwrap());
        assert!(fit_tree_classifier(&line(&[0.0], &[0], 2).subset(&[]), 2, 1).is_err());
    }

    #[test]
    fn hand_built_tree_routes() {
        let t = DecisionTree::from_nodes(
            vec![
                Node::Split {
                    feature: 1,
                    threshold: 0.0,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { probs: pv(&[0.9, 0.1]) },
                Node::Leaf { probs: pv(&[0.2, 0.8]) },
            ],
            1,
            2,
        )
        .unwrap();
        assert_eq!(t.predict_probs(&[5.0, -1.0]).unwrap(), pv(&[0.9, 0.1]));
        assert_eq!(t.predict_probs(&[5.0, 1.0]).unwrap(), pv(&[0.2, 0.8]));
        assert_eq!(t.predict_probs(&[5.0, 0.0]).unwrap(), pv(&[0.9, 0.1]));
        assert!(t.predict_probs(&[1.0]).is_err());
        assert!(DecisionTree::from_nodes(t.nodes().to_vec(), 0, 2).is_err());
    }

    #[test]
    fn regressor_examples() {
        let f = DenseMatrix::from_rows(&[vec![-2.0], vec![-1.0], vec![1.0], vec![3.0]]).unwrap();
        let same = vec![pv(&[0.3, 0.7]); 4];
        let t = fit_tree_regressor_to_probs(&f, &same, 4, 1).unwrap();
        assert_eq!(t.depth(), 0);
        assert_eq!(t.predict_probs(&[0.0]).unwrap(), pv(&[0.3, 0.7]));

        let targets = vec![pv(&[1.0, 0.0]), pv(&[1.0, 0.0]), pv(&[0.0, 1.0]), pv(&[0.0, 1.0])];
        let t = fit_tree_regressor_to_probs(&f, &targets, 1, 1).unwrap();
        match &t.nodes()[0] {
            Node::Split { threshold, .. } => assert_eq!(*threshold, 0.0),
            other => panic!("{other:?}"),
        }
        assert_eq!(t.predict_probs(&[-1.5]).unwrap(), pv(&[1.0, 0.0]));
        assert_eq!(t.predict_probs(&[2.0]).unwrap(), pv(&[0.0, 1.0]));
        assert!(fit_tree_regressor_to_probs(&DenseMatrix::zeros(0, 1), &[], 2, 1).is_err());
    }

    #[test]
    fn deeper_trees_fit_training_data_better() {
        for seed in 0..10 {
            let mut s = derive_stream(seed, 0);
            let ds = gen_slab2d(200, &mut s).unwrap();
            let targets = ds.bayes_probs().unwrap();
            let mut last_gini = f64::INFINITY;
            let mut last_mse = f64::INFINITY;
            for depth in [0, 1, 2, 4, 8] {
                let t = fit_tree_classifier(&ds, depth, 1).unwrap();
                assert!(t.depth() <= depth);
                let g = training_gini(&t, &ds).unwrap();
                assert!(g <= last_gini + 1e-12, "gini {g} > {last_gini} at depth {depth}");
                last_gini = g;
                let r = fit_tree_regressor_to_probs(ds.features(), targets, depth, 1).unwrap();
                let m = mse_to_targets(&r, ds.features(), targets).unwrap();
                assert!(m <= last_mse + 1e-12, "mse {m} > {last_mse} at depth {depth}");
                last_mse = m;
            }
        }
    }

    #[test]
    fn single_tree_forest_without_bootstrap_is_the_tree() {
        let ds = gen_slab2d(60, &mut derive_stream(3, 0)).unwrap();
        let config = ForestConfig {
            num_estimators: 1,
            max_depth: 3,
            min_leaf: 1,
            bootstrap: false,
        };
        let forest = fit_forest(&ds, &config, &mut derive_stream(3, 1)).unwrap();
        assert_eq!(forest.trees()[0], fit_tree_classifier(&ds, 3, 1).unwrap());
    }

    #[test]
    fn forest_is_deterministic_and_valid() {
        let ds = gen_slab2d(80, &mut derive_stream(4, 0)).unwrap();
        let config = ForestConfig {
            num_estimators: 3,
            max_depth: 4,
            min_leaf: 1,
            bootstrap: true,
        };
        let a = fit_forest(&ds, &config, &mut derive_stream(4, 1)).unwrap();
        let b = fit_forest(&ds, &config, &mut derive_stream(4, 1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_estimators(), 3);
        for i in 0..ds.len() {
            let p = tree_predict_probs(&a, ds.x(i)).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(fit_forest(&ds, &ForestConfig { num_estimators: 0, ..config }, &mut derive_stream(4, 1)).is_err());
    }

    #[test]
    fn min_leaf_is_respected() {
        let ds = gen_slab2d(100, &mut derive_stream(5, 0)).unwrap();
        let t = fit_tree_classifier(&ds, 16, 10).unwrap();
        let mut sizes = vec![0usize; t.nodes().len()];
        for i in 0..ds.len() {
            sizes[t.leaf_index(ds.x(i)).unwrap()] += 1;
        }
        for (i, n) in t.nodes().iter().enumerate() {
            if matches!(n, Node::Leaf { .. }) {
                assert!(sizes[i] >= 10, "leaf {i} holds {}", sizes[i]);
            }
        }
    }
}
