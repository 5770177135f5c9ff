//! Gradient-boosted multiclass trees over embeddings, plus the KNN and
//! LT-KNN baselines.
//!
//! The score of class `c` is `W0[c] + Σ_rounds tree[c](x)` where `W0` is the
//! log class prior and each tree's leaves already carry the learning rate.

mod knn;
mod tree;

pub use knn::{knn_predict, ltknn_evaluate, CiErrors, CiStage, KnnModel};
pub use tree::{Node, Tree};

use serde::{Deserialize, Serialize};

use crate::dataset::RpId;
use crate::error::{Error, Result};
use tree::GainParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbtParams {
    pub num_rounds: usize,
    pub learning_rate: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum hessian sum in each child of a split.
    pub min_child_weight: f64,
    pub max_depth: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self { num_rounds: 100, learning_rate: 0.3, lambda: 1.0, min_child_weight: 1.0, max_depth: 7 }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.lambda >= 0.0) || !(self.min_child_weight >= 0.0) {
            return Err(Error::Config(format!("invalid boosting parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub params: GbtParams,
    pub num_features: usize,
    /// RP of each class index, ascending.
    pub classes: Vec<RpId>,
    /// Log prior of each class.
    pub bias: Vec<f64>,
    /// `rounds[r][c]` is the class-`c` tree of round `r`.
    pub rounds: Vec<Vec<Tree>>,
    /// Mean training log-loss before any round and after each round.
    pub train_loss: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub class: usize,
    pub rp_id: RpId,
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

fn log_loss(scores: &[f64], class: usize) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    lse - scores[class]
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate() {
        if p > v[best] {
            best = i;
        }
    }
    best
}

fn check_features(x: &[Vec<f64>]) -> Result<usize> {
    let width = x.first().map_or(0, Vec::len);
    for (sample, row) in x.iter().enumerate() {
        if row.len() != width {
            return Err(Error::LengthMismatch { left: row.len(), right: width });
        }
        if let Some(feature) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { sample, feature });
        }
    }
    Ok(width)
}

/// Fits a softmax cross-entropy ensemble with one tree per class per round.
pub fn gbt_fit(x: &[Vec<f64>], y: &[RpId], params: &GbtParams) -> Result<BoostedEnsemble> {
    params.validate()?;
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    let num_features = check_features(x)?;
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    let n = x.len();
    let k = classes.len();
    let target: Vec<usize> = y.iter().map(|r| classes.binary_search(r).expect("class present")).collect();
    let mut counts = vec![0usize; k];
    for &c in &target {
        counts[c] += 1;
    }
    let bias: Vec<f64> = counts.iter().map(|&c| (c as f64 / n as f64).ln()).collect();

    let sorted: Vec<Vec<usize>> = (0..num_features)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let gain = GainParams { lambda: params.lambda, min_child_weight: params.min_child_weight };

    let mut scores: Vec<Vec<f64>> = vec![bias.clone(); n];
    let mean_loss = |scores: &[Vec<f64>]| scores.iter().zip(&target).map(|(s, &t)| log_loss(s, t)).sum::<f64>() / n as f64;
    let mut train_loss = vec![mean_loss(&scores)];
    let mut rounds = Vec::with_capacity(params.num_rounds);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..params.num_rounds {
        let probs: Vec<Vec<f64>> = scores.iter().map(|s| softmax(s)).collect();
        let mut trees = Vec::with_capacity(k);
        for c in 0..k {
            for i in 0..n {
                let p = probs[i][c];
                grad[i] = p - if target[i] == c { 1.0 } else { 0.0 };
                hess[i] = p * (1.0 - p);
            }
            trees.push(tree::grow(x, &sorted, &grad, &hess, params.max_depth, gain, params.learning_rate));
        }
        for (i, s) in scores.iter_mut().enumerate() {
            for (c, t) in trees.iter().enumerate() {
                s[c] += t.predict(&x[i]);
            }
        }
        train_loss.push(mean_loss(&scores));
        rounds.push(trees);
    }
    Ok(BoostedEnsemble { params: *params, num_features, classes, bias, rounds, train_loss })
}

impl BoostedEnsemble {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Raw per-class scores.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.num_features {
            return Err(Error::LengthMismatch { left: x.len(), right: self.num_features });
        }
        let mut s = self.bias.clone();
        for trees in &self.rounds {
            for (c, t) in trees.iter().enumerate() {
                s[c] += t.predict(x);
            }
        }
        Ok(s)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let probabilities = softmax(&self.scores(x)?);
        let class = argmax(&probabilities);
        Ok(Prediction { class, rp_id: self.classes[class], probabilities })
    }

    pub fn max_tree_depth(&self) -> usize {
        self.rounds.iter().flatten().map(Tree::depth).max().unwrap_or(0)
    }
}

pub fn gbt_predict(model: &BoostedEnsemble, x: &[f64]) -> Result<Prediction> {
    model.predict(x)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    /// 60 samples, 3 overlapping Gaussian blobs in 4 dimensions.
    pub(crate) fn smoke() -> (Vec<Vec<f64>>, Vec<RpId>) {
        let mut r = rng::stream(11, &[]);
        let centres = [[0.2, 0.2, 0.5, 0.5], [0.8, 0.3, 0.5, 0.4], [0.5, 0.8, 0.4, 0.6]];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..60 {
            let c = i % 3;
            x.push(centres[c].iter().map(|m| m + 0.2 * (r.random::<f64>() - 0.5)).collect());
            y.push(RpId(c as u32 * 10));
        }
        (x, y)
    }

    #[test]
    fn zero_rounds_balanced_is_uniform() {
        let (x, y) = smoke();
        let m = gbt_fit(&x, &y, &GbtParams { num_rounds: 0, ..Default::default() }).unwrap();
        for p in m.predict(&x[0]).unwrap().probabilities {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        let four: Vec<RpId> = (0..8).map(|i| RpId(i % 4)).collect();
        let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let m = gbt_fit(&xs, &four, &GbtParams { num_rounds: 0, ..Default::default() }).unwrap();
        assert_eq!(m.predict(&[3.0]).unwrap().probabilities, vec![0.25; 4]);
        assert_eq!(m.predict(&[3.0]).unwrap().class, 0);
    }

    #[test]
    fn constant_leaf_adds_to_bias() {
        let (x, y) = smoke();
        let mut m = gbt_fit(&x, &y, &GbtParams { num_rounds: 0, ..Default::default() }).unwrap();
        m.rounds.push(vec![Tree::leaf(0.0), Tree::leaf(0.7), Tree::leaf(0.0)]);
        let s = m.scores(&x[3]).unwrap();
        assert_eq!(s[1], m.bias[1] + 0.7);
    }

    #[test]
    fn smoke_training_reduces_loss() {
        let (x, y) = smoke();
        let p = GbtParams { num_rounds: 50, learning_rate: 0.3, ..Default::default() };
        let m = gbt_fit(&x, &y, &p).unwrap();
        assert_eq!(m.train_loss.len(), 51);
        assert!(m.train_loss[50] < m.train_loss[0]);
        for w in m.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
        assert!(m.max_tree_depth() <= 7);
        assert!(m.rounds.iter().flatten().flat_map(Tree::leaves).all(f64::is_finite));
    }

    #[test]
    fn single_class_and_nan_are_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(gbt_fit(&x, &[RpId(1), RpId(1)], &GbtParams::default()), Err(Error::SingleClass)));
        let bad = vec![vec![0.0], vec![f64::NAN]];
        assert!(matches!(
            gbt_fit(&bad, &[RpId(0), RpId(1)], &GbtParams::default()),
            Err(Error::NonFiniteFeature { sample: 1, feature: 0 })
        ));
    }

    #[test]
    fn predict_checks_dimension() {
        let (x, y) = smoke();
        let m = gbt_fit(&x, &y, &GbtParams { num_rounds: 2, ..Default::default() }).unwrap();
        assert!(m.predict(&[0.0; 3]).is_err());
    }

    #[test]
    fn fit_is_deterministic() {
        let (x, y) = smoke();
        let p = GbtParams { num_rounds: 5, ..Default::default() };
        assert_eq!(gbt_fit(&x, &y, &p).unwrap(), gbt_fit(&x, &y, &p).unwrap());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    proptest! {
        #[test]
        fn probabilities_form_a_distribution(q in proptest::collection::vec(-1.0f64..2.0, 4)) {
            let (x, y) = smoke();
            let m = gbt_fit(&x, &y, &GbtParams { num_rounds: 3, ..Default::default() }).unwrap();
            let p = m.predict(&q).unwrap().probabilities;
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
