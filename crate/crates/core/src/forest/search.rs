use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{fit_forest, predict, Hyperparams, MaxFeatures, SubspaceMode};
use crate::matrix::Matrix;
use crate::validation::{cross_validate_xy, random_assignment, FoldSplit};

/// Ranges sampled by [`random_search`]. Integer ranges are inclusive.
/// `n_trees` and `max_depth` are drawn log-uniformly, the rest uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub n_trees: (usize, usize),
    pub max_depth: (usize, usize),
    /// Probability of drawing an unlimited depth instead of one from
    /// `max_depth`.
    pub unlimited_depth_prob: f64,
    pub min_samples_split: (usize, usize),
    pub min_samples_leaf: (usize, usize),
    pub max_features: Vec<MaxFeatures>,
    pub bootstrap: bool,
    pub subspace: SubspaceMode,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            n_trees: (50, 500),
            max_depth: (4, 32),
            unlimited_depth_prob: 0.2,
            min_samples_split: (2, 20),
            min_samples_leaf: (1, 10),
            max_features: vec![
                MaxFeatures::Sqrt,
                MaxFeatures::Fraction(0.33),
                MaxFeatures::Fraction(1.0),
            ],
            bootstrap: true,
            subspace: SubspaceMode::PerSplit,
        }
    }
}

impl SearchSpace {
    /// A space containing exactly one point.
    pub fn single(p: &Hyperparams) -> Self {
        let depth = p.max_depth.unwrap_or(1);
        SearchSpace {
            n_trees: (p.n_trees, p.n_trees),
            max_depth: (depth, depth),
            unlimited_depth_prob: if p.max_depth.is_none() { 1.0 } else { 0.0 },
            min_samples_split: (p.min_samples_split, p.min_samples_split),
            min_samples_leaf: (p.min_samples_leaf, p.min_samples_leaf),
            max_features: vec![p.max_features],
            bootstrap: p.bootstrap,
            subspace: p.subspace,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, (lo, hi): (usize, usize), min: usize| {
            if lo < min || lo > hi {
                Err(Error::InvalidArgument(format!(
                    "search range `{name}` = [{lo}, {hi}] is empty or below {min}"
                )))
            } else {
                Ok(())
            }
        };
        range("n_trees", self.n_trees, 1)?;
        range("max_depth", self.max_depth, 1)?;
        range("min_samples_split", self.min_samples_split, 2)?;
        range("min_samples_leaf", self.min_samples_leaf, 1)?;
        if !(0.0..=1.0).contains(&self.unlimited_depth_prob) {
            return Err(Error::InvalidArgument(
                "unlimited_depth_prob must lie in [0, 1]".into(),
            ));
        }
        if self.max_features.is_empty() {
            return Err(Error::InvalidArgument(
                "search space has no max_features choices".into(),
            ));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Hyperparams {
        let n_trees = log_uniform(rng, self.n_trees);
        let unlimited = rng.gen::<f64>() < self.unlimited_depth_prob;
        let depth = log_uniform(rng, self.max_depth);
        let split = rng.gen_range(self.min_samples_split.0..=self.min_samples_split.1);
        let leaf = rng.gen_range(self.min_samples_leaf.0..=self.min_samples_leaf.1);
        let mf = self.max_features[rng.gen_range(0..self.max_features.len())];
        Hyperparams {
            n_trees,
            max_depth: (!unlimited).then_some(depth),
            min_samples_split: split,
            min_samples_leaf: leaf,
            max_features: mf,
            bootstrap: self.bootstrap,
            subspace: self.subspace,
        }
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    let u: f64 = rng.gen();
    let (a, b) = ((lo as f64).ln(), ((hi + 1) as f64).ln());
    ((a + u * (b - a)).exp().floor() as usize).clamp(lo, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: Hyperparams,
    /// Mean held-out R² of the winner across folds.
    pub cv_score: f64,
    /// Every drawn candidate with its score, in draw order.
    pub trials: Vec<(Hyperparams, f64)>,
}

/// Randomized hyperparameter search scored by mean k-fold R².
///
/// Folds are drawn once from `seed` and shared by every candidate; each
/// candidate forest is trained with the same derived seed. Ties go to the
/// earliest draw.
pub fn random_search(
    x: &Matrix,
    y: &[f64],
    space: &SearchSpace,
    n_iter: usize,
    k: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    if n_iter == 0 {
        return Err(Error::InvalidArgument(
            "random search needs n_iter >= 1".into(),
        ));
    }
    space.validate()?;
    let folds = random_assignment(y.len(), k, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
    let candidates: Vec<Hyperparams> = (0..n_iter).map(|_| space.sample(&mut rng)).collect();
    let model_seed = seed.wrapping_add(1);

    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|params| {
            let trainer = |s: &FoldSplit| {
                let m = fit_forest(&s.train_x, &s.train_y, params, model_seed)?;
                predict(&m, &s.test_x)
            };
            let cv = cross_validate_xy(&trainer, x, y, &folds, k)?;
            let defined: Vec<f64> = cv.per_fold.iter().filter_map(|f| f.metrics.r2).collect();
            Ok(if defined.is_empty() {
                f64::NEG_INFINITY
            } else {
                defined.iter().sum::<f64>() / defined.len() as f64
            })
        })
        .collect::<Result<_>>()?;

    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(SearchOutcome {
        best: candidates[best].clone(),
        cv_score: scores[best],
        trials: candidates.into_iter().zip(scores).collect(),
    })
}
