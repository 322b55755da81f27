use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureSchema;
use crate::forest::tree::{check_training_data, grow};
use crate::forest::{Hyperparams, Tree};
use crate::matrix::Matrix;

/// A trained forest together with everything needed to reuse it.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomForestModel {
    pub(crate) trees: Vec<Tree>,
    pub(crate) params: Hyperparams,
    pub(crate) schema: FeatureSchema,
    pub(crate) importances: Vec<f64>,
    pub(crate) seed: u64,
    pub(crate) target_tag: String,
}

impl RandomForestModel {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn params(&self) -> &Hyperparams {
        &self.params
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    /// Normalized total SSE decrease per feature.
    pub fn importances(&self) -> &[f64] {
        &self.importances
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn target_tag(&self) -> &str {
        &self.target_tag
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn with_schema(mut self, schema: FeatureSchema) -> Result<Self> {
        if schema.len() != self.schema.len() {
            return Err(Error::DimensionMismatch {
                expected: self.schema.len(),
                actual: schema.len(),
            });
        }
        self.schema = schema;
        Ok(self)
    }

    pub fn with_target_tag(mut self, tag: impl Into<String>) -> Self {
        self.target_tag = tag.into();
        self
    }

    /// Feature names sorted by decreasing importance (ties by schema order).
    pub fn ranked_features(&self) -> Vec<(&str, f64)> {
        let mut ranked: Vec<(&str, f64)> = self
            .schema
            .names()
            .iter()
            .map(String::as_str)
            .zip(self.importances.iter().copied())
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        ranked
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut sum = 0.0;
        for t in &self.trees {
            sum += t.predict_row(row);
        }
        sum / self.trees.len() as f64
    }
}

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of tree `t`: `splitmix64(seed ^ t)`. Depends only on the forest seed
/// and the tree's position, never on scheduling.
pub fn tree_seed(seed: u64, t: usize) -> u64 {
    splitmix64(seed ^ t as u64)
}

pub fn fit_forest(
    x: &Matrix,
    y: &[f64],
    params: &Hyperparams,
    seed: u64,
) -> Result<RandomForestModel> {
    check_training_data(x, y)?;
    params.validate()?;
    let n = x.n_rows();
    let p = x.n_cols();

    let grown: Vec<(Tree, Vec<f64>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(seed, t));
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow(x, y, params, rows, &mut rng)
        })
        .collect::<Result<_>>()?;

    let mut importances = vec![0.0; p];
    for (_, imp) in &grown {
        for (acc, v) in importances.iter_mut().zip(imp) {
            *acc += v;
        }
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        importances.iter_mut().for_each(|v| *v /= total);
    } else {
        importances.iter_mut().for_each(|v| *v = 0.0);
    }

    let schema = FeatureSchema::new((0..p).map(|i| format!("f{i}")).collect())?;
    Ok(RandomForestModel {
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        params: params.clone(),
        schema,
        importances,
        seed,
        target_tag: String::new(),
    })
}

/// Mean of the tree outputs for every row, summed in tree order.
pub fn predict(model: &RandomForestModel, x: &Matrix) -> Result<Vec<f64>> {
    if x.n_cols() != model.n_features() {
        return Err(Error::DimensionMismatch {
            expected: model.n_features(),
            actual: x.n_cols(),
        });
    }
    Ok((0..x.n_rows())
        .into_par_iter()
        .map(|i| model.predict_row(x.row(i)))
        .collect())
}
