//! Random forest regression built from CART trees.
//!
//! Trees split on the weighted child sum of squared errors, with candidate
//! thresholds at midpoints between consecutive distinct feature values.
//! Feature subsets are drawn per split by default; [`SubspaceMode::PerTree`]
//! draws one subset for a whole tree instead.

mod ensemble;
mod persist;
mod search;
mod tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ensemble::{fit_forest, predict, tree_seed, RandomForestModel};
pub use persist::MODEL_FORMAT_VERSION;
pub use search::{random_search, SearchOutcome, SearchSpace};
pub use tree::{fit_tree, Node, Tree, TIE_TOLERANCE};

/// Number of features considered at each split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Count(usize),
    Fraction(f64),
    /// `floor(sqrt(p))`, at least 1.
    Sqrt,
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> Result<usize> {
        let m = match self {
            MaxFeatures::Count(c) => {
                if c == 0 || c > n_features {
                    return Err(Error::InvalidArgument(format!(
                        "max_features count {c} outside 1..={n_features}"
                    )));
                }
                c
            }
            MaxFeatures::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "max_features fraction {f} outside (0, 1]"
                    )));
                }
                ((f * n_features as f64).floor() as usize).max(1)
            }
            MaxFeatures::Sqrt => ((n_features as f64).sqrt().floor() as usize).max(1),
        };
        Ok(m.min(n_features))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubspaceMode {
    #[default]
    PerSplit,
    PerTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub n_trees: usize,
    /// `None` grows until another stopping rule applies.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    #[serde(default = "default_true")]
    pub bootstrap: bool,
    #[serde(default)]
    pub subspace: SubspaceMode,
}

fn default_true() -> bool {
    true
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::Fraction(0.33),
            bootstrap: true,
            subspace: SubspaceMode::PerSplit,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_trees < 1 {
            return bad("n_trees must be >= 1".into());
        }
        if self.max_depth == Some(0) {
            return bad("max_depth must be >= 1".into());
        }
        if self.min_samples_split < 2 {
            return bad(format!(
                "min_samples_split must be >= 2, got {}",
                self.min_samples_split
            ));
        }
        if self.min_samples_leaf < 1 {
            return bad("min_samples_leaf must be >= 1".into());
        }
        match self.max_features {
            MaxFeatures::Count(0) => bad("max_features count must be >= 1".into()),
            MaxFeatures::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                bad(format!("max_features fraction {f} outside (0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_max_features() {
        assert_eq!(MaxFeatures::Sqrt.resolve(16).unwrap(), 4);
        assert_eq!(MaxFeatures::Sqrt.resolve(2).unwrap(), 1);
        assert_eq!(MaxFeatures::Fraction(0.33).resolve(17).unwrap(), 5);
        assert_eq!(MaxFeatures::Fraction(0.01).resolve(3).unwrap(), 1);
        assert_eq!(MaxFeatures::Fraction(1.0).resolve(3).unwrap(), 3);
        assert!(MaxFeatures::Count(4).resolve(3).is_err());
        assert!(MaxFeatures::Fraction(0.0).resolve(3).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        let p = Hyperparams {
            min_samples_split: 1,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = Hyperparams {
            max_depth: Some(0),
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn params_json_shape() {
        let p = Hyperparams {
            max_features: MaxFeatures::Count(3),
            ..Default::default()
        };
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(v["max_depth"], serde_json::Value::Null);
        assert_eq!(v["max_features"]["count"], 3);
        assert_eq!(v["subspace"], "per_split");
        let back: Hyperparams = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
        let sqrt: MaxFeatures = serde_json::from_str("\"sqrt\"").unwrap();
        assert_eq!(sqrt, MaxFeatures::Sqrt);
    }
}
