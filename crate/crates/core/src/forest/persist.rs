//! JSON model documents.
//!
//! Trees are stored as preorder node arrays; a split node is
//! `{"f": feature, "t": threshold, "l": left, "r": right}` with children given
//! by array index, and a leaf is `{"v": value, "n": n_samples}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSchema;
use crate::forest::{Hyperparams, Node, RandomForestModel, Tree};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NodeDoc {
    Split {
        f: usize,
        t: f64,
        l: usize,
        r: usize,
    },
    Leaf {
        v: f64,
        n: usize,
    },
}

#[derive(Serialize, Deserialize)]
struct TreeDoc {
    nodes: Vec<NodeDoc>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format_version: u32,
    target_tag: String,
    seed: u64,
    params: Hyperparams,
    schema: FeatureSchema,
    importances: Vec<f64>,
    trees: Vec<TreeDoc>,
}

impl RandomForestModel {
    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDoc {
            format_version: MODEL_FORMAT_VERSION,
            target_tag: self.target_tag.clone(),
            seed: self.seed,
            params: self.params.clone(),
            schema: self.schema.clone(),
            importances: self.importances.clone(),
            trees: self
                .trees
                .iter()
                .map(|t| TreeDoc {
                    nodes: t
                        .nodes()
                        .iter()
                        .map(|n| match *n {
                            Node::Split {
                                feature,
                                threshold,
                                left,
                                right,
                            } => NodeDoc::Split {
                                f: feature,
                                t: threshold,
                                l: left,
                                r: right,
                            },
                            Node::Leaf { value, n_samples } => NodeDoc::Leaf {
                                v: value,
                                n: n_samples,
                            },
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string(&doc).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let err = |m: String| Error::parse(origin, m);
        let doc: ModelDoc = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(err(format!(
                "unsupported model format_version {}",
                doc.format_version
            )));
        }
        doc.params.validate().map_err(|e| err(e.to_string()))?;
        let p = doc.schema.len();
        if doc.importances.len() != p {
            return Err(err(format!(
                "{} importances for {p} features",
                doc.importances.len()
            )));
        }
        if doc.trees.len() != doc.params.n_trees {
            return Err(err(format!(
                "{} trees but n_trees = {}",
                doc.trees.len(),
                doc.params.n_trees
            )));
        }
        let trees = doc
            .trees
            .into_iter()
            .enumerate()
            .map(|(k, t)| {
                let nodes = t
                    .nodes
                    .into_iter()
                    .map(|n| match n {
                        NodeDoc::Split { f, t, l, r } => Node::Split {
                            feature: f,
                            threshold: t,
                            left: l,
                            right: r,
                        },
                        NodeDoc::Leaf { v, n } => Node::Leaf {
                            value: v,
                            n_samples: n,
                        },
                    })
                    .collect();
                Tree::from_nodes(nodes, p).map_err(|e| err(format!("tree {k}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RandomForestModel {
            trees,
            params: doc.params,
            schema: doc.schema,
            importances: doc.importances,
            seed: doc.seed,
            target_tag: doc.target_tag,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RandomForestModel::from_json(&text, path)
    }
}
