//! K-fold cross-validation under random, site-blocked and date-blocked fold
//! assignment, with R², RMSE and mean bias error.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Band, SampleTable};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldKind {
    Random,
    Spatial,
    Temporal,
}

impl FoldKind {
    pub const ALL: [FoldKind; 3] = [FoldKind::Random, FoldKind::Spatial, FoldKind::Temporal];
}

impl fmt::Display for FoldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FoldKind::Random => "random",
            FoldKind::Spatial => "spatial",
            FoldKind::Temporal => "temporal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub kind: FoldKind,
    pub k: usize,
    /// Fold index of every table row.
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }
}

/// Shuffles `items` with `seed` and deals them round-robin into `k` folds.
fn deal<T: Ord + Clone>(mut items: Vec<T>, k: usize, seed: u64) -> BTreeMap<T, usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    items
        .into_iter()
        .enumerate()
        .map(|(pos, item)| (item, pos % k))
        .collect()
}

/// Random fold assignment of `n` rows: shuffled, then dealt round-robin.
pub fn random_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "need k >= 2 folds, got {k}"
        )));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "{n} rows cannot fill {k} folds"
        )));
    }
    let dealt = deal((0..n).collect(), k, seed);
    Ok((0..n).map(|i| dealt[&i]).collect())
}

pub fn make_folds(table: &SampleTable, kind: FoldKind, k: usize, seed: u64) -> Result<FoldPlan> {
    let rows = table.rows();
    let assignment = match kind {
        FoldKind::Random => random_assignment(rows.len(), k, seed)?,
        FoldKind::Spatial | FoldKind::Temporal => {
            if k < 2 {
                return Err(Error::InvalidArgument(format!(
                    "need k >= 2 folds, got {k}"
                )));
            }
            let key = |i: usize| match kind {
                FoldKind::Spatial => rows[i].site_id.clone(),
                _ => rows[i].date.to_string(),
            };
            let groups: BTreeSet<String> = (0..rows.len()).map(key).collect();
            if groups.len() < k {
                let what = if kind == FoldKind::Spatial {
                    "sites"
                } else {
                    "dates"
                };
                return Err(Error::InvalidArgument(format!(
                    "{kind} CV with k={k} needs at least {k} distinct {what}, found {}",
                    groups.len()
                )));
            }
            let dealt = deal(groups.into_iter().collect(), k, seed);
            (0..rows.len()).map(|i| dealt[&key(i)]).collect()
        }
    };
    Ok(FoldPlan {
        kind,
        k,
        assignment,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    /// `1 - SSE/SST`; `None` when the observations have zero variance.
    pub r2: Option<f64>,
    pub rmse: f64,
    pub mbe: f64,
}

pub fn compute_metrics(pred: &[f64], obs: &[f64]) -> Result<Metrics> {
    if pred.len() != obs.len() {
        return Err(Error::DimensionMismatch {
            expected: obs.len(),
            actual: pred.len(),
        });
    }
    if obs.is_empty() {
        return Err(Error::Empty("metrics need at least one prediction".into()));
    }
    let n = obs.len() as f64;
    let mut bias = 0.0;
    let mut sse = 0.0;
    for (p, o) in pred.iter().zip(obs) {
        let e = p - o;
        bias += e;
        sse += e * e;
    }
    let mean_obs = obs.iter().sum::<f64>() / n;
    let sst: f64 = obs.iter().map(|o| (o - mean_obs) * (o - mean_obs)).sum();
    Ok(Metrics {
        n: obs.len(),
        r2: (sst > 0.0).then(|| 1.0 - sse / sst),
        rmse: (sse / n).sqrt(),
        mbe: bias / n,
    })
}

/// Training and held-out data for one fold.
#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub fold: usize,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub train_x: Matrix,
    pub train_y: Vec<f64>,
    pub test_x: Matrix,
}

/// Fits on a fold's training rows and predicts its held-out rows.
pub trait Trainer: Sync {
    fn fit_predict(&self, split: &FoldSplit) -> Result<Vec<f64>>;
}

impl<F> Trainer for F
where
    F: Fn(&FoldSplit) -> Result<Vec<f64>> + Sync,
{
    fn fit_predict(&self, split: &FoldSplit) -> Result<Vec<f64>> {
        self(split)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub per_fold: Vec<FoldMetrics>,
    pub pooled: Metrics,
}

/// Rotates through folds `0..k` of `assignment`, training on the rest.
/// Pooled metrics cover all held-out predictions concatenated in fold order.
pub fn cross_validate_xy(
    trainer: &dyn Trainer,
    x: &Matrix,
    y: &[f64],
    assignment: &[usize],
    k: usize,
) -> Result<CvResult> {
    if x.n_rows() != y.len() || assignment.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            actual: assignment.len(),
        });
    }
    let folds: Vec<(Vec<f64>, Vec<f64>)> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let test_rows: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] == fold).collect();
            let train_rows: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] != fold).collect();
            if test_rows.is_empty() || train_rows.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "fold {fold} is empty or covers every row"
                )));
            }
            let split = FoldSplit {
                fold,
                train_x: x.select_rows(&train_rows),
                train_y: train_rows.iter().map(|&i| y[i]).collect(),
                test_x: x.select_rows(&test_rows),
                test_rows,
                train_rows,
            };
            let pred = trainer.fit_predict(&split)?;
            if pred.len() != split.test_rows.len() {
                return Err(Error::DimensionMismatch {
                    expected: split.test_rows.len(),
                    actual: pred.len(),
                });
            }
            let obs = split.test_rows.iter().map(|&i| y[i]).collect();
            Ok((pred, obs))
        })
        .collect::<Result<_>>()?;

    let mut per_fold = Vec::with_capacity(k);
    let mut all_pred = Vec::with_capacity(y.len());
    let mut all_obs = Vec::with_capacity(y.len());
    for (fold, (pred, obs)) in folds.into_iter().enumerate() {
        per_fold.push(FoldMetrics {
            fold,
            metrics: compute_metrics(&pred, &obs)?,
        });
        all_pred.extend(pred);
        all_obs.extend(obs);
    }
    Ok(CvResult {
        per_fold,
        pooled: compute_metrics(&all_pred, &all_obs)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: FoldKind,
    pub k: usize,
    pub seed: u64,
    pub per_fold: Vec<FoldMetrics>,
    pub pooled: Metrics,
}

pub fn cross_validate(
    trainer: &dyn Trainer,
    table: &SampleTable,
    band: Band,
    plan: &FoldPlan,
) -> Result<EvalReport> {
    if plan.assignment.len() != table.len() {
        return Err(Error::DimensionMismatch {
            expected: table.len(),
            actual: plan.assignment.len(),
        });
    }
    let cv = cross_validate_xy(
        trainer,
        &table.feature_matrix(),
        &table.targets(band),
        &plan.assignment,
        plan.k,
    )?;
    Ok(EvalReport {
        kind: plan.kind,
        k: plan.k,
        seed: plan.seed,
        per_fold: cv.per_fold,
        pooled: cv.pooled,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Internal(e.to_string()))
    }

    /// One line per fold plus a `pooled` line; undefined R² is left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,k,seed,fold,n,r2,rmse,mbe\n");
        let mut line = |fold: String, m: &Metrics| {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:?},{:?}\n",
                self.kind,
                self.k,
                self.seed,
                fold,
                m.n,
                fmt_opt(m.r2),
                m.rmse,
                m.mbe
            ));
        };
        for f in &self.per_fold {
            line(f.fold.to_string(), &f.metrics);
        }
        line("pooled".into(), &self.pooled);
        out
    }

    pub fn write(&self, json_path: &Path) -> Result<()> {
        if let Some(parent) = json_path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(json_path, self.to_json()?).map_err(|e| Error::io(json_path, e))?;
        let csv_path = json_path.with_extension("csv");
        fs::write(&csv_path, self.to_csv()).map_err(|e| Error::io(&csv_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{DateStamp, FeatureSchema, SampleRow};
    use proptest::prelude::*;

    fn table(n_sites: usize, n_days: usize) -> SampleTable {
        let schema = FeatureSchema::new(vec!["a".into()]).unwrap();
        let mut t = SampleTable::new(schema);
        let start = DateStamp::parse("2020-01-01").unwrap();
        for d in 0..n_days {
            for s in 0..n_sites {
                let v = (s * 7 + d * 3) as f64;
                t.push(SampleRow {
                    site_id: format!("site{s}"),
                    date: start.plus_days(d as u64).unwrap(),
                    x: s as f64,
                    y: d as f64,
                    target_047: v,
                    target_055: v - 1.0,
                    features: vec![v * 0.5],
                    feature_validity: vec![true],
                })
                .unwrap();
            }
        }
        t
    }

    #[test]
    fn random_folds_round_robin() {
        let a = random_assignment(10, 5, 3).unwrap();
        for f in 0..5 {
            assert_eq!(a.iter().filter(|&&x| x == f).count(), 2);
        }
        assert!(random_assignment(3, 5, 0).is_err());
        assert!(random_assignment(10, 1, 0).is_err());
    }

    #[test]
    fn blocked_folds_need_enough_groups() {
        let t = table(2, 10);
        assert!(make_folds(&t, FoldKind::Spatial, 5, 0).is_err());
        assert!(make_folds(&t, FoldKind::Temporal, 5, 0).is_ok());
        let t = table(10, 2);
        assert!(make_folds(&t, FoldKind::Temporal, 5, 0).is_err());
    }

    #[test]
    fn metrics_examples() {
        let obs = [0.0, 1.0, 2.0, 3.0];
        let m = compute_metrics(&obs, &obs).unwrap();
        assert_eq!((m.r2, m.rmse, m.mbe), (Some(1.0), 0.0, 0.0));

        let m = compute_metrics(&[0.0, 1.0, 2.0, 7.0], &obs).unwrap();
        assert_eq!(m.mbe, 1.0);
        assert_eq!(m.rmse, 2.0);
        assert_eq!(m.r2, Some(-2.2));

        let shifted: Vec<f64> = obs.iter().map(|o| o + 2.0).collect();
        let m = compute_metrics(&shifted, &obs).unwrap();
        assert_eq!((m.mbe, m.rmse), (2.0, 2.0));
        assert!((m.r2.unwrap() - (1.0 - 16.0 / 5.0)).abs() < 1e-12);
    }

    #[test]
    fn metrics_errors() {
        assert!(compute_metrics(&[1.0], &[1.0, 2.0]).is_err());
        assert!(compute_metrics(&[], &[]).is_err());
        let m = compute_metrics(&[1.0, 3.0], &[2.0, 2.0]).unwrap();
        assert_eq!(m.r2, None);
        assert_eq!(m.rmse, 1.0);
    }

    #[test]
    fn oracle_and_mean_trainers() {
        let t = table(10, 10);
        let y = t.targets(Band::Aod047);
        let oracle = |s: &FoldSplit| Ok(s.test_rows.iter().map(|&i| y[i]).collect());
        let mean = |s: &FoldSplit| {
            let m = s.train_y.iter().sum::<f64>() / s.train_y.len() as f64;
            Ok(vec![m; s.test_rows.len()])
        };
        for kind in FoldKind::ALL {
            let plan = make_folds(&t, kind, 5, 9).unwrap();
            let r = cross_validate(&oracle, &t, Band::Aod047, &plan).unwrap();
            assert!(r
                .per_fold
                .iter()
                .all(|f| f.metrics.r2 == Some(1.0) && f.metrics.rmse == 0.0));
            let r = cross_validate(&mean, &t, Band::Aod047, &plan).unwrap();
            assert!(r.pooled.r2.unwrap() <= 0.05, "{kind}: {:?}", r.pooled);
        }
    }

    #[test]
    fn held_out_sets_partition_rows() {
        let t = table(20, 5);
        let plan = make_folds(&t, FoldKind::Random, 5, 1).unwrap();
        let mut seen = vec![0; t.len()];
        let tr = |s: &FoldSplit| {
            assert_eq!(s.test_rows.len(), 20);
            Ok(vec![0.0; s.test_rows.len()])
        };
        let r = cross_validate(&tr, &t, Band::Aod055, &plan).unwrap();
        for f in 0..5 {
            for i in plan.test_rows(f) {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(r.pooled.n, 100);
    }

    #[test]
    fn report_formats() {
        let t = table(10, 5);
        let plan = make_folds(&t, FoldKind::Spatial, 5, 2).unwrap();
        let tr = |s: &FoldSplit| Ok(vec![1.0; s.test_rows.len()]);
        let r = cross_validate(&tr, &t, Band::Aod047, &plan).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(v["kind"], "spatial");
        assert_eq!(v["per_fold"].as_array().unwrap().len(), 5);
        for key in ["fold", "n", "r2", "rmse", "mbe"] {
            assert!(v["per_fold"][0].get(key).is_some());
        }
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 7);
        assert!(csv
            .lines()
            .last()
            .unwrap()
            .starts_with("spatial,5,2,pooled,50,"));
    }

    proptest! {
        #[test]
        fn plans_partition_and_block(n_sites in 5usize..25, n_days in 5usize..12, k in 2usize..6, seed: u64) {
            let t = table(n_sites, n_days);
            for kind in FoldKind::ALL {
                let plan = make_folds(&t, kind, k, seed).unwrap();
                prop_assert_eq!(&plan, &make_folds(&t, kind, k, seed).unwrap());
                prop_assert!(plan.assignment.iter().all(|&f| f < k));
                let mut sizes = vec![BTreeSet::new(); k];
                for (i, &f) in plan.assignment.iter().enumerate() {
                    let unit = match kind {
                        FoldKind::Random => i.to_string(),
                        FoldKind::Spatial => t.rows()[i].site_id.clone(),
                        FoldKind::Temporal => t.rows()[i].date.to_string(),
                    };
                    sizes[f].insert(unit);
                }
                for f in 0..k {
                    let test: BTreeSet<_> = plan.test_rows(f).into_iter().collect();
                    let train: BTreeSet<_> = plan.train_rows(f).into_iter().collect();
                    prop_assert!(test.is_disjoint(&train));
                    prop_assert_eq!(test.len() + train.len(), t.len());
                }
                let counts: Vec<usize> = sizes.iter().map(BTreeSet::len).collect();
                let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
                prop_assert!(hi - lo <= 1 && *lo > 0);
                // Blocking: each site/date appears in exactly one fold.
                let total: usize = counts.iter().sum();
                let distinct: BTreeSet<_> = sizes.iter().flatten().collect();
                prop_assert_eq!(total, distinct.len());
            }
        }

        #[test]
        fn metric_identities(pairs in prop::collection::vec((-500.0f64..500.0, -500.0f64..500.0), 2..50), c in -100.0f64..100.0) {
            let pred: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let obs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let m = compute_metrics(&pred, &obs).unwrap();
            prop_assert!(m.rmse >= m.mbe.abs() - 1e-9);
            if let Some(r2) = m.r2 { prop_assert!(r2 <= 1.0); }
            let n = pred.len() as f64;
            let resid: Vec<f64> = pred.iter().zip(&obs).map(|(p, o)| p - o).collect();
            let var = resid.iter().map(|e| (e - m.mbe).powi(2)).sum::<f64>() / n;
            prop_assert!((m.rmse.powi(2) - (m.mbe.powi(2) + var)).abs() <= 1e-9 * m.rmse.powi(2).max(1.0));
            let ps: Vec<f64> = pred.iter().map(|p| p + c).collect();
            let os: Vec<f64> = obs.iter().map(|o| o + c).collect();
            let s = compute_metrics(&ps, &os).unwrap();
            prop_assert!((s.mbe - m.mbe).abs() < 1e-9);
            prop_assert!((s.rmse - m.rmse).abs() < 1e-9);
            if let (Some(a), Some(b)) = (s.r2, m.r2) {
                prop_assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()));
            }
        }
    }
}
