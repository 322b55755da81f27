//! End-to-end orchestration: ingest, training tables, model search and
//! training, cross-validated evaluation, per-day imputation and the run
//! manifest.
//!
//! Every stage is deterministic in its inputs and `seed`. Days are processed
//! in parallel but always reduced in date order.

mod config;
mod ingest;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::RunConfig;
pub use ingest::{day_features, load_day, neighbor_means, scan_days, DayFeatures, DayInputs};

use crate::ascii::write_ascii_grid;
use crate::error::{Error, Result, StageExt};
use crate::features::{
    extract_training_rows, read_stations_csv, Band, DateStamp, FeatureSchema, FeatureStack,
    SampleTable,
};
use crate::forest::{
    fit_forest, predict, random_search, tree_seed, Hyperparams, RandomForestModel,
};
use crate::grid::{combine_with_provenance, Grid};
use crate::synth::{gen_scene_series, write_scene_layout, SceneBundle, SceneSpec};
use crate::validation::{cross_validate, make_folds, EvalReport, FoldKind, FoldSplit, Trainer};

/// Provenance codes of imputed pixels.
pub const LAYER_OBSERVED: usize = 0;
pub const LAYER_WITH_FILTER: usize = 1;
pub const LAYER_WITHOUT_FILTER: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    WithFilter,
    WithoutFilter,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::WithFilter, Variant::WithoutFilter];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::WithFilter => "with_filter",
            Variant::WithoutFilter => "without_filter",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Station rows with and without the neighbor-mean features.
#[derive(Debug, Clone, PartialEq)]
pub struct Tables {
    pub with_filter: SampleTable,
    pub without_filter: SampleTable,
}

impl Tables {
    pub fn get(&self, variant: Variant) -> &SampleTable {
        match variant {
            Variant::WithFilter => &self.with_filter,
            Variant::WithoutFilter => &self.without_filter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPair {
    pub with_filter: RandomForestModel,
    pub without_filter: RandomForestModel,
}

impl ModelPair {
    pub fn get(&self, variant: Variant) -> &RandomForestModel {
        match variant {
            Variant::WithFilter => &self.with_filter,
            Variant::WithoutFilter => &self.without_filter,
        }
    }
}

pub type ModelSet = BTreeMap<Band, ModelPair>;

fn table_path(cfg: &RunConfig, variant: Variant) -> PathBuf {
    cfg.output_root
        .join("tables")
        .join(format!("{variant}.csv"))
}

fn model_rel_path(band: Band, variant: Variant) -> String {
    format!("models/{}_{variant}.json", band.tag())
}

fn model_index(band: Band, variant: Variant) -> usize {
    let b = Band::ALL.iter().position(|x| *x == band).unwrap_or(0);
    let v = Variant::ALL.iter().position(|x| *x == variant).unwrap_or(0);
    2 * b + v
}

/// Runs `f` on a pool of `cfg.threads` workers (0 = one per core).
pub fn with_threads<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    pool.install(f)
}

/// Writes a synthetic scene series into `cfg.input_root`: one scene per day
/// of `date_range`, with parameters from `cfg.synth` (defaults if absent).
pub fn write_synthetic_inputs(cfg: &RunConfig) -> Result<Vec<SceneBundle>> {
    let spec = SceneSpec {
        date: cfg.date_range.0,
        ..cfg.synth.clone().unwrap_or_default()
    };
    let scenes = gen_scene_series(&spec, cfg.days().len())?;
    write_scene_layout(&scenes, &cfg.input_root)?;
    Ok(scenes)
}

/// Loads every configured day that exists, in date order. Missing day
/// directories are skipped with a warning.
pub fn load_days(cfg: &RunConfig) -> Result<Vec<DayInputs>> {
    let available = scan_days(&cfg.input_root)?;
    let loaded: Vec<Option<DayInputs>> = cfg
        .days()
        .par_iter()
        .map(|&day| load_day(cfg, day, &available))
        .collect::<Result<_>>()?;
    let mut days = Vec::new();
    for (day, inputs) in cfg.days().into_iter().zip(loaded) {
        match inputs {
            Some(d) => days.push(d),
            None => log::warn!("{day}: no input directory, skipping"),
        }
    }
    if days.is_empty() {
        return Err(Error::Empty(format!(
            "no day directories for {}..={} under {}",
            cfg.date_range.0,
            cfg.date_range.1,
            cfg.input_root.display()
        )));
    }
    Ok(days)
}

/// Station rows for both variants, concatenated in date order.
pub fn build_tables(cfg: &RunConfig) -> Result<Tables> {
    let days = load_days(cfg)?;
    build_tables_from(cfg, &days)
}

pub fn build_tables_from(cfg: &RunConfig, days: &[DayInputs]) -> Result<Tables> {
    let stations = read_stations_csv(&cfg.station_path())?;
    let per_day: Vec<_> = days
        .par_iter()
        .map(|inputs| {
            let f = day_features(inputs, cfg)?;
            let (a047, a055) = (&inputs.aod[&Band::Aod047], &inputs.aod[&Band::Aod055]);
            Ok((
                extract_training_rows(a047, a055, &f.with_filter, &stations)?,
                extract_training_rows(a047, a055, &f.without_filter, &stations)?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut tables = Tables {
        with_filter: SampleTable::new(FeatureSchema::for_run(&cfg.covariate_tags, true)?),
        without_filter: SampleTable::new(FeatureSchema::for_run(&cfg.covariate_tags, false)?),
    };
    for (with, without) in per_day {
        tables.with_filter.extend(with)?;
        tables.without_filter.extend(without)?;
    }
    log::info!(
        "tables: {} rows with filter, {} without",
        tables.with_filter.len(),
        tables.without_filter.len()
    );
    Ok(tables)
}

pub fn write_tables(cfg: &RunConfig, tables: &Tables) -> Result<Vec<PathBuf>> {
    Variant::ALL
        .iter()
        .map(|&v| {
            let path = table_path(cfg, v);
            tables.get(v).write_csv(&path)?;
            Ok(path)
        })
        .collect()
}

pub fn read_tables(cfg: &RunConfig) -> Result<Tables> {
    Ok(Tables {
        with_filter: SampleTable::read_csv(&table_path(cfg, Variant::WithFilter))?,
        without_filter: SampleTable::read_csv(&table_path(cfg, Variant::WithoutFilter))?,
    })
}

/// Random search over `cfg.search_space`, then a final fit on every row with
/// the winning hyperparameters, for each band and variant.
pub fn train_models(tables: &Tables, cfg: &RunConfig) -> Result<ModelSet> {
    let mut out = BTreeMap::new();
    for band in Band::ALL {
        let mut fitted = Vec::new();
        for variant in Variant::ALL {
            let table = tables.get(variant);
            if table.is_empty() {
                return Err(Error::Empty(format!("{variant} table has no rows")));
            }
            let x = table.feature_matrix();
            let y = table.targets(band);
            let seed = tree_seed(cfg.seed, model_index(band, variant));
            let search =
                random_search(&x, &y, &cfg.search_space, cfg.search_iters, cfg.cv_k, seed)?;
            log::info!(
                "{} {variant}: search R2 {:.4} with {:?}",
                band.tag(),
                search.cv_score,
                search.best
            );
            let model = fit_forest(&x, &y, &search.best, seed.wrapping_add(1))?
                .with_schema(table.schema().clone())?
                .with_target_tag(band.tag());
            fitted.push(model);
        }
        let without_filter = fitted.pop().expect("two variants");
        let with_filter = fitted.pop().expect("two variants");
        out.insert(
            band,
            ModelPair {
                with_filter,
                without_filter,
            },
        );
    }
    Ok(out)
}

pub fn save_models(cfg: &RunConfig, models: &ModelSet) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for (band, pair) in models {
        for variant in Variant::ALL {
            let path = cfg.output_root.join(model_rel_path(*band, variant));
            pair.get(variant).save(&path)?;
            paths.push(path);
        }
    }
    Ok(paths)
}

pub fn load_models(cfg: &RunConfig) -> Result<ModelSet> {
    let load = |band, variant| {
        RandomForestModel::load(&cfg.output_root.join(model_rel_path(band, variant)))
    };
    Band::ALL
        .into_iter()
        .map(|band| {
            Ok((
                band,
                ModelPair {
                    with_filter: load(band, Variant::WithFilter)?,
                    without_filter: load(band, Variant::WithoutFilter)?,
                },
            ))
        })
        .collect()
}

/// One (band, variant, regime) entry of the evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub band: Band,
    pub variant: Variant,
    #[serde(flatten)]
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub cells: Vec<EvalCell>,
}

impl EvalSet {
    pub fn cell(&self, band: Band, variant: Variant, kind: FoldKind) -> Option<&EvalCell> {
        self.cells
            .iter()
            .find(|c| c.band == band && c.variant == variant && c.report.kind == kind)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("band,variant,kind,k,seed,fold,n,r2,rmse,mbe\n");
        for c in &self.cells {
            for line in c.report.to_csv().lines().skip(1) {
                out.push_str(&format!("{},{},{line}\n", c.band.tag(), c.variant));
            }
        }
        out
    }

    /// Writes `reports/eval.json` and `reports/eval.csv`.
    pub fn write(&self, output_root: &Path) -> Result<Vec<PathBuf>> {
        let dir = output_root.join("reports");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let json = dir.join("eval.json");
        let csv = dir.join("eval.csv");
        fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        Ok(vec![json, csv])
    }
}

/// Fold count for a regime: grouped regimes fall back to one fold per group
/// when there are fewer groups than `cv_k`.
fn fold_count(table: &SampleTable, kind: FoldKind, cv_k: usize) -> Result<usize> {
    let groups: BTreeSet<String> = match kind {
        FoldKind::Random => return Ok(cv_k),
        FoldKind::Spatial => table.rows().iter().map(|r| r.site_id.clone()).collect(),
        FoldKind::Temporal => table.rows().iter().map(|r| r.date.to_string()).collect(),
    };
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "{kind} CV needs at least 2 distinct groups, found {}",
            groups.len()
        )));
    }
    if groups.len() < cv_k {
        log::warn!(
            "{kind} CV: only {} groups, using {}-fold",
            groups.len(),
            groups.len()
        );
    }
    Ok(cv_k.min(groups.len()))
}

/// Cross-validates every band × variant × regime with the trainer produced by
/// `make_trainer`. Folds depend only on the table and `cfg.seed`.
pub fn evaluate_with(
    tables: &Tables,
    cfg: &RunConfig,
    make_trainer: &dyn Fn(Band, Variant) -> Result<Box<dyn Trainer>>,
) -> Result<EvalSet> {
    let mut cells = Vec::new();
    for band in Band::ALL {
        for variant in Variant::ALL {
            let table = tables.get(variant);
            let trainer = make_trainer(band, variant)?;
            for kind in FoldKind::ALL {
                let k = fold_count(table, kind, cfg.cv_k)?;
                let plan = make_folds(table, kind, k, cfg.seed)?;
                let report = cross_validate(trainer.as_ref(), table, band, &plan)?;
                log::info!(
                    "{} {variant} {kind}: pooled R2 {:?}",
                    band.tag(),
                    report.pooled.r2
                );
                cells.push(EvalCell {
                    band,
                    variant,
                    report,
                });
            }
        }
    }
    Ok(EvalSet { cells })
}

struct ForestTrainer {
    params: Hyperparams,
    seed: u64,
}

impl Trainer for ForestTrainer {
    fn fit_predict(&self, split: &FoldSplit) -> Result<Vec<f64>> {
        let model = fit_forest(&split.train_x, &split.train_y, &self.params, self.seed)?;
        predict(&model, &split.test_x)
    }
}

/// [`evaluate_with`] using forests with each model's tuned hyperparameters.
pub fn evaluate_all(tables: &Tables, cfg: &RunConfig, models: &ModelSet) -> Result<EvalSet> {
    evaluate_with(tables, cfg, &|band, variant| {
        let m = models[&band].get(variant);
        Ok(Box::new(ForestTrainer {
            params: m.params().clone(),
            seed: m.seed(),
        }))
    })
}

/// Model predictions at pixels where `observed` is invalid and every feature
/// of `stack` is valid.
pub fn prediction_layer(
    stack: &FeatureStack,
    model: &RandomForestModel,
    observed: &Grid,
) -> Result<Grid> {
    if model.schema() != stack.schema() {
        return Err(Error::Config(format!(
            "model {} expects features {:?}, the day provides {:?}",
            model.target_tag(),
            model.schema().names(),
            stack.schema().names()
        )));
    }
    let geo = *stack.geometry();
    if observed.geometry() != &geo {
        return Err(Error::GeometryMismatch(format!(
            "{} grid does not match the feature lattice",
            observed.band_tag()
        )));
    }
    let cells: Vec<Option<f64>> = (0..geo.n_rows)
        .into_par_iter()
        .flat_map_iter(|row| {
            let mut buf = Vec::with_capacity(stack.schema().len());
            (0..geo.n_cols)
                .map(|col| {
                    if observed.get(col, row).is_some() || !stack.fill_vector(col, row, &mut buf) {
                        None
                    } else {
                        Some(model.predict_row(&buf))
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Grid::from_options(geo, cells, observed.band_tag())
}

#[derive(Debug, Clone)]
pub struct ImputedBand {
    pub grid: Grid,
    /// Which layer supplied each pixel: [`LAYER_OBSERVED`],
    /// [`LAYER_WITH_FILTER`] or [`LAYER_WITHOUT_FILTER`].
    pub provenance: Vec<Option<usize>>,
}

impl ImputedBand {
    pub fn provenance_grid(&self) -> Result<Grid> {
        Grid::from_options(
            *self.grid.geometry(),
            self.provenance.iter().map(|p| p.map(|k| k as f64)),
            "provenance",
        )
    }
}

/// Observation first, then the with-filter prediction, then the
/// without-filter prediction.
pub fn impute_day(
    inputs: &DayInputs,
    cfg: &RunConfig,
    models: &ModelSet,
) -> Result<BTreeMap<Band, ImputedBand>> {
    let features = day_features(inputs, cfg)?;
    Band::ALL
        .into_iter()
        .map(|band| {
            let observed = &inputs.aod[&band];
            let pair = models
                .get(&band)
                .ok_or_else(|| Error::MissingInput(format!("models for {}", band.tag())))?;
            let with = prediction_layer(&features.with_filter, &pair.with_filter, observed)?;
            let without =
                prediction_layer(&features.without_filter, &pair.without_filter, observed)?;
            let (grid, provenance) = combine_with_provenance(&[observed, &with, &without])?;
            Ok((band, ImputedBand { grid, provenance }))
        })
        .collect()
}

fn imputed_paths(cfg: &RunConfig, band: Band, day: DateStamp) -> (PathBuf, PathBuf) {
    let name = format!("{}_{day}.asc", band.tag());
    (
        cfg.output_root.join("imputed").join(&name),
        cfg.output_root.join("provenance").join(&name),
    )
}

/// Imputes and writes every loaded day; returns the written paths.
pub fn impute_days(cfg: &RunConfig, days: &[DayInputs], models: &ModelSet) -> Result<Vec<PathBuf>> {
    let written: Vec<Vec<PathBuf>> = days
        .par_iter()
        .map(|inputs| {
            let mut paths = Vec::new();
            for (band, out) in impute_day(inputs, cfg, models)? {
                let (grid_path, prov_path) = imputed_paths(cfg, band, inputs.day);
                write_ascii_grid(&out.grid, &grid_path, cfg.nodata)?;
                write_ascii_grid(&out.provenance_grid()?, &prov_path, cfg.nodata)?;
                paths.push(grid_path);
                paths.push(prov_path);
            }
            Ok(paths)
        })
        .collect::<Result<_>>()?;
    Ok(written.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to `output_root`, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: serde_json::Value,
    pub outputs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn build(cfg: &RunConfig, paths: &[PathBuf]) -> Result<Manifest> {
        let mut outputs = paths
            .iter()
            .map(|p| {
                let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
                let rel = p.strip_prefix(&cfg.output_root).unwrap_or(p);
                Ok(ManifestEntry {
                    path: rel
                        .components()
                        .map(|c| c.as_os_str().to_string_lossy())
                        .collect::<Vec<_>>()
                        .join("/"),
                    bytes: bytes.len() as u64,
                    sha256: hex::encode(Sha256::digest(&bytes)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(Manifest {
            config: cfg.echo()?,
            outputs,
        })
    }

    pub fn entries_under(&self, prefix: &str) -> impl Iterator<Item = &ManifestEntry> {
        let prefix = format!("{prefix}/");
        self.outputs
            .iter()
            .filter(move |e| e.path.starts_with(&prefix))
    }

    pub fn write(&self, output_root: &Path) -> Result<PathBuf> {
        fs::create_dir_all(output_root).map_err(|e| Error::io(output_root, e))?;
        let path = output_root.join("manifest.json");
        let text =
            serde_json::to_string_pretty(self).map_err(|e| Error::Internal(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// `features` stage: build and write both tables.
pub fn stage_features(cfg: &RunConfig) -> Result<Tables> {
    with_threads(cfg, || {
        let tables = build_tables(cfg)?;
        write_tables(cfg, &tables)?;
        Ok(tables)
    })
    .stage("features")
}

/// `train` stage: read the tables written by `features`, train, save.
pub fn stage_train(cfg: &RunConfig) -> Result<ModelSet> {
    with_threads(cfg, || {
        let tables = read_tables(cfg)?;
        let models = train_models(&tables, cfg)?;
        save_models(cfg, &models)?;
        Ok(models)
    })
    .stage("train")
}

/// `evaluate` stage: cross-validate with the saved models' hyperparameters.
pub fn stage_evaluate(cfg: &RunConfig) -> Result<EvalSet> {
    with_threads(cfg, || {
        let tables = read_tables(cfg)?;
        let models = load_models(cfg)?;
        let eval = evaluate_all(&tables, cfg, &models)?;
        eval.write(&cfg.output_root)?;
        Ok(eval)
    })
    .stage("evaluate")
}

/// `impute` stage: impute every configured day with the saved models.
pub fn stage_impute(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    with_threads(cfg, || {
        let models = load_models(cfg)?;
        let days = load_days(cfg)?;
        impute_days(cfg, &days, &models)
    })
    .stage("impute")
}

/// All stages in order, then `manifest.json` listing every output with its
/// SHA-256.
pub fn run(cfg: &RunConfig) -> Result<Manifest> {
    cfg.validate().stage("config")?;
    with_threads(cfg, || {
        let days = load_days(cfg).stage("ingest")?;
        let mut written = Vec::new();
        let tables = build_tables_from(cfg, &days).stage("features")?;
        written.extend(write_tables(cfg, &tables).stage("features")?);
        let models = train_models(&tables, cfg).stage("train")?;
        written.extend(save_models(cfg, &models).stage("train")?);
        let eval = evaluate_all(&tables, cfg, &models).stage("evaluate")?;
        written.extend(eval.write(&cfg.output_root).stage("evaluate")?);
        written.extend(impute_days(cfg, &days, &models).stage("impute")?);
        let manifest = Manifest::build(cfg, &written).stage("manifest")?;
        manifest.write(&cfg.output_root).stage("manifest")?;
        Ok(manifest)
    })
}
