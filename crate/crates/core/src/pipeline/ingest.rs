use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::ascii::read_ascii_grid;
use crate::error::{Error, Result};
use crate::features::{
    assemble_feature_grids, associate_nearest_date, rasterize_smoke, read_smoke_geojson, Band,
    DateStamp, FeatureStack,
};
use crate::grid::{mean_filter, resample_nearest, FilterConfig, Grid};
use crate::pipeline::RunConfig;

/// Raw inputs of one day, all on the lattice of that day's AOD047 grid.
#[derive(Debug, Clone)]
pub struct DayInputs {
    pub day: DateStamp,
    pub aod: BTreeMap<Band, Grid>,
    pub covariates: BTreeMap<String, Grid>,
    pub smoke: Grid,
}

/// Both predictor stacks of one day.
#[derive(Debug, Clone)]
pub struct DayFeatures {
    pub with_filter: FeatureStack,
    pub without_filter: FeatureStack,
}

/// Dates that have a day directory under `root`, ascending.
pub fn scan_days(root: &Path) -> Result<Vec<DateStamp>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut days = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if !entry.path().is_dir() {
            continue;
        }
        if let Some(d) = entry
            .file_name()
            .to_str()
            .and_then(|s| DateStamp::parse(s).ok())
        {
            days.push(d);
        }
    }
    days.sort();
    Ok(days)
}

/// `<root>/<day>/<tag>.asc`, or `<root>/<day>/<tag>_<day>.asc` if only that
/// exists.
fn grid_path(root: &Path, day: DateStamp, tag: &str) -> Option<PathBuf> {
    let dir = root.join(day.to_string());
    [format!("{tag}.asc"), format!("{tag}_{day}.asc")]
        .into_iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
}

fn read_tagged(path: &Path, tag: &str) -> Result<Grid> {
    Ok(read_ascii_grid(path)?.with_tag(tag))
}

/// Loads one day. `Ok(None)` when the day directory does not exist.
///
/// Covariates absent from the day's directory (slow-changing layers such as
/// NDVI composites) are taken from the nearest day that has them. Grids on a
/// different lattice are resampled to the AOD047 lattice by nearest neighbor.
pub fn load_day(
    cfg: &RunConfig,
    day: DateStamp,
    available: &[DateStamp],
) -> Result<Option<DayInputs>> {
    let root = &cfg.input_root;
    if !root.join(day.to_string()).is_dir() {
        return Ok(None);
    }
    let mut aod = BTreeMap::new();
    for band in Band::ALL {
        let path = grid_path(root, day, band.tag())
            .ok_or_else(|| Error::MissingInput(format!("{} for {day}", band.tag())))?;
        let mut grid = read_tagged(&path, band.tag())?;
        if cfg.scale_aod {
            grid = grid.map_valid(|v| v * 1000.0)?;
        }
        aod.insert(band, grid);
    }
    let template = aod[&Band::Aod047].clone();
    template.ensure_same_geometry(&aod[&Band::Aod055])?;

    let mut covariates = BTreeMap::new();
    for tag in &cfg.covariate_tags {
        let path = match grid_path(root, day, tag) {
            Some(p) => p,
            None => {
                let having: Vec<DateStamp> = available
                    .iter()
                    .copied()
                    .filter(|d| grid_path(root, *d, tag).is_some())
                    .collect();
                let nearest = associate_nearest_date(day, &having)
                    .map_err(|_| Error::MissingInput(format!("covariate `{tag}` for {day}")))?;
                log::debug!("{day}: covariate `{tag}` taken from {nearest}");
                grid_path(root, nearest, tag).expect("filtered on existence")
            }
        };
        let mut grid = read_tagged(&path, tag)?;
        if !grid.same_geometry(&template) {
            log::debug!("{day}: resampling `{tag}` to the AOD lattice");
            grid = resample_nearest(&grid, &template).with_tag(tag.as_str());
        }
        covariates.insert(tag.clone(), grid);
    }

    let smoke_path = root.join(format!("smoke_{day}.geojson"));
    let polygons = if smoke_path.is_file() {
        read_smoke_geojson(&smoke_path)?
    } else {
        log::debug!("{day}: no smoke file, assuming no plumes");
        Vec::new()
    };
    let smoke = rasterize_smoke(&polygons, template.geometry())?;
    Ok(Some(DayInputs {
        day,
        aod,
        covariates,
        smoke,
    }))
}

/// Neighbor-mean AOD grids, always excluding the pixel itself.
pub fn neighbor_means(inputs: &DayInputs, filter: &FilterConfig) -> Result<BTreeMap<String, Grid>> {
    let cfg = FilterConfig {
        include_center: false,
        ..*filter
    };
    inputs
        .aod
        .iter()
        .map(|(band, g)| Ok((band.tag().to_string(), mean_filter(g, &cfg)?)))
        .collect()
}

pub fn day_features(inputs: &DayInputs, cfg: &RunConfig) -> Result<DayFeatures> {
    let filtered = neighbor_means(inputs, &cfg.filter)?;
    let stack = |f: Option<&BTreeMap<String, Grid>>| {
        assemble_feature_grids(
            inputs.day,
            &inputs.covariates,
            &cfg.covariate_tags,
            &inputs.smoke,
            f,
        )
    };
    Ok(DayFeatures {
        with_filter: stack(Some(&filtered))?,
        without_filter: stack(None)?,
    })
}
