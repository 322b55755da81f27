//! Deterministic synthetic scenes with known truth.
//!
//! A scene is one day: two spatially correlated AOD bands, a cloud-like gap
//! mask shared by both, covariates (some informative, some pure noise), smoke
//! rectangles and monitoring stations. Every output is a pure function of the
//! [`SceneSpec`].

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ascii::{write_ascii_grid, DEFAULT_NODATA};
use crate::error::{Error, Result};
use crate::features::{
    rasterize_smoke, smoke_to_geojson, write_stations_csv, Band, DateStamp, SmokeDensity,
    SmokePolygon, StationSite,
};
use crate::grid::{Grid, GridGeometry};

/// Mean of the generated fields in scaled AOD units, before the band offset.
pub const FIELD_MEAN: f64 = 300.0;
pub const FIELD_SD: f64 = 100.0;
/// Band offsets: the green band runs slightly lower than the blue band.
pub const BAND_OFFSET_047: f64 = 0.0;
pub const BAND_OFFSET_055: f64 = -30.0;
/// Weight of the band-specific noise mixed into the shared base noise.
/// Keeps the two bands strongly but not perfectly correlated.
const BAND_NOISE_WEIGHT: f64 = 0.35;

const STREAM_BASE: u64 = 1;
const STREAM_BAND: u64 = 2;
const STREAM_MASK: u64 = 3;
const STREAM_COVARIATES: u64 = 4;
const STREAM_SMOKE: u64 = 5;
const STREAM_STATIONS: u64 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub n_cols: usize,
    pub n_rows: usize,
    pub cell_size: f64,
    /// Gaussian smoothing sigma in pixels; 0 disables smoothing.
    pub correlation_length: f64,
    pub missing_fraction_target: f64,
    pub n_covariates: usize,
    pub noise_sd: f64,
    pub n_stations: usize,
    pub date: DateStamp,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            n_cols: 128,
            n_rows: 128,
            cell_size: 1.0,
            correlation_length: 8.0,
            missing_fraction_target: 0.6,
            n_covariates: 6,
            noise_sd: 150.0,
            n_stations: 80,
            date: DateStamp::from_ymd(2021, 7, 1).expect("valid date"),
            seed: 20230716,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.correlation_length >= 0.0 && self.correlation_length.is_finite()) {
            return bad("correlation_length must be finite and >= 0");
        }
        if !(self.missing_fraction_target > 0.0 && self.missing_fraction_target < 1.0) {
            return bad("missing_fraction_target must lie in (0, 1)");
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be finite and >= 0");
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<GridGeometry> {
        GridGeometry::new(
            self.n_cols,
            self.n_rows,
            0.0,
            self.n_rows as f64 * self.cell_size,
            self.cell_size,
        )
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Tags of the generated covariates, informative ones first.
    pub fn covariate_tags(&self) -> Vec<String> {
        (0..self.n_covariates)
            .map(|i| format!("cov{i:02}"))
            .collect()
    }

    pub fn n_informative(&self) -> usize {
        self.n_covariates.div_ceil(2)
    }
}

#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub spec: SceneSpec,
    pub truth_047: Grid,
    pub truth_055: Grid,
    pub observed_047: Grid,
    pub observed_055: Grid,
    pub covariates: BTreeMap<String, Grid>,
    pub smoke_polygons: Vec<SmokePolygon>,
    pub smoke: Grid,
    pub stations: Vec<StationSite>,
}

impl SceneBundle {
    pub fn truth(&self, band: Band) -> &Grid {
        match band {
            Band::Aod047 => &self.truth_047,
            Band::Aod055 => &self.truth_055,
        }
    }

    pub fn observed(&self, band: Band) -> &Grid {
        match band {
            Band::Aod047 => &self.observed_047,
            Band::Aod055 => &self.observed_055,
        }
    }
}

fn white_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Separable Gaussian blur with sigma `sigma` pixels, truncated at 3 sigma.
/// Near borders the kernel is renormalized over in-bounds taps.
fn gaussian_smooth(field: &[f64], n_cols: usize, n_rows: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return field.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();

    let pass = |src: &[f64], len: usize, count: usize, at: &dyn Fn(usize, usize) -> usize| {
        let mut out = vec![0.0; src.len()];
        for line in 0..count {
            for i in 0..len {
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for (t, w) in kernel.iter().enumerate() {
                    let j = i as isize + t as isize - radius;
                    if j >= 0 && (j as usize) < len {
                        acc += w * src[at(line, j as usize)];
                        wsum += w;
                    }
                }
                out[at(line, i)] = acc / wsum;
            }
        }
        out
    };
    let rows = pass(field, n_cols, n_rows, &|r, c| r * n_cols + c);
    pass(&rows, n_rows, n_cols, &|c, r| r * n_cols + c)
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
}

/// Spatially correlated, non-negative AOD field with mean
/// `FIELD_MEAN + band_offset` and standard deviation `FIELD_SD` (before the
/// floor at zero).
pub fn gen_field(spec: &SceneSpec, band_offset: f64) -> Result<Grid> {
    spec.validate()?;
    let geo = spec.geometry()?;
    let n = geo.len();
    let base = white_noise(&mut spec.rng(STREAM_BASE), n);
    let mut band_rng = spec.rng(STREAM_BAND);
    // Distinct band offsets get distinct noise draws.
    band_rng.set_word_pos(u128::from(band_offset.to_bits() >> 8) << 4);
    let band = white_noise(&mut band_rng, n);
    let mixed: Vec<f64> = base
        .iter()
        .zip(&band)
        .map(|(a, b)| a + BAND_NOISE_WEIGHT * b)
        .collect();
    let mut field = gaussian_smooth(&mixed, spec.n_cols, spec.n_rows, spec.correlation_length);
    standardize(&mut field);
    let values = field
        .iter()
        .map(|z| (FIELD_MEAN + band_offset + FIELD_SD * z).max(0.0))
        .collect();
    Grid::new(geo, values, vec![true; n], "truth")
}

/// Observation mask (true = observed) with contiguous gaps covering
/// `round(missing_fraction_target * n)` pixels.
pub fn gen_mask(spec: &SceneSpec) -> Result<Vec<bool>> {
    spec.validate()?;
    let n = spec.n_cols * spec.n_rows;
    let noise = white_noise(&mut spec.rng(STREAM_MASK), n);
    let field = gaussian_smooth(&noise, spec.n_cols, spec.n_rows, spec.correlation_length);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| field[a].total_cmp(&field[b]).then(a.cmp(&b)));
    let n_missing = (spec.missing_fraction_target * n as f64).round() as usize;
    let mut observed = vec![true; n];
    for &i in &order[..n_missing.min(n)] {
        observed[i] = false;
    }
    Ok(observed)
}

/// Covariates: the first half are `a * truth + N(0, noise_sd)` with a fixed
/// per-tag slope, the rest are independent N(0, FIELD_SD) noise.
pub fn gen_covariates(spec: &SceneSpec, truth: &Grid) -> Result<BTreeMap<String, Grid>> {
    spec.validate()?;
    let mut rng = spec.rng(STREAM_COVARIATES);
    let noise =
        Normal::new(0.0, spec.noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let distractor =
        Normal::new(0.0, FIELD_SD).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let n_inf = spec.n_informative();
    let mut out = BTreeMap::new();
    for (i, tag) in spec.covariate_tags().into_iter().enumerate() {
        let cells: Vec<Option<f64>> = if i < n_inf {
            let slope = 1.0 + 0.5 * i as f64;
            truth
                .cells()
                .map(|t| Some(slope * t.unwrap_or(0.0) + noise.sample(&mut rng)))
                .collect()
        } else {
            (0..truth.len())
                .map(|_| Some(distractor.sample(&mut rng)))
                .collect()
        };
        out.insert(
            tag.clone(),
            Grid::from_options(*truth.geometry(), cells, tag)?,
        );
    }
    Ok(out)
}

fn gen_smoke(spec: &SceneSpec) -> Vec<SmokePolygon> {
    let mut rng = spec.rng(STREAM_SMOKE);
    let w = spec.n_cols as f64 * spec.cell_size;
    let h = spec.n_rows as f64 * spec.cell_size;
    let count = rng.gen_range(0..=3);
    (0..count)
        .map(|_| {
            let cx = rng.gen::<f64>() * w;
            let cy = rng.gen::<f64>() * h;
            let hw = (0.05 + 0.15 * rng.gen::<f64>()) * w;
            let hh = (0.05 + 0.15 * rng.gen::<f64>()) * h;
            let density = [
                SmokeDensity::Light,
                SmokeDensity::Medium,
                SmokeDensity::Heavy,
            ][rng.gen_range(0..3)];
            SmokePolygon::rectangle(cx - hw, cy - hh, cx + hw, cy + hh, density)
        })
        .collect()
}

/// Stations uniformly distributed inside the extent.
pub fn gen_stations(spec: &SceneSpec) -> Result<Vec<StationSite>> {
    let geo = spec.geometry()?;
    let mut rng = spec.rng(STREAM_STATIONS);
    let w = geo.x_max() - geo.x_origin;
    let h = geo.y_origin - geo.y_min();
    Ok((0..spec.n_stations)
        .map(|i| StationSite {
            site_id: format!("S{i:04}"),
            x: geo.x_origin + rng.gen::<f64>() * w,
            y: geo.y_origin - rng.gen::<f64>() * h,
        })
        .collect())
}

pub fn gen_scene(spec: &SceneSpec) -> Result<SceneBundle> {
    spec.validate()?;
    let truth_047 = gen_field(spec, BAND_OFFSET_047)?.with_tag(Band::Aod047.tag());
    let truth_055 = gen_field(spec, BAND_OFFSET_055)?.with_tag(Band::Aod055.tag());
    let mask = gen_mask(spec)?;
    let observe = |g: &Grid| {
        Grid::from_options(
            *g.geometry(),
            g.cells().zip(&mask).map(|(c, &ok)| c.filter(|_| ok)),
            g.band_tag(),
        )
    };
    let observed_047 = observe(&truth_047)?;
    let observed_055 = observe(&truth_055)?;
    let covariates = gen_covariates(spec, &truth_047)?;
    let smoke_polygons = gen_smoke(spec);
    let smoke = rasterize_smoke(&smoke_polygons, truth_047.geometry())?;
    Ok(SceneBundle {
        spec: spec.clone(),
        truth_047,
        truth_055,
        observed_047,
        observed_055,
        covariates,
        smoke_polygons,
        smoke,
        stations: gen_stations(spec)?,
    })
}

/// Consecutive independent days starting at `base.date`. Day `i` uses seed
/// `base.seed + i`; all days share the station network of day 0.
pub fn gen_scene_series(base: &SceneSpec, n_days: usize) -> Result<Vec<SceneBundle>> {
    let stations = gen_stations(base)?;
    (0..n_days)
        .map(|i| {
            let spec = SceneSpec {
                date: base.date.plus_days(i as u64).ok_or_else(|| {
                    Error::InvalidArgument("scene series runs past the calendar".into())
                })?,
                seed: base.seed.wrapping_add(i as u64),
                ..base.clone()
            };
            let mut scene = gen_scene(&spec)?;
            scene.stations = stations.clone();
            Ok(scene)
        })
        .collect()
}

/// Writes scenes in the pipeline's input layout:
/// `<root>/<date>/<tag>.asc`, `<root>/smoke_<date>.geojson`,
/// `<root>/stations.csv`, plus the ground truth under `<root>/truth/`.
pub fn write_scene_layout(scenes: &[SceneBundle], root: &Path) -> Result<()> {
    let Some(first) = scenes.first() else {
        return Err(Error::Empty("no scenes to write".into()));
    };
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write_stations_csv(&first.stations, &root.join("stations.csv"))?;
    for scene in scenes {
        let date = scene.spec.date.to_string();
        let day_dir = root.join(&date);
        for band in Band::ALL {
            write_ascii_grid(
                scene.observed(band),
                &day_dir.join(format!("{}.asc", band.tag())),
                DEFAULT_NODATA,
            )?;
            write_ascii_grid(
                scene.truth(band),
                &root
                    .join("truth")
                    .join(format!("{}_{date}.asc", band.tag())),
                DEFAULT_NODATA,
            )?;
        }
        for (tag, grid) in &scene.covariates {
            write_ascii_grid(grid, &day_dir.join(format!("{tag}.asc")), DEFAULT_NODATA)?;
        }
        let smoke_path = root.join(format!("smoke_{date}.geojson"));
        std::fs::write(&smoke_path, smoke_to_geojson(&scene.smoke_polygons))
            .map_err(|e| Error::io(&smoke_path, e))?;
    }
    Ok(())
}
