//! Predictor construction: calendar and coordinate encodings, per-day feature
//! stacks on the AOD pixel lattice, and extraction of station training rows.

mod date;
mod smoke;
mod table;

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridGeometry};

pub use date::DateStamp;
pub use smoke::{
    parse_smoke_geojson, rasterize_smoke, read_smoke_geojson, smoke_to_geojson, Ring, SmokeDensity,
    SmokePolygon,
};
pub use table::{read_stations_csv, write_stations_csv, SampleRow, SampleTable};

pub const SMOKE_FEATURE: &str = "smoke";
pub const ENCODING_FEATURES: [&str; 7] = [
    "year",
    "cos_month",
    "sin_month",
    "cos_doy",
    "sin_doy",
    "coord_x",
    "coord_y",
];

/// The two retrieved AOD bands, blue (0.47 µm) and green (0.55 µm).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    #[serde(rename = "AOD047")]
    Aod047,
    #[serde(rename = "AOD055")]
    Aod055,
}

impl Band {
    pub const ALL: [Band; 2] = [Band::Aod047, Band::Aod055];

    pub fn tag(self) -> &'static str {
        match self {
            Band::Aod047 => "AOD047",
            Band::Aod055 => "AOD055",
        }
    }

    /// Name of the neighbor-mean feature derived from this band.
    pub fn neighbor_feature(self) -> &'static str {
        match self {
            Band::Aod047 => "nbr_aod047",
            Band::Aod055 => "nbr_aod055",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Band> {
        Band::ALL
            .into_iter()
            .find(|b| b.tag().eq_ignore_ascii_case(tag))
    }
}

/// Ordered, duplicate-free list of feature names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct FeatureSchema {
    names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SchemaRepr {
    names: Vec<String>,
}

impl TryFrom<SchemaRepr> for FeatureSchema {
    type Error = Error;
    fn try_from(r: SchemaRepr) -> Result<Self> {
        FeatureSchema::new(r.names)
    }
}

impl From<FeatureSchema> for SchemaRepr {
    fn from(s: FeatureSchema) -> Self {
        SchemaRepr { names: s.names }
    }
}

impl FeatureSchema {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate feature name `{n}`"
                )));
            }
        }
        Ok(FeatureSchema { names })
    }

    /// Schema for a run: covariates in the given order, smoke, calendar and
    /// coordinate encodings, then the neighbor-mean AOD features if requested.
    pub fn for_run(covariate_tags: &[String], with_neighbor_aod: bool) -> Result<Self> {
        let mut names: Vec<String> = covariate_tags.to_vec();
        names.push(SMOKE_FEATURE.to_string());
        names.extend(ENCODING_FEATURES.iter().map(|s| s.to_string()));
        if with_neighbor_aod {
            names.extend(Band::ALL.iter().map(|b| b.neighbor_feature().to_string()));
        }
        FeatureSchema::new(names)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.position(name).is_some()
    }
}

/// `[year, cos_month, sin_month, cos_doy, sin_doy]`, with the day-of-year
/// period equal to the actual length of the year.
pub fn temporal_encoding(d: DateStamp) -> [f64; 5] {
    let month_angle = TAU * f64::from(d.month()) / 12.0;
    let doy_angle = TAU * f64::from(d.day_of_year()) / f64::from(d.days_in_year());
    [
        f64::from(d.year()),
        month_angle.cos(),
        month_angle.sin(),
        doy_angle.cos(),
        doy_angle.sin(),
    ]
}

/// Coordinates pass through unchanged, x first.
pub fn spatial_encoding(x: f64, y: f64) -> [f64; 2] {
    [x, y]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSite {
    pub site_id: String,
    pub x: f64,
    pub y: f64,
}

/// The available date closest to `target`; ties go to the earlier date.
pub fn associate_nearest_date(target: DateStamp, available: &[DateStamp]) -> Result<DateStamp> {
    available
        .iter()
        .copied()
        .min_by_key(|d| (target.days_until(*d).abs(), *d))
        .ok_or_else(|| Error::Empty("no candidate dates to associate".into()))
}

#[derive(Debug, Clone)]
enum FeatureSource {
    Grid(Grid),
    Calendar(usize),
    CoordX,
    CoordY,
}

/// All predictors for one day on a common pixel lattice.
///
/// Covariates, smoke and neighbor-mean AOD are stored grids; calendar and
/// coordinate encodings are computed per pixel on demand.
#[derive(Debug, Clone)]
pub struct FeatureStack {
    day: DateStamp,
    geometry: GridGeometry,
    schema: FeatureSchema,
    calendar: [f64; 5],
    sources: Vec<FeatureSource>,
}

impl FeatureStack {
    pub fn day(&self) -> DateStamp {
        self.day
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    /// The stored grid behind a feature, if it is not an encoding.
    pub fn grid(&self, name: &str) -> Option<&Grid> {
        match &self.sources[self.schema.position(name)?] {
            FeatureSource::Grid(g) => Some(g),
            _ => None,
        }
    }

    pub fn value(&self, feature: usize, col: usize, row: usize) -> Option<f64> {
        match &self.sources[feature] {
            FeatureSource::Grid(g) => g.get(col, row),
            FeatureSource::Calendar(k) => Some(self.calendar[*k]),
            FeatureSource::CoordX => Some(self.geometry.pixel_center(col, row).0),
            FeatureSource::CoordY => Some(self.geometry.pixel_center(col, row).1),
        }
    }

    /// Writes the feature vector of a pixel into `out`; false if any feature
    /// is invalid there.
    pub fn fill_vector(&self, col: usize, row: usize, out: &mut Vec<f64>) -> bool {
        out.clear();
        for k in 0..self.sources.len() {
            match self.value(k, col, row) {
                Some(v) => out.push(v),
                None => return false,
            }
        }
        true
    }

    pub fn vector_at(&self, col: usize, row: usize) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(self.sources.len());
        self.fill_vector(col, row, &mut out).then_some(out)
    }
}

/// Collects the predictor grids for one day.
///
/// Every grid must share the smoke grid's geometry. When `aod_filtered` is
/// given it must hold the neighbor-mean grids keyed by band tag, and the
/// schema gains `nbr_aod047` and `nbr_aod055` at the end.
pub fn assemble_feature_grids(
    day: DateStamp,
    covariates: &BTreeMap<String, Grid>,
    covariate_tags: &[String],
    smoke: &Grid,
    aod_filtered: Option<&BTreeMap<String, Grid>>,
) -> Result<FeatureStack> {
    let schema = FeatureSchema::for_run(covariate_tags, aod_filtered.is_some())?;
    let mut sources = Vec::with_capacity(schema.len());
    for tag in covariate_tags {
        let grid = covariates
            .get(tag)
            .ok_or_else(|| Error::MissingInput(format!("covariate `{tag}` for {day}")))?;
        smoke.ensure_same_geometry(grid)?;
        sources.push(FeatureSource::Grid(grid.clone()));
    }
    sources.push(FeatureSource::Grid(smoke.clone()));
    sources.extend((0..5).map(FeatureSource::Calendar));
    sources.push(FeatureSource::CoordX);
    sources.push(FeatureSource::CoordY);
    if let Some(filtered) = aod_filtered {
        for band in Band::ALL {
            let grid = filtered.get(band.tag()).ok_or_else(|| {
                Error::MissingInput(format!("neighbor-mean grid `{}` for {day}", band.tag()))
            })?;
            smoke.ensure_same_geometry(grid)?;
            sources.push(FeatureSource::Grid(grid.clone()));
        }
    }
    debug_assert_eq!(sources.len(), schema.len());
    Ok(FeatureStack {
        day,
        geometry: *smoke.geometry(),
        schema,
        calendar: temporal_encoding(day),
        sources,
    })
}

/// One row per station whose pixel has both AOD bands and every feature
/// valid, in station order.
pub fn extract_training_rows(
    aod047: &Grid,
    aod055: &Grid,
    stack: &FeatureStack,
    stations: &[StationSite],
) -> Result<Vec<SampleRow>> {
    if aod047.geometry() != stack.geometry() || aod055.geometry() != stack.geometry() {
        return Err(Error::GeometryMismatch(format!(
            "AOD grids for {} do not match the feature lattice",
            stack.day()
        )));
    }
    let mut rows = Vec::new();
    let mut buf = Vec::with_capacity(stack.schema().len());
    for site in stations {
        let Some((col, row)) = stack.geometry().locate(site.x, site.y) else {
            continue;
        };
        let (Some(t047), Some(t055)) = (aod047.get(col, row), aod055.get(col, row)) else {
            continue;
        };
        if !stack.fill_vector(col, row, &mut buf) {
            continue;
        }
        rows.push(SampleRow {
            site_id: site.site_id.clone(),
            date: stack.day(),
            x: site.x,
            y: site.y,
            target_047: t047,
            target_055: t055,
            features: buf.clone(),
            feature_validity: vec![true; buf.len()],
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> DateStamp {
        DateStamp::parse(s).unwrap()
    }

    fn geo() -> GridGeometry {
        GridGeometry::new(4, 3, 100.0, 50.0, 2.0).unwrap()
    }

    fn ramp(tag: &str, offset: f64) -> Grid {
        let g = geo();
        Grid::new(
            g,
            (0..g.len()).map(|i| i as f64 + offset).collect(),
            vec![true; g.len()],
            tag,
        )
        .unwrap()
    }

    fn tags() -> Vec<String> {
        vec!["elevation".into(), "tmax".into()]
    }

    fn covs() -> BTreeMap<String, Grid> {
        tags()
            .iter()
            .enumerate()
            .map(|(k, t)| (t.clone(), ramp(t, 100.0 * k as f64)))
            .collect()
    }

    fn smoke_grid() -> Grid {
        Grid::filled(geo(), 0.0, "smoke").unwrap()
    }

    #[test]
    fn month_encodings() {
        let e = temporal_encoding(d("2014-12-05"));
        assert!((e[1] - 1.0).abs() < 1e-12 && e[2].abs() < 1e-12);
        let e = temporal_encoding(d("2014-03-05"));
        assert!(e[1].abs() < 1e-12 && (e[2] - 1.0).abs() < 1e-12);
        assert_eq!(e[0], 2014.0);
    }

    #[test]
    fn leap_year_last_day_closes_cycle() {
        let e = temporal_encoding(d("2016-12-31"));
        assert!((e[3] - 1.0).abs() < 1e-12);
        assert!(e[4].abs() < 1e-12);
        // Non-leap: 2015-12-31 is doy 365 of 365.
        let e = temporal_encoding(d("2015-12-31"));
        assert!((e[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn encodings_lie_on_unit_circle() {
        let start = d("2015-01-01");
        for day in DateStamp::range_inclusive(start, d("2016-12-31")) {
            let e = temporal_encoding(day);
            assert!((e[1] * e[1] + e[2] * e[2] - 1.0).abs() < 1e-12);
            assert!((e[3] * e[3] + e[4] * e[4] - 1.0).abs() < 1e-12);
            let next_year = DateStamp::from_ymd(day.year() + 3, day.month(), 1).unwrap();
            let f = temporal_encoding(next_year);
            assert_eq!((e[1], e[2]), (f[1], f[2]));
        }
    }

    #[test]
    fn spatial_passthrough() {
        assert_eq!(spatial_encoding(-105.27, 40.01), [-105.27, 40.01]);
        let g = GridGeometry::new(3, 3, 0.0, 10.0, 1.0).unwrap();
        assert_eq!(g.pixel_center(0, 0), (0.5, 9.5));
    }

    #[test]
    fn nearest_date_rules() {
        let avail = [d("2014-01-01"), d("2014-01-17")];
        assert_eq!(
            associate_nearest_date(d("2014-01-10"), &avail).unwrap(),
            d("2014-01-17")
        );
        assert_eq!(
            associate_nearest_date(d("2014-01-09"), &avail).unwrap(),
            d("2014-01-01")
        );
        assert_eq!(
            associate_nearest_date(d("2014-01-17"), &avail).unwrap(),
            d("2014-01-17")
        );
        // Order of the candidate list does not matter for ties.
        let rev = [d("2014-01-17"), d("2014-01-01")];
        assert_eq!(
            associate_nearest_date(d("2014-01-09"), &rev).unwrap(),
            d("2014-01-01")
        );
        assert!(associate_nearest_date(d("2014-01-09"), &[]).is_err());
    }

    #[test]
    fn schema_variants() {
        let smoke = smoke_grid();
        let without =
            assemble_feature_grids(d("2014-06-01"), &covs(), &tags(), &smoke, None).unwrap();
        assert!(!without.schema().contains("nbr_aod047"));
        assert_eq!(without.schema().len(), 2 + 1 + 7);

        let filtered: BTreeMap<_, _> = Band::ALL
            .iter()
            .map(|b| (b.tag().to_string(), ramp(b.tag(), 5.0)))
            .collect();
        let with =
            assemble_feature_grids(d("2014-06-01"), &covs(), &tags(), &smoke, Some(&filtered))
                .unwrap();
        let names = with.schema().names();
        assert_eq!(&names[names.len() - 2..], ["nbr_aod047", "nbr_aod055"]);
        assert_eq!(&names[..without.schema().len()], without.schema().names());
    }

    #[test]
    fn missing_covariate_is_named() {
        let mut c = covs();
        c.remove("elevation");
        let e =
            assemble_feature_grids(d("2014-06-01"), &c, &tags(), &smoke_grid(), None).unwrap_err();
        assert!(e.to_string().contains("elevation"), "{e}");
    }

    #[test]
    fn duplicate_schema_names_rejected() {
        assert!(FeatureSchema::new(vec!["a".into(), "a".into()]).is_err());
        assert!(FeatureSchema::for_run(&["smoke".to_string()], false).is_err());
    }

    #[test]
    fn extraction_matches_direct_lookup() {
        let day = d("2014-06-01");
        let stack = assemble_feature_grids(day, &covs(), &tags(), &smoke_grid(), None).unwrap();
        let a047 = ramp("AOD047", 300.0);
        let a055 = ramp("AOD055", 250.0);
        let g = geo();
        let stations: Vec<StationSite> = [(0, 0), (3, 1), (2, 2)]
            .iter()
            .enumerate()
            .map(|(k, &(c, r))| {
                let (x, y) = g.pixel_center(c, r);
                StationSite {
                    site_id: format!("s{k}"),
                    x: x + 0.3,
                    y: y - 0.7,
                }
            })
            .collect();
        let rows = extract_training_rows(&a047, &a055, &stack, &stations).unwrap();
        assert_eq!(rows.len(), 3);
        let enc = temporal_encoding(day);
        for (row, (&(c, r), site)) in rows
            .iter()
            .zip([(0, 0), (3, 1), (2, 2)].iter().zip(&stations))
        {
            let i = r * 4 + c;
            let (cx, cy) = g.pixel_center(c, r);
            let expected = vec![
                i as f64,
                i as f64 + 100.0,
                0.0,
                enc[0],
                enc[1],
                enc[2],
                enc[3],
                enc[4],
                cx,
                cy,
            ];
            assert_eq!(row.features, expected);
            assert_eq!(row.site_id, site.site_id);
            assert_eq!(row.target_047, i as f64 + 300.0);
            assert_eq!(row.target_055, i as f64 + 250.0);
            assert!(row.feature_validity.iter().all(|&v| v));
        }
    }

    #[test]
    fn extraction_drops_incomplete_pixels() {
        let day = d("2014-06-01");
        let mut c = covs();
        let g = geo();
        // tmax invalid at pixel (1,0).
        let tmax =
            Grid::from_options(g, (0..g.len()).map(|i| (i != 1).then_some(1.0)), "tmax").unwrap();
        c.insert("tmax".into(), tmax);
        let stack = assemble_feature_grids(day, &c, &tags(), &smoke_grid(), None).unwrap();
        let a047 =
            Grid::from_options(g, (0..g.len()).map(|i| (i != 2).then_some(1.0)), "AOD047").unwrap();
        let a055 = ramp("AOD055", 0.0);
        let site = |c: usize, r: usize| {
            let (x, y) = g.pixel_center(c, r);
            StationSite {
                site_id: format!("{c}{r}"),
                x,
                y,
            }
        };
        let outside = StationSite {
            site_id: "far".into(),
            x: 0.0,
            y: 0.0,
        };
        let stations = vec![site(1, 0), site(2, 0), site(3, 0), outside];
        let rows = extract_training_rows(&a047, &a055, &stack, &stations).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].site_id, "30");
    }
}
