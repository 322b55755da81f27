//! Smoke plume polygons and their rasterization to an ordinal density grid.

use std::fs;
use std::path::Path;

use geojson::{Feature, FeatureCollection, Geometry, GeometryValue, JsonObject, JsonValue};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SmokeDensity {
    Light,
    Medium,
    Heavy,
}

impl SmokeDensity {
    pub fn ordinal(self) -> u8 {
        match self {
            SmokeDensity::Light => 1,
            SmokeDensity::Medium => 2,
            SmokeDensity::Heavy => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SmokeDensity::Light => "Light",
            SmokeDensity::Medium => "Medium",
            SmokeDensity::Heavy => "Heavy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "light" => Some(SmokeDensity::Light),
            "medium" => Some(SmokeDensity::Medium),
            "heavy" => Some(SmokeDensity::Heavy),
            _ => None,
        }
    }
}

pub type Ring = Vec<(f64, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct SmokePolygon {
    pub exterior: Ring,
    pub holes: Vec<Ring>,
    pub density: SmokeDensity,
}

fn validate_ring(ring: &Ring) -> Result<()> {
    if ring.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "polygon ring needs at least 4 vertices, got {}",
            ring.len()
        )));
    }
    if ring.first() != ring.last() {
        return Err(Error::InvalidArgument("polygon ring is not closed".into()));
    }
    Ok(())
}

impl SmokePolygon {
    pub fn new(exterior: Ring, holes: Vec<Ring>, density: SmokeDensity) -> Result<Self> {
        validate_ring(&exterior)?;
        holes.iter().try_for_each(validate_ring)?;
        Ok(SmokePolygon {
            exterior,
            holes,
            density,
        })
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64, density: SmokeDensity) -> Self {
        SmokePolygon {
            exterior: vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)],
            holes: Vec::new(),
            density,
        }
    }

    fn rings(&self) -> impl Iterator<Item = &Ring> {
        std::iter::once(&self.exterior).chain(&self.holes)
    }

    fn bbox(&self) -> (f64, f64, f64, f64) {
        self.exterior.iter().fold(
            (
                f64::INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
            ),
            |(x0, y0, x1, y1), &(x, y)| (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        )
    }

    /// Even-odd containment over all rings; points on any edge are inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let mut inside = false;
        for ring in self.rings() {
            for edge in ring.windows(2) {
                let ((xa, ya), (xb, yb)) = (edge[0], edge[1]);
                if on_segment(x, y, xa, ya, xb, yb) {
                    return true;
                }
                if (ya > y) != (yb > y) {
                    let x_cross = xa + (y - ya) * (xb - xa) / (yb - ya);
                    if x < x_cross {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }
}

fn on_segment(x: f64, y: f64, xa: f64, ya: f64, xb: f64, yb: f64) -> bool {
    let cross = (xb - xa) * (y - ya) - (yb - ya) * (x - xa);
    if cross != 0.0 {
        return false;
    }
    x >= xa.min(xb) && x <= xa.max(xb) && y >= ya.min(yb) && y <= ya.max(yb)
}

/// Per pixel, the highest density ordinal among polygons containing the
/// pixel center, or 0 where there is none. Every output pixel is valid.
pub fn rasterize_smoke(polys: &[SmokePolygon], template: &GridGeometry) -> Result<Grid> {
    for p in polys {
        validate_ring(&p.exterior)?;
        p.holes.iter().try_for_each(validate_ring)?;
    }
    let geo = *template;
    let mut values = vec![0.0f64; geo.len()];
    for poly in polys {
        let level = f64::from(poly.density.ordinal());
        let (bx0, by0, bx1, by1) = poly.bbox();
        // Pixel index window whose centers can fall inside the bbox.
        let col_lo = ((bx0 - geo.x_origin) / geo.cell_size - 0.5)
            .floor()
            .max(0.0) as usize;
        let col_hi = ((bx1 - geo.x_origin) / geo.cell_size - 0.5).ceil();
        let row_lo = ((geo.y_origin - by1) / geo.cell_size - 0.5)
            .floor()
            .max(0.0) as usize;
        let row_hi = ((geo.y_origin - by0) / geo.cell_size - 0.5).ceil();
        if col_hi < 0.0 || row_hi < 0.0 {
            continue;
        }
        let col_hi = (col_hi as usize).min(geo.n_cols - 1);
        let row_hi = (row_hi as usize).min(geo.n_rows - 1);
        for row in row_lo..=row_hi {
            for col in col_lo..=col_hi {
                let i = geo.index(col, row);
                if values[i] >= level {
                    continue;
                }
                let (x, y) = geo.pixel_center(col, row);
                if poly.contains(x, y) {
                    values[i] = level;
                }
            }
        }
    }
    let n = geo.len();
    Grid::new(geo, values, vec![true; n], "smoke")
}

fn ring_from_positions(ring: &[geojson::Position]) -> Ring {
    ring.iter().map(|p| (p[0], p[1])).collect()
}

pub fn parse_smoke_geojson(text: &str, origin: &Path) -> Result<Vec<SmokePolygon>> {
    let collection: FeatureCollection = text
        .parse()
        .map_err(|e| Error::parse(origin, format!("invalid GeoJSON: {e}")))?;
    let mut out = Vec::new();
    for (i, feature) in collection.features.iter().enumerate() {
        let density = feature
            .properties
            .as_ref()
            .and_then(|props| {
                props
                    .iter()
                    .find(|(k, _)| k.eq_ignore_ascii_case("density"))
                    .map(|(_, v)| v)
            })
            .and_then(JsonValue::as_str)
            .and_then(SmokeDensity::parse)
            .ok_or_else(|| {
                Error::parse(origin, format!("feature {i}: missing or unknown `Density`"))
            })?;
        let Some(geometry) = &feature.geometry else {
            continue;
        };
        let polygons: Vec<&Vec<Vec<geojson::Position>>> = match &geometry.value {
            GeometryValue::Polygon { coordinates } => vec![coordinates],
            GeometryValue::MultiPolygon { coordinates } => coordinates.iter().collect(),
            other => {
                return Err(Error::parse(
                    origin,
                    format!("feature {i}: unsupported geometry {}", other.type_name()),
                ))
            }
        };
        for rings in polygons {
            let Some((exterior, holes)) = rings.split_first() else {
                continue;
            };
            let poly = SmokePolygon::new(
                ring_from_positions(exterior),
                holes.iter().map(|h| ring_from_positions(h)).collect(),
                density,
            )
            .map_err(|e| Error::parse(origin, format!("feature {i}: {e}")))?;
            out.push(poly);
        }
    }
    Ok(out)
}

pub fn read_smoke_geojson(path: &Path) -> Result<Vec<SmokePolygon>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_smoke_geojson(&text, path)
}

pub fn smoke_to_geojson(polys: &[SmokePolygon]) -> String {
    let features = polys.iter().map(|p| {
        let rings = p
            .rings()
            .map(|r| r.iter().map(|&(x, y)| [x, y]).collect::<Vec<_>>());
        let mut props = JsonObject::new();
        props.insert("Density".into(), JsonValue::from(p.density.label()));
        Feature {
            geometry: Some(Geometry::new(GeometryValue::new_polygon(rings))),
            properties: Some(props),
            ..Default::default()
        }
    });
    FeatureCollection::new(features).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn template() -> GridGeometry {
        GridGeometry::new(10, 10, 0.0, 10.0, 1.0).unwrap()
    }

    /// Independent crossing-number test written against pixel centers.
    fn oracle_inside(ring: &Ring, x: f64, y: f64) -> bool {
        let n = ring.len() - 1;
        let mut crossings = 0;
        for k in 0..n {
            let (x1, y1) = ring[k];
            let (x2, y2) = ring[k + 1];
            let t_num = (x - x1) * (x2 - x1) + (y - y1) * (y2 - y1);
            let len2 = (x2 - x1).powi(2) + (y2 - y1).powi(2);
            let cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1);
            if cross == 0.0 && t_num >= 0.0 && t_num <= len2 {
                return true;
            }
            if (y1 <= y && y < y2) || (y2 <= y && y < y1) {
                let xi = x1 + (y - y1) / (y2 - y1) * (x2 - x1);
                if xi > x {
                    crossings += 1;
                }
            }
        }
        crossings % 2 == 1
    }

    #[test]
    fn empty_list_is_all_zero() {
        let g = rasterize_smoke(&[], &template()).unwrap();
        assert_eq!(g.valid_count(), 100);
        assert!(g.cells().all(|c| c == Some(0.0)));
    }

    #[test]
    fn covering_heavy_rectangle() {
        let p = SmokePolygon::rectangle(-1.0, -1.0, 11.0, 11.0, SmokeDensity::Heavy);
        let g = rasterize_smoke(&[p], &template()).unwrap();
        assert!(g.cells().all(|c| c == Some(3.0)));
    }

    #[test]
    fn overlap_takes_max() {
        let light = SmokePolygon::rectangle(0.0, 0.0, 6.0, 6.0, SmokeDensity::Light);
        let medium = SmokePolygon::rectangle(4.0, 4.0, 10.0, 10.0, SmokeDensity::Medium);
        let g = rasterize_smoke(&[medium.clone(), light.clone()], &template()).unwrap();
        let geo = template();
        for row in 0..10 {
            for col in 0..10 {
                let (x, y) = geo.pixel_center(col, row);
                let mut expect = 0.0;
                if oracle_inside(&light.exterior, x, y) {
                    expect = 1.0;
                }
                if oracle_inside(&medium.exterior, x, y) {
                    expect = 2.0;
                }
                assert_eq!(g.get(col, row), Some(expect), "({col},{row})");
            }
        }
        // Pixel (4,5) has center (4.5, 4.5), inside both.
        assert_eq!(g.get(4, 5), Some(2.0));
    }

    #[test]
    fn center_on_edge_is_inside() {
        // Right edge at x = 2.5 passes through the centers of column 2.
        let p = SmokePolygon::rectangle(0.0, 0.0, 2.5, 10.0, SmokeDensity::Light);
        let g = rasterize_smoke(&[p], &template()).unwrap();
        assert_eq!(g.get(2, 3), Some(1.0));
        assert_eq!(g.get(3, 3), Some(0.0));
    }

    #[test]
    fn holes_are_excluded() {
        let hole = vec![(3.0, 3.0), (7.0, 3.0), (7.0, 7.0), (3.0, 7.0), (3.0, 3.0)];
        let outer = SmokePolygon::rectangle(0.0, 0.0, 10.0, 10.0, SmokeDensity::Medium).exterior;
        let p = SmokePolygon::new(outer, vec![hole], SmokeDensity::Medium).unwrap();
        let g = rasterize_smoke(&[p], &template()).unwrap();
        assert_eq!(g.get(5, 5), Some(0.0));
        assert_eq!(g.get(0, 0), Some(2.0));
    }

    #[test]
    fn malformed_rings_rejected() {
        let open = vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        assert!(SmokePolygon::new(open, vec![], SmokeDensity::Light).is_err());
        let short = vec![(0.0, 0.0), (1.0, 0.0), (0.0, 0.0)];
        assert!(SmokePolygon::new(short, vec![], SmokeDensity::Light).is_err());
        let bad = SmokePolygon {
            exterior: vec![(0.0, 0.0), (1.0, 1.0)],
            holes: vec![],
            density: SmokeDensity::Heavy,
        };
        assert!(rasterize_smoke(&[bad], &template()).is_err());
    }

    #[test]
    fn geojson_round_trip_and_case_insensitive_density() {
        let polys = vec![
            SmokePolygon::rectangle(0.0, 0.0, 2.0, 2.0, SmokeDensity::Light),
            SmokePolygon::rectangle(1.0, 1.0, 5.0, 3.0, SmokeDensity::Heavy),
        ];
        let text = smoke_to_geojson(&polys);
        assert_eq!(
            parse_smoke_geojson(&text, Path::new("s.geojson")).unwrap(),
            polys
        );

        let multi = r#"{"type":"FeatureCollection","features":[{"type":"Feature",
            "properties":{"density":"MEDIUM"},
            "geometry":{"type":"MultiPolygon","coordinates":[
              [[[0,0],[1,0],[1,1],[0,1],[0,0]]],
              [[[5,5],[6,5],[6,6],[5,6],[5,5]]]]}}]}"#;
        let parsed = parse_smoke_geojson(multi, Path::new("m.geojson")).unwrap();
        assert_eq!(parsed.len(), 2);
        assert!(parsed.iter().all(|p| p.density == SmokeDensity::Medium));

        let unknown = multi.replace("MEDIUM", "thick");
        assert!(parse_smoke_geojson(&unknown, Path::new("u.geojson")).is_err());
    }

    proptest! {
        #[test]
        fn adding_polygons_never_decreases(rects in prop::collection::vec(
            (0.0f64..10.0, 0.0f64..10.0, 0.5f64..6.0, 0.5f64..6.0, 0u8..3), 1..6)) {
            let polys: Vec<_> = rects.iter().map(|&(x, y, w, h, d)| {
                let density = [SmokeDensity::Light, SmokeDensity::Medium, SmokeDensity::Heavy][d as usize];
                SmokePolygon::rectangle(x, y, x + w, y + h, density)
            }).collect();
            let geo = template();
            let mut prev = rasterize_smoke(&[], &geo).unwrap();
            for k in 1..=polys.len() {
                let next = rasterize_smoke(&polys[..k], &geo).unwrap();
                for i in 0..geo.len() {
                    let (a, b) = (prev.get_index(i).unwrap(), next.get_index(i).unwrap());
                    prop_assert!(b >= a);
                    prop_assert!([0.0, 1.0, 2.0, 3.0].contains(&b));
                }
                prev = next;
            }
        }
    }
}
