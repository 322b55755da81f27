//! ESRI ASCII Grid (`.asc`) reading and writing.
//!
//! ```text
//! ncols         4
//! nrows         2
//! xllcorner     0.0
//! yllcorner     0.0
//! cellsize      1.0
//! NODATA_value  -9999
//! 1 2 -9999 4
//! 5 6 7 8
//! ```
//!
//! Header keys are case-insensitive. Rows are written top row first. Values
//! are written in shortest round-trip form, so write-then-read is lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridGeometry};

pub const DEFAULT_NODATA: f64 = -9999.0;

pub fn parse_ascii_grid(text: &str, band_tag: &str, origin: &Path) -> Result<Grid> {
    let err = |m: String| Error::parse(origin, m);

    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut centered = false;
    let mut cellsize = None;
    let mut nodata = None;

    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
    while let Some(line) = lines.peek() {
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default().to_ascii_lowercase();
        if key.parse::<f64>().is_ok() {
            break;
        }
        let value = parts
            .next()
            .ok_or_else(|| err(format!("header `{key}` has no value")))?;
        let num = || {
            value
                .parse::<f64>()
                .map_err(|_| err(format!("header `{key}`: bad number `{value}`")))
        };
        let count = || {
            value
                .parse::<usize>()
                .map_err(|_| err(format!("header `{key}`: bad count `{value}`")))
        };
        match key.as_str() {
            "ncols" => ncols = Some(count()?),
            "nrows" => nrows = Some(count()?),
            "xllcorner" => xll = Some(num()?),
            "yllcorner" => yll = Some(num()?),
            "xllcenter" => {
                xll = Some(num()?);
                centered = true;
            }
            "yllcenter" => {
                yll = Some(num()?);
                centered = true;
            }
            "cellsize" => cellsize = Some(num()?),
            "nodata_value" => nodata = Some(num()?),
            other => return Err(err(format!("unknown header key `{other}`"))),
        }
        lines.next();
    }

    let missing = |k: &str| err(format!("missing header `{k}`"));
    let ncols = ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = nrows.ok_or_else(|| missing("nrows"))?;
    let mut xll = xll.ok_or_else(|| missing("xllcorner"))?;
    let mut yll = yll.ok_or_else(|| missing("yllcorner"))?;
    let cellsize = cellsize.ok_or_else(|| missing("cellsize"))?;
    if centered {
        xll -= cellsize / 2.0;
        yll -= cellsize / 2.0;
    }
    let geometry = GridGeometry::new(ncols, nrows, xll, yll + nrows as f64 * cellsize, cellsize)
        .map_err(|e| err(e.to_string()))?;

    let mut cells = Vec::with_capacity(geometry.len());
    for (row, line) in lines.enumerate() {
        let before = cells.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| err(format!("row {row}: bad value `{tok}`")))?;
            if Some(v) == nodata {
                cells.push(None);
            } else if v.is_finite() {
                cells.push(Some(v));
            } else {
                return Err(err(format!("row {row}: non-finite value `{tok}`")));
            }
        }
        if cells.len() - before != ncols {
            return Err(err(format!(
                "row {row}: expected {ncols} values, found {}",
                cells.len() - before
            )));
        }
    }
    if cells.len() != geometry.len() {
        return Err(err(format!(
            "expected {nrows} data rows, found {}",
            cells.len() / ncols
        )));
    }
    Grid::from_options(geometry, cells, band_tag)
}

/// Band tag implied by a file name: the stem with any trailing
/// `_YYYY-MM-DD` removed.
pub fn tag_from_path(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match stem.rsplit_once('_') {
        Some((tag, date)) if crate::features::DateStamp::parse(date).is_ok() => tag.to_string(),
        _ => stem,
    }
}

pub fn read_ascii_grid(path: &Path) -> Result<Grid> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ascii_grid(&text, &tag_from_path(path), path)
}

pub fn format_ascii_grid(grid: &Grid, nodata: f64) -> Result<String> {
    let geo = grid.geometry();
    let mut out = String::with_capacity(grid.len() * 8 + 128);
    // Infallible: writing to a String.
    let _ = writeln!(out, "ncols {}", geo.n_cols);
    let _ = writeln!(out, "nrows {}", geo.n_rows);
    let _ = writeln!(out, "xllcorner {:?}", geo.x_origin);
    let _ = writeln!(out, "yllcorner {:?}", geo.y_min());
    let _ = writeln!(out, "cellsize {:?}", geo.cell_size);
    let _ = writeln!(out, "NODATA_value {nodata:?}");
    for row in 0..geo.n_rows {
        for col in 0..geo.n_cols {
            if col > 0 {
                out.push(' ');
            }
            match grid.get(col, row) {
                Some(v) if v == nodata => {
                    return Err(Error::InvalidArgument(format!(
                        "valid cell ({col},{row}) of `{}` equals the nodata value {nodata}",
                        grid.band_tag()
                    )))
                }
                Some(v) => {
                    let _ = write!(out, "{v:?}");
                }
                None => {
                    let _ = write!(out, "{nodata:?}");
                }
            }
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_ascii_grid(grid: &Grid, path: &Path, nodata: f64) -> Result<()> {
    let text = format_ascii_grid(grid, nodata)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = "NCOLS 4\nnrows 2\nxllcorner 10\nYLLCORNER 20\ncellsize 0.5\nNODATA_value -9999\n1 2 -9999 4\n5 6 7 8.25\n";

    #[test]
    fn parses_header_and_nodata() {
        let g = parse_ascii_grid(SAMPLE, "AOD047", Path::new("x.asc")).unwrap();
        assert_eq!(g.n_cols(), 4);
        assert_eq!(g.n_rows(), 2);
        assert_eq!(g.geometry().x_origin, 10.0);
        assert_eq!(g.geometry().y_origin, 21.0);
        assert_eq!(g.get(2, 0), None);
        assert_eq!(g.get(3, 1), Some(8.25));
        assert_eq!(g.band_tag(), "AOD047");
    }

    #[test]
    fn rejects_short_rows() {
        let text = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n3\n";
        assert!(parse_ascii_grid(text, "x", Path::new("bad.asc")).is_err());
        let text = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n";
        let e = parse_ascii_grid(text, "x", Path::new("bad.asc")).unwrap_err();
        assert!(e.to_string().contains("bad.asc"));
    }

    #[test]
    fn rejects_missing_header() {
        let text = "ncols 1\nnrows 1\nxllcorner 0\ncellsize 1\n1\n";
        assert!(parse_ascii_grid(text, "x", Path::new("h.asc")).is_err());
    }

    #[test]
    fn center_registration() {
        let text = "ncols 1\nnrows 1\nxllcenter 0.5\nyllcenter 0.5\ncellsize 1\n3\n";
        let g = parse_ascii_grid(text, "x", Path::new("c.asc")).unwrap();
        assert_eq!(g.geometry().x_origin, 0.0);
        assert_eq!(g.geometry().y_origin, 1.0);
    }

    #[test]
    fn tags_strip_dates() {
        assert_eq!(
            tag_from_path(Path::new("/a/AOD047_2014-01-01.asc")),
            "AOD047"
        );
        assert_eq!(tag_from_path(Path::new("/a/tmin.asc")), "tmin");
        assert_eq!(tag_from_path(Path::new("wind_dir.asc")), "wind_dir");
    }

    #[test]
    fn write_refuses_nodata_collision() {
        let geo = GridGeometry::new(1, 1, 0.0, 1.0, 1.0).unwrap();
        let g = Grid::filled(geo, -9999.0, "x").unwrap();
        assert!(format_ascii_grid(&g, DEFAULT_NODATA).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(
            (c, r, cells) in (1usize..6, 1usize..6).prop_flat_map(|(c, r)| {
                (Just(c), Just(r), prop::collection::vec(prop::option::of(-1e6f64..1e6), c * r))
            }),
            x0 in -180.0f64..180.0,
            y0 in -90.0f64..90.0,
        ) {
            let geo = GridGeometry::new(c, r, x0, y0, 0.01).unwrap();
            let g = Grid::from_options(geo, cells, "b").unwrap();
            let text = format_ascii_grid(&g, DEFAULT_NODATA).unwrap();
            let back = parse_ascii_grid(&text, "b", Path::new("rt.asc")).unwrap();
            prop_assert_eq!(back.cells().collect::<Vec<_>>(), g.cells().collect::<Vec<_>>());
            prop_assert_eq!(back.n_cols(), c);
            prop_assert!((back.geometry().y_origin - y0).abs() < 1e-9);
        }
    }
}
