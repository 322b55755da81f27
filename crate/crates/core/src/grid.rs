//! Single-band rasters with an explicit validity mask.
//!
//! A [`Grid`] never uses a sentinel for missing data: every cell carries a
//! value and a validity flag, and invalid cells read back as `None`. Sentinels
//! only exist at the file boundary (see [`crate::ascii`]).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Georeferencing of a north-up raster with square pixels.
///
/// `x_origin` is the west edge and `y_origin` the north edge. Row 0 is the
/// northernmost row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub n_cols: usize,
    pub n_rows: usize,
    pub x_origin: f64,
    pub y_origin: f64,
    pub cell_size: f64,
}

impl GridGeometry {
    pub fn new(
        n_cols: usize,
        n_rows: usize,
        x_origin: f64,
        y_origin: f64,
        cell_size: f64,
    ) -> Result<Self> {
        if n_cols == 0 || n_rows == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid must have at least one row and column, got {n_cols}x{n_rows}"
            )));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cell size must be positive and finite, got {cell_size}"
            )));
        }
        if !x_origin.is_finite() || !y_origin.is_finite() {
            return Err(Error::InvalidArgument("grid origin must be finite".into()));
        }
        Ok(GridGeometry {
            n_cols,
            n_rows,
            x_origin,
            y_origin,
            cell_size,
        })
    }

    pub fn len(&self) -> usize {
        self.n_cols * self.n_rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.n_cols + col
    }

    /// East edge.
    pub fn x_max(&self) -> f64 {
        self.x_origin + self.n_cols as f64 * self.cell_size
    }

    /// South edge.
    pub fn y_min(&self) -> f64 {
        self.y_origin - self.n_rows as f64 * self.cell_size
    }

    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.x_origin + (col as f64 + 0.5) * self.cell_size,
            self.y_origin - (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Pixel containing a map coordinate.
    ///
    /// Cells are half-open: `x` in `[left, right)` and `y` in `(bottom, top]`,
    /// so a point on a shared edge belongs to the pixel to the right or below.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fc = ((x - self.x_origin) / self.cell_size).floor();
        let fr = ((self.y_origin - y) / self.cell_size).floor();
        if !(fc >= 0.0 && fr >= 0.0) {
            return None;
        }
        let (col, row) = (fc as usize, fr as usize);
        (col < self.n_cols && row < self.n_rows).then_some((col, row))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    geometry: GridGeometry,
    values: Vec<f64>,
    validity: Vec<bool>,
    band_tag: String,
}

impl Grid {
    /// Builds a grid from row-major values and validity flags.
    ///
    /// Values at invalid cells are discarded. Valid values must be finite.
    pub fn new(
        geometry: GridGeometry,
        mut values: Vec<f64>,
        validity: Vec<bool>,
        band_tag: impl Into<String>,
    ) -> Result<Self> {
        let n = geometry.len();
        if values.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: values.len(),
            });
        }
        if validity.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: validity.len(),
            });
        }
        for (v, &ok) in values.iter_mut().zip(&validity) {
            if !ok {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "valid cells must hold finite values, got {v}"
                )));
            }
        }
        Ok(Grid {
            geometry,
            values,
            validity,
            band_tag: band_tag.into(),
        })
    }

    pub fn from_options(
        geometry: GridGeometry,
        cells: impl IntoIterator<Item = Option<f64>>,
        band_tag: impl Into<String>,
    ) -> Result<Self> {
        let (values, validity) = cells
            .into_iter()
            .map(|c| (c.unwrap_or(0.0), c.is_some()))
            .unzip();
        Grid::new(geometry, values, validity, band_tag)
    }

    pub fn filled(geometry: GridGeometry, value: f64, band_tag: impl Into<String>) -> Result<Self> {
        let n = geometry.len();
        Grid::new(geometry, vec![value; n], vec![true; n], band_tag)
    }

    pub fn all_invalid(geometry: GridGeometry, band_tag: impl Into<String>) -> Self {
        let n = geometry.len();
        Grid {
            geometry,
            values: vec![0.0; n],
            validity: vec![false; n],
            band_tag: band_tag.into(),
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn n_cols(&self) -> usize {
        self.geometry.n_cols
    }

    pub fn n_rows(&self) -> usize {
        self.geometry.n_rows
    }

    pub fn len(&self) -> usize {
        self.geometry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.geometry.is_empty()
    }

    pub fn band_tag(&self) -> &str {
        &self.band_tag
    }

    pub fn with_tag(mut self, band_tag: impl Into<String>) -> Self {
        self.band_tag = band_tag.into();
        self
    }

    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        if col >= self.geometry.n_cols || row >= self.geometry.n_rows {
            return None;
        }
        self.get_index(self.geometry.index(col, row))
    }

    pub fn get_index(&self, index: usize) -> Option<f64> {
        self.validity
            .get(index)
            .copied()
            .unwrap_or(false)
            .then(|| self.values[index])
    }

    pub fn is_valid_index(&self, index: usize) -> bool {
        self.validity.get(index).copied().unwrap_or(false)
    }

    /// Cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        self.values
            .iter()
            .zip(&self.validity)
            .map(|(&v, &ok)| ok.then_some(v))
    }

    pub fn validity(&self) -> &[bool] {
        &self.validity
    }

    pub fn valid_count(&self) -> usize {
        self.validity.iter().filter(|&&ok| ok).count()
    }

    /// Smallest and largest valid value.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        self.cells().flatten().fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    /// Applies `f` to every valid value, keeping validity.
    pub fn map_valid(&self, f: impl Fn(f64) -> f64) -> Result<Grid> {
        Grid::from_options(
            self.geometry,
            self.cells().map(|c| c.map(&f)),
            self.band_tag.clone(),
        )
    }

    pub fn same_geometry(&self, other: &Grid) -> bool {
        self.geometry == other.geometry
    }

    pub fn ensure_same_geometry(&self, other: &Grid) -> Result<()> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "`{}` is {:?} but `{}` is {:?}",
                self.band_tag, self.geometry, other.band_tag, other.geometry
            )))
        }
    }
}

/// Neighborhood definition for [`mean_filter`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Odd side length of the square window.
    pub window: usize,
    /// Whether the pixel itself is part of its neighborhood.
    pub include_center: bool,
    /// Minimum number of valid neighbors needed to emit a value.
    pub min_valid: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            window: 11,
            include_center: false,
            min_valid: 1,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "filter window must be an odd integer >= 3, got {}",
                self.window
            )));
        }
        if self.min_valid < 1 || self.min_valid > self.window * self.window {
            return Err(Error::InvalidArgument(format!(
                "min_valid must lie in 1..={}, got {}",
                self.window * self.window,
                self.min_valid
            )));
        }
        Ok(())
    }
}

/// Nodata-aware window mean.
///
/// Each output pixel is the mean of the valid pixels in the window centred on
/// it, or invalid when fewer than `min_valid` such pixels exist. The window is
/// truncated at the image border. Sums run row-major over the window, so the
/// result is bit-identical regardless of how rows are scheduled across threads.
pub fn mean_filter(grid: &Grid, cfg: &FilterConfig) -> Result<Grid> {
    cfg.validate()?;
    let geo = grid.geometry;
    if !cfg.include_center && geo.len() == 1 {
        return Err(Error::InvalidArgument(
            "a 1x1 grid without its center has an empty neighborhood everywhere".into(),
        ));
    }
    let radius = cfg.window / 2;
    let (n_cols, n_rows) = (geo.n_cols, geo.n_rows);

    let mut values = vec![0.0; geo.len()];
    let mut validity = vec![false; geo.len()];
    values
        .par_chunks_mut(n_cols)
        .zip(validity.par_chunks_mut(n_cols))
        .enumerate()
        .for_each(|(row, (out_values, out_valid))| {
            let r0 = row.saturating_sub(radius);
            let r1 = (row + radius).min(n_rows - 1);
            for col in 0..n_cols {
                let c0 = col.saturating_sub(radius);
                let c1 = (col + radius).min(n_cols - 1);
                let mut sum = 0.0;
                let mut n = 0usize;
                for rr in r0..=r1 {
                    let base = rr * n_cols;
                    for cc in c0..=c1 {
                        if !cfg.include_center && rr == row && cc == col {
                            continue;
                        }
                        if grid.validity[base + cc] {
                            sum += grid.values[base + cc];
                            n += 1;
                        }
                    }
                }
                if n >= cfg.min_valid {
                    out_values[col] = sum / n as f64;
                    out_valid[col] = true;
                }
            }
        });

    Ok(Grid {
        geometry: geo,
        values,
        validity,
        band_tag: grid.band_tag.clone(),
    })
}

/// Fraction of valid pixels.
pub fn coverage(grid: &Grid) -> f64 {
    grid.valid_count() as f64 / grid.len() as f64
}

/// Nearest-neighbor resampling of `src` onto the pixel lattice of `template`.
///
/// Each output pixel copies the source pixel containing its center; centers
/// outside the source extent produce invalid pixels.
pub fn resample_nearest(src: &Grid, template: &Grid) -> Grid {
    let geo = template.geometry;
    let mut values = vec![0.0; geo.len()];
    let mut validity = vec![false; geo.len()];
    for row in 0..geo.n_rows {
        for col in 0..geo.n_cols {
            let (x, y) = geo.pixel_center(col, row);
            if let Some((sc, sr)) = src.geometry.locate(x, y) {
                let si = src.geometry.index(sc, sr);
                let i = geo.index(col, row);
                values[i] = src.values[si];
                validity[i] = src.validity[si];
            }
        }
    }
    Grid {
        geometry: geo,
        values,
        validity,
        band_tag: src.band_tag.clone(),
    }
}

/// Value of the pixel containing each point, if that pixel exists and is valid.
pub fn sample_at(grid: &Grid, points: &[(f64, f64)]) -> Vec<Option<f64>> {
    points
        .iter()
        .map(|&(x, y)| {
            grid.geometry
                .locate(x, y)
                .and_then(|(col, row)| grid.get(col, row))
        })
        .collect()
}

/// Per-pixel fallback across layers: the first layer valid at a pixel wins.
pub fn combine_first_valid(layers: &[&Grid]) -> Result<Grid> {
    combine_with_provenance(layers).map(|(grid, _)| grid)
}

/// Like [`combine_first_valid`], also returning which layer supplied each
/// pixel (`None` where every layer is invalid).
pub fn combine_with_provenance(layers: &[&Grid]) -> Result<(Grid, Vec<Option<usize>>)> {
    let first = layers
        .first()
        .ok_or_else(|| Error::Empty("combine_first_valid needs at least one layer".into()))?;
    for layer in &layers[1..] {
        first.ensure_same_geometry(layer)?;
    }
    let n = first.len();
    let mut values = vec![0.0; n];
    let mut validity = vec![false; n];
    let mut source = vec![None; n];
    for i in 0..n {
        if let Some((k, v)) = layers
            .iter()
            .enumerate()
            .find_map(|(k, g)| g.get_index(i).map(|v| (k, v)))
        {
            values[i] = v;
            validity[i] = true;
            source[i] = Some(k);
        }
    }
    let grid = Grid {
        geometry: first.geometry,
        values,
        validity,
        band_tag: first.band_tag.clone(),
    };
    Ok((grid, source))
}
