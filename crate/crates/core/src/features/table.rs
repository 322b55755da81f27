use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{Band, DateStamp, FeatureSchema, StationSite};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub site_id: String,
    pub date: DateStamp,
    pub x: f64,
    pub y: f64,
    /// Blue-band AOD in scaled (x1000) units.
    pub target_047: f64,
    /// Green-band AOD in scaled (x1000) units.
    pub target_055: f64,
    pub features: Vec<f64>,
    pub feature_validity: Vec<bool>,
}

impl SampleRow {
    pub fn target(&self, band: Band) -> f64 {
        match band {
            Band::Aod047 => self.target_047,
            Band::Aod055 => self.target_055,
        }
    }
}

/// Training and evaluation rows sharing one feature schema.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    schema: FeatureSchema,
    rows: Vec<SampleRow>,
}

const FIXED_COLUMNS: [&str; 6] = ["site_id", "date", "x", "y", "aod047", "aod055"];

impl SampleTable {
    pub fn new(schema: FeatureSchema) -> Self {
        SampleTable {
            schema,
            rows: Vec::new(),
        }
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[SampleRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: SampleRow) -> Result<()> {
        if row.features.len() != self.schema.len()
            || row.feature_validity.len() != self.schema.len()
        {
            return Err(Error::DimensionMismatch {
                expected: self.schema.len(),
                actual: row.features.len(),
            });
        }
        if row.feature_validity.iter().any(|v| !v) {
            return Err(Error::InvalidArgument(format!(
                "row for site `{}` on {} has missing features",
                row.site_id, row.date
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = SampleRow>) -> Result<()> {
        rows.into_iter().try_for_each(|r| self.push(r))
    }

    pub fn feature_matrix(&self) -> Matrix {
        let p = self.schema.len();
        let data = self
            .rows
            .iter()
            .flat_map(|r| r.features.iter().copied())
            .collect();
        Matrix::new(self.rows.len(), p, data).expect("row lengths checked on insert")
    }

    pub fn targets(&self, band: Band) -> Vec<f64> {
        self.rows.iter().map(|r| r.target(band)).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = FIXED_COLUMNS
            .iter()
            .copied()
            .chain(self.schema.names().iter().map(String::as_str));
        w.write_record(header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![
                r.site_id.clone(),
                r.date.to_string(),
                format!("{:?}", r.x),
                format!("{:?}", r.y),
                format!("{:?}", r.target_047),
                format!("{:?}", r.target_055),
            ];
            rec.extend(r.features.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn parse_csv(text: &str, origin: &Path) -> Result<Self> {
        let err = |m: String| Error::parse(origin, m);
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < FIXED_COLUMNS.len() || cols[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
            return Err(err(format!(
                "header must start with {}",
                FIXED_COLUMNS.join(",")
            )));
        }
        let schema = FeatureSchema::new(
            cols[FIXED_COLUMNS.len()..]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
        .map_err(|e| err(e.to_string()))?;
        let mut table = SampleTable::new(schema);
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| err(format!("record {i}: {e}")))?;
            let num = |k: usize| -> Result<f64> {
                let s = rec.get(k).unwrap_or("");
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        err(format!("record {i}, column `{}`: bad value `{s}`", cols[k]))
                    })
            };
            let features = (FIXED_COLUMNS.len()..cols.len())
                .map(num)
                .collect::<Result<Vec<_>>>()?;
            let date = DateStamp::parse(rec.get(1).unwrap_or(""))
                .map_err(|e| err(format!("record {i}: {e}")))?;
            table.rows.push(SampleRow {
                site_id: rec.get(0).unwrap_or("").to_string(),
                date,
                x: num(2)?,
                y: num(3)?,
                target_047: num(4)?,
                target_055: num(5)?,
                feature_validity: vec![true; features.len()],
                features,
            });
        }
        Ok(table)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SampleTable::parse_csv(&text, path)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Internal(format!("csv encoding: {e}"))
}

pub fn read_stations_csv(path: &Path) -> Result<Vec<StationSite>> {
    let err = |m: String| Error::parse(path, m);
    let mut rdr = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<StationSite>().enumerate() {
        let site = rec.map_err(|e| err(format!("record {i}: {e}")))?;
        if !seen.insert(site.site_id.clone()) {
            return Err(err(format!("duplicate site_id `{}`", site.site_id)));
        }
        out.push(site);
    }
    Ok(out)
}

pub fn write_stations_csv(stations: &[StationSite], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["site_id", "x", "y"]).map_err(csv_err)?;
    for s in stations {
        w.write_record([
            s.site_id.clone(),
            format!("{:?}", s.x),
            format!("{:?}", s.y),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
