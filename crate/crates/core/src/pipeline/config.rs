use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ascii::DEFAULT_NODATA;
use crate::error::{Error, Result};
use crate::features::DateStamp;
use crate::forest::SearchSpace;
use crate::grid::FilterConfig;
use crate::synth::SceneSpec;

/// Everything a run reads. Documented key by key in `docs/config.md`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input_root: PathBuf,
    pub output_root: PathBuf,
    /// Inclusive `[start, end]`.
    pub date_range: (DateStamp, DateStamp),
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub covariate_tags: Vec<String>,
    /// Relative paths resolve against `input_root`.
    #[serde(default = "default_station_file")]
    pub station_file: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_search_iters")]
    pub search_iters: usize,
    #[serde(default = "default_cv_k")]
    pub cv_k: usize,
    /// Worker threads; 0 picks the number of cores. Never changes results.
    #[serde(default)]
    pub threads: usize,
    /// Multiply AOD inputs by 1000 on ingest (for physical-unit sources).
    #[serde(default)]
    pub scale_aod: bool,
    #[serde(default)]
    pub search_space: SearchSpace,
    #[serde(default = "default_nodata")]
    pub nodata: f64,
    /// Scene parameters for the `synth` subcommand. The scene date and day
    /// count come from `date_range`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SceneSpec>,
}

fn default_station_file() -> PathBuf {
    PathBuf::from("stations.csv")
}

fn default_search_iters() -> usize {
    10
}

fn default_cv_k() -> usize {
    5
}

fn default_nodata() -> f64 {
    DEFAULT_NODATA
}

impl RunConfig {
    /// A config with defaults for everything but the paths and dates.
    pub fn new(
        input_root: impl Into<PathBuf>,
        output_root: impl Into<PathBuf>,
        start: DateStamp,
        end: DateStamp,
    ) -> Self {
        RunConfig {
            input_root: input_root.into(),
            output_root: output_root.into(),
            date_range: (start, end),
            filter: FilterConfig::default(),
            covariate_tags: Vec::new(),
            station_file: default_station_file(),
            seed: 0,
            search_iters: default_search_iters(),
            cv_k: default_cv_k(),
            threads: 0,
            scale_aod: false,
            search_space: SearchSpace::default(),
            nodata: DEFAULT_NODATA,
            synth: None,
        }
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.date_range.0 > self.date_range.1 {
            return bad(format!(
                "date_range start {} is after end {}",
                self.date_range.0, self.date_range.1
            ));
        }
        if self.cv_k < 2 {
            return bad(format!("cv_k must be >= 2, got {}", self.cv_k));
        }
        if self.search_iters == 0 {
            return bad("search_iters must be >= 1".into());
        }
        if !self.nodata.is_finite() {
            return bad("nodata must be finite".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for tag in &self.covariate_tags {
            if !seen.insert(tag) {
                return bad(format!("covariate tag `{tag}` listed twice"));
            }
        }
        self.filter
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.search_space
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if let Some(spec) = &self.synth {
            spec.validate()
                .map_err(|e| Error::Config(format!("synth: {e}")))?;
        }
        Ok(())
    }

    pub fn days(&self) -> Vec<DateStamp> {
        DateStamp::range_inclusive(self.date_range.0, self.date_range.1).collect()
    }

    pub fn station_path(&self) -> PathBuf {
        if self.station_file.is_absolute() {
            self.station_file.clone()
        } else {
            self.input_root.join(&self.station_file)
        }
    }

    /// The config as recorded in the run manifest: `threads` is left out
    /// because it never affects outputs.
    pub fn echo(&self) -> Result<serde_json::Value> {
        let mut v = serde_json::to_value(self).map_err(|e| Error::Internal(e.to_string()))?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("threads");
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_json(
            r#"{"input_root":"in","output_root":"out","date_range":["2021-07-01","2021-07-03"]}"#,
            Path::new("c.json"),
        )
        .unwrap();
        assert_eq!(cfg.filter.window, 11);
        assert_eq!(cfg.cv_k, 5);
        assert_eq!(cfg.days().len(), 3);
        assert_eq!(cfg.station_path(), Path::new("in/stations.csv"));
    }

    #[test]
    fn rejects_bad_configs() {
        let base = r#""input_root":"in","output_root":"out""#;
        for extra in [
            r#""date_range":["2021-07-03","2021-07-01"]"#,
            r#""date_range":["2021-07-01","2021-07-01"],"cv_k":1"#,
            r#""date_range":["2021-07-01","2021-07-01"],"filter":{"window":4}"#,
            r#""date_range":["2021-07-01","2021-07-01"],"bogus":1"#,
            r#""date_range":["2021-07-01","2021-07-01"],"covariate_tags":["a","a"]"#,
        ] {
            let text = format!("{{{base},{extra}}}");
            let err = RunConfig::from_json(&text, Path::new("c.json")).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        }
    }

    #[test]
    fn echo_omits_threads() {
        let d = DateStamp::parse("2021-07-01").unwrap();
        let mut a = RunConfig::new("in", "out", d, d);
        let mut b = a.clone();
        a.threads = 1;
        b.threads = 8;
        assert_eq!(a.echo().unwrap(), b.echo().unwrap());
        assert!(a.echo().unwrap().get("threads").is_none());
    }
}
