//! Run configuration: a TOML file with `section.key = value` entries plus
//! command-line overrides of the same form.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metrics::ScoreMode;
use crate::sampler::FitConfig;
use crate::simulate::SimConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub longitudinal: Option<PathBuf>,
    pub events: Option<PathBuf>,
    /// Held-out longitudinal records whose ticks are forecast.
    pub heldout: Option<PathBuf>,
    pub heldout_events: Option<PathBuf>,
    /// Truth CSV from `simulate`.
    pub truth: Option<PathBuf>,
    /// Output directory of a previous `fit`.
    pub fit_dir: Option<PathBuf>,
    /// Forecast CSV to score.
    pub forecast: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    /// Ticks past each subject's last record, used without held-out data.
    pub horizon: usize,
    /// Fraction of subjects whose second half is held out by `simulate`.
    pub mask_fraction: f64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            horizon: 5,
            mask_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub score_mode: ScoreMode,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            score_mode: ScoreMode::Relative,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; copied into `simulate.seed` and `fit.mcmc.seed`.
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub simulate: SimConfig,
    pub fit: FitConfig,
    pub forecast: ForecastConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            out: None,
            data: DataConfig::default(),
            simulate: SimConfig::default(),
            fit: FitConfig::default(),
            forecast: ForecastConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back to
/// a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Recursively lays `top` over `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            set_path(&mut table, k, parse_value(v))?;
        }
        let preset = match table
            .get_mut("simulate")
            .and_then(toml::Value::as_table_mut)
        {
            Some(sim) => match sim.remove("preset") {
                Some(toml::Value::String(p)) => Some(p),
                Some(other) => {
                    return Err(Error::Config(format!(
                        "simulate.preset must be a string, got {other}"
                    )))
                }
                None => None,
            },
            None => None,
        };
        if let Some(p) = preset {
            let base = toml::Table::try_from(SimConfig::preset(&p)?)
                .map_err(|e| Error::Config(e.to_string()))?;
            let user = match table.remove("simulate") {
                Some(toml::Value::Table(t)) => t,
                _ => toml::Table::new(),
            };
            let mut sim = base;
            merge(&mut sim, user);
            table.insert("simulate".into(), toml::Value::Table(sim));
        }
        let mut cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (or an empty file) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    fn resolve(&mut self) {
        self.simulate.seed = self.seed;
        self.fit.mcmc.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.simulate.validate()?;
        self.fit.validate()?;
        let f = self.forecast.mask_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!(
                "forecast.mask_fraction must be in (0, 1], got {f}"
            )));
        }
        Ok(())
    }

    /// Fully resolved configuration, as echoed next to every output.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}
