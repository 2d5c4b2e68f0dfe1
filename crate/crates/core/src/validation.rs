//! Predicted-vs-measured validation.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::ParameterCatalog;
use crate::config::{ConfigTable, ScenarioConfig};
use crate::error::{Error, Result};
use crate::presets;
use crate::scenario::predict;

pub const DEFAULT_THRESHOLD_PCT: f64 = 97.0;

/// `100 × (1 − |predicted − measured| / measured)`.
pub fn accuracy_percent(predicted_mwh: f64, measured_mwh: f64) -> Result<f64> {
    if measured_mwh == 0.0 {
        return Err(Error::ZeroMeasured);
    }
    if !(measured_mwh.is_finite() && measured_mwh > 0.0) {
        return Err(Error::InvalidQuantity {
            quantity: "measured energy",
            value: measured_mwh,
        });
    }
    if !predicted_mwh.is_finite() {
        return Err(Error::InvalidQuantity {
            quantity: "predicted energy",
            value: predicted_mwh,
        });
    }
    Ok(100.0 * (1.0 - (predicted_mwh - measured_mwh).abs() / measured_mwh))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationCase {
    pub name: String,
    pub config: ScenarioConfig,
}

impl ValidationCase {
    pub fn from_config(name: impl Into<String>, config: ScenarioConfig) -> Result<Self> {
        match config.measured_energy_mwh {
            Some(m) if m.is_finite() && m > 0.0 => {}
            Some(m) => return Err(Error::Config(format!("measured_energy_mwh must be positive, got {m}"))),
            None => return Err(Error::Config("validation case needs `measured_energy_mwh`".into())),
        }
        Ok(Self {
            name: name.into(),
            config,
        })
    }

    pub fn measured_mwh(&self) -> f64 {
        self.config.measured_energy_mwh.unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub mode: Option<String>,
    pub measured_mwh: f64,
    pub predicted_mwh: Option<f64>,
    pub accuracy_pct: Option<f64>,
    pub reference_prediction_mwh: Option<f64>,
    /// Relative difference of our prediction from the reference prediction, %.
    pub reference_delta_pct: Option<f64>,
    pub reference_accuracy_pct: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub n_cases: usize,
    pub n_errors: usize,
    pub min_accuracy_pct: Option<f64>,
    pub mean_accuracy_pct: Option<f64>,
    pub threshold_pct: f64,
    pub pass: bool,
    /// Set when the suite had no cases (pass is vacuous).
    pub empty_suite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub cases: Vec<CaseResult>,
    pub aggregate: Aggregate,
}

fn run_case(case: &ValidationCase, catalog: &ParameterCatalog) -> CaseResult {
    let mut r = CaseResult {
        name: case.name.clone(),
        mode: case.config.mode.map(|m| m.to_string()),
        measured_mwh: case.measured_mwh(),
        predicted_mwh: None,
        accuracy_pct: None,
        reference_prediction_mwh: case.config.reference_prediction_mwh,
        reference_delta_pct: None,
        reference_accuracy_pct: case.config.reference_accuracy_pct,
        error: None,
    };
    let outcome = case
        .config
        .resolve(catalog)
        .and_then(|s| predict(&s))
        .and_then(|rep| {
            let p = rep.p_total_mwh();
            Ok((p, accuracy_percent(p, r.measured_mwh)?))
        });
    match outcome {
        Ok((p, acc)) => {
            r.predicted_mwh = Some(p);
            r.accuracy_pct = Some(acc);
            r.reference_delta_pct = r.reference_prediction_mwh.map(|x| 100.0 * (p - x) / x);
        }
        Err(e) => r.error = Some(e.to_string()),
    }
    r
}

/// Runs every case (in parallel); results keep input order. Per-case
/// failures are recorded and count as a suite failure.
pub fn run_validation_suite(cases: &[ValidationCase], catalog: &ParameterCatalog, threshold_pct: f64) -> ValidationReport {
    let results: Vec<CaseResult> = cases.par_iter().map(|c| run_case(c, catalog)).collect();
    let accs: Vec<f64> = results.iter().filter_map(|r| r.accuracy_pct).collect();
    let n_errors = results.iter().filter(|r| r.error.is_some()).count();
    let min = accs.iter().copied().reduce(f64::min);
    let mean = (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64);
    let pass = n_errors == 0 && min.is_none_or(|m| m >= threshold_pct);
    ValidationReport {
        aggregate: Aggregate {
            n_cases: results.len(),
            n_errors,
            min_accuracy_pct: min,
            mean_accuracy_pct: mean,
            threshold_pct,
            pass,
            empty_suite: results.is_empty(),
        },
        cases: results,
    }
}

/// The bundled eleven-case suite.
pub fn bundled_suite() -> Result<Vec<ValidationCase>> {
    presets::VALIDATION_CASES
        .iter()
        .map(|name| {
            let src = presets::preset_source(name).expect("bundled case");
            ValidationCase::from_config(*name, ScenarioConfig::from_toml_str(src)?)
        })
        .collect()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteIndex {
    schema_version: Option<u32>,
    threshold_pct: Option<f64>,
    #[serde(default)]
    cases: Vec<String>,
}

/// A suite loaded from disk, with its optional default threshold.
#[derive(Debug, Clone)]
pub struct SuiteFile {
    pub cases: Vec<ValidationCase>,
    pub threshold_pct: Option<f64>,
}

/// Loads a suite from an index file (`cases = [...]` relative paths), a
/// single case file, or a directory of case files.
pub fn load_suite(path: &Path) -> Result<SuiteFile> {
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        files.sort();
        let index = files.iter().find(|p| p.file_name().is_some_and(|n| n == "suite.toml"));
        if let Some(index) = index {
            return load_suite(index);
        }
        let cases = files.iter().map(|p| load_case(p)).collect::<Result<_>>()?;
        return Ok(SuiteFile {
            cases,
            threshold_pct: None,
        });
    }
    let src = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let table: toml::Table = src
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
    if !table.contains_key("cases") && table.contains_key("mode") {
        return Ok(SuiteFile {
            cases: vec![load_case(path)?],
            threshold_pct: None,
        });
    }
    let index: SuiteIndex = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(v) = index.schema_version {
        if v != 1 {
            return Err(Error::Config(format!("suite schema_version {v} not supported")));
        }
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let cases = index
        .cases
        .iter()
        .map(|c| match presets::preset_source(c).filter(|_| !dir.join(c).exists()) {
            Some(src) => ValidationCase::from_config(c.clone(), ScenarioConfig::from_toml_str(src)?),
            None => load_case(&dir.join(c)),
        })
        .collect::<Result<_>>()?;
    Ok(SuiteFile {
        cases,
        threshold_pct: index.threshold_pct,
    })
}

fn load_case(path: &Path) -> Result<ValidationCase> {
    let cfg = ConfigTable::from_file(path)?.to_config()?;
    let name = cfg.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    ValidationCase::from_config(name, cfg)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
