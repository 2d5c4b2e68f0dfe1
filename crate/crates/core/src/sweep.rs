//! Parameter sweeps over scenario config keys.

use rayon::prelude::*;
use serde::Serialize;

use crate::catalog::ParameterCatalog;
use crate::config::ConfigTable;
use crate::error::{Error, Result};
use crate::scenario::{predict, EnergyReport};

/// One varied key and the values it takes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<String>,
}

impl SweepAxis {
    /// Parses `key=v1,v2,...`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (key, vals) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("sweep axis `{spec}` must look like key=v1,v2")))?;
        let key = key.trim();
        let values: Vec<String> = vals
            .split(',')
            .map(|v| v.trim().to_owned())
            .filter(|v| !v.is_empty())
            .collect();
        if key.is_empty() || values.is_empty() {
            return Err(Error::Config(format!("sweep axis `{spec}` needs a key and at least one value")));
        }
        Ok(Self {
            key: key.to_owned(),
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub point: Vec<(String, String)>,
    pub report: Option<EnergyReport>,
    pub error: Option<String>,
}

/// Evaluates the cartesian product of `axes` over `base` (first axis
/// varies slowest). Rows come back in grid order. Bad keys or values fail
/// the whole sweep up front; model errors are reported per row.
pub fn run_sweep(base: &ConfigTable, axes: &[SweepAxis], catalog: &ParameterCatalog) -> Result<Vec<SweepRow>> {
    let mut points: Vec<Vec<(String, String)>> = vec![vec![]];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((axis.key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    let configs = points
        .iter()
        .map(|p| {
            let mut t = base.clone();
            for (k, v) in p {
                t.set(k, v)?;
            }
            t.to_config()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(points
        .into_par_iter()
        .zip(configs.into_par_iter())
        .map(|(point, cfg)| match cfg.resolve(catalog).and_then(|s| predict(&s)) {
            Ok(r) => SweepRow {
                point,
                report: Some(r),
                error: None,
            },
            Err(e) => SweepRow {
                point,
                report: None,
                error: Some(e.to_string()),
            },
        })
        .collect())
}
