//! Scenario configuration files.
//!
//! A scenario file is flat TOML with one key per model symbol (`t_eink_s`,
//! `i_eink_ma`, ...). Every key is optional; unset values come from the
//! catalog. `extends = "<preset>"` layers the file over a bundled preset
//! (or another file, when the value is a path).

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::catalog::{BleRadioKey, HardwareConfig, OperatingMode, ParameterCatalog};
use crate::error::{Error, Result};
use crate::model::{interval_average_current, IntervalSpec, PhaseLabel, PhaseSpec};
use crate::presets;
use crate::scenario::{BleTiming, EinkVariant, ReferenceValues, ScenarioProfile};
use crate::units::{CurrentMilliamp, DurationSeconds, Volts};

const MAX_EXTENDS_DEPTH: usize = 8;

/// Where the idle-phase currents of the connected modes come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdleCurrentSource {
    /// Connection-interval current times the catalog idle factor.
    #[default]
    Inflation,
    /// Per-cell measured idle currents from the cyclic tables.
    Measured,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: Option<String>,
    pub description: Option<String>,
    pub mode: Option<OperatingMode>,
    pub hardware: Option<HardwareConfig>,
    pub eink: Option<EinkVariant>,
    pub idle_current_source: Option<IdleCurrentSource>,

    pub operating_voltage_v: Option<f64>,
    pub t_s: Option<f64>,
    pub p_tx_dbm: Option<i32>,

    pub t_conn_int_ms: Option<f64>,
    pub t_fast_adv_int_ms: Option<f64>,
    pub t_slow_adv_int_ms: Option<f64>,
    pub t_fast_adv_s: Option<f64>,
    pub t_slow_adv_s: Option<f64>,
    pub t_ble_conn_s: Option<f64>,

    pub t_start_s: Option<f64>,
    pub t_idle_start_s: Option<f64>,
    pub t_sens_s: Option<f64>,
    pub t_idle_sens_s: Option<f64>,
    pub t_eink_s: Option<f64>,
    pub t_idle_eink_s: Option<f64>,
    pub t_nbvlc_s: Option<f64>,
    pub t_idle_nbvlc_s: Option<f64>,
    pub t_deep_sleep_s: Option<f64>,

    pub i_fast_adv_int_ma: Option<f64>,
    pub i_slow_adv_int_ma: Option<f64>,
    pub i_conn_int_ma: Option<f64>,
    pub i_start_ma: Option<f64>,
    pub i_idle_start_ma: Option<f64>,
    pub i_sens_ma: Option<f64>,
    pub i_idle_sens_ma: Option<f64>,
    pub i_eink_ma: Option<f64>,
    pub i_idle_eink_ma: Option<f64>,
    pub i_nbvlc_ma: Option<f64>,
    pub i_idle_nbvlc_ma: Option<f64>,
    pub i_deep_sleep_ma: Option<f64>,

    pub measured_energy_mwh: Option<f64>,
    pub reference_prediction_mwh: Option<f64>,
    pub reference_accuracy_pct: Option<f64>,
}

/// Keys that only make sense while BLE is active.
const CONNECTED_ONLY: &[&str] = &[
    "p_tx_dbm",
    "t_conn_int_ms",
    "t_fast_adv_int_ms",
    "t_slow_adv_int_ms",
    "t_fast_adv_s",
    "t_slow_adv_s",
    "t_ble_conn_s",
    "i_fast_adv_int_ma",
    "i_slow_adv_int_ma",
    "i_conn_int_ma",
    "idle_current_source",
];
const VLP_ONLY: &[&str] = &["t_deep_sleep_s", "i_deep_sleep_ma"];

/// Raw TOML table of a scenario file after `extends` has been flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigTable(toml::Table);

impl ConfigTable {
    /// Parses `src` and resolves its `extends` chain. Relative paths in
    /// `extends` are resolved against `base_dir`.
    pub fn parse(src: &str, base_dir: Option<&Path>) -> Result<Self> {
        Self::parse_depth(src, base_dir, 0)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&src, path.parent())
            .map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
                other => other,
            })
    }

    fn parse_depth(src: &str, base_dir: Option<&Path>, depth: usize) -> Result<Self> {
        if depth > MAX_EXTENDS_DEPTH {
            return Err(Error::Config("`extends` chain too deep (cycle?)".into()));
        }
        let mut table: toml::Table = src.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let Some(parent) = table.remove("extends") else {
            return Ok(Self(table));
        };
        let parent = parent
            .as_str()
            .ok_or_else(|| Error::Config("`extends` must be a string".into()))?
            .to_owned();
        let base = if let Some(src) = presets::preset_source(&parent) {
            Self::parse_depth(src, None, depth + 1)?
        } else {
            let path = resolve_path(&parent, base_dir);
            let src = std::fs::read_to_string(&path).map_err(|e| {
                Error::Config(format!("`extends = \"{parent}\"`: not a preset and cannot read {}: {e}", path.display()))
            })?;
            Self::parse_depth(&src, path.parent(), depth + 1)?
        };
        let mut merged = base.0;
        merge(&mut merged, table);
        Ok(Self(merged))
    }

    /// Sets `key` (dotted for nested tables, e.g. `hardware.u6_cut`) to
    /// `value`, parsed as a TOML literal or, failing that, a string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let parsed: toml::Value = match format!("v = {value}").parse::<toml::Table>() {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(value.to_owned()),
        };
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("bad key `{key}`")))?;
        let mut table = &mut self.0;
        for p in parts {
            table = table
                .entry(p.to_owned())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{p}` is not a table in key `{key}`")))?;
        }
        table.insert(last.to_owned(), parsed);
        // reject unknown keys and bad types immediately
        self.to_config().map(|_| ())
    }

    pub fn to_config(&self) -> Result<ScenarioConfig> {
        let cfg: ScenarioConfig = toml::Value::Table(self.0.clone())
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }
}

fn resolve_path(p: &str, base_dir: Option<&Path>) -> PathBuf {
    let path = PathBuf::from(p);
    match base_dir {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path,
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn secs(name: &'static str, v: f64) -> Result<DurationSeconds> {
    DurationSeconds::new(v).map_err(|_| Error::InvalidQuantity { quantity: name, value: v })
}

fn amps(name: &'static str, v: f64) -> Result<CurrentMilliamp> {
    CurrentMilliamp::new(v).map_err(|_| Error::InvalidQuantity { quantity: name, value: v })
}

impl ScenarioConfig {
    /// Parses a scenario file (with `extends` support).
    pub fn from_toml_str(src: &str) -> Result<Self> {
        ConfigTable::parse(src, None)?.to_config()
    }

    /// Minimal config selecting the catalog defaults for a mode.
    pub fn for_mode(mode: OperatingMode, hw: HardwareConfig) -> Self {
        Self {
            mode: Some(mode),
            hardware: Some(hw),
            ..Default::default()
        }
    }

    fn mode(&self) -> Result<OperatingMode> {
        self.mode.ok_or_else(|| Error::Config("missing `mode`".into()))
    }

    fn set_keys(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        macro_rules! chk {
            ($($f:ident),*) => { $( if self.$f.is_some() { v.push(stringify!($f)); } )* };
        }
        chk!(
            p_tx_dbm, t_conn_int_ms, t_fast_adv_int_ms, t_slow_adv_int_ms, t_fast_adv_s, t_slow_adv_s,
            t_ble_conn_s, i_fast_adv_int_ma, i_slow_adv_int_ma, i_conn_int_ma, idle_current_source,
            t_deep_sleep_s, i_deep_sleep_ma
        );
        v
    }

    /// Resolves every phase current and duration against `catalog`.
    pub fn resolve(&self, catalog: &ParameterCatalog) -> Result<ScenarioProfile> {
        let mode = self.mode()?;
        let bad: Vec<&str> = self
            .set_keys()
            .into_iter()
            .filter(|k| match mode {
                OperatingMode::VeryLowPower => CONNECTED_ONLY.contains(k),
                _ => VLP_ONLY.contains(k),
            })
            .collect();
        if let Some(k) = bad.first() {
            return Err(Error::Config(format!("key `{k}` does not apply to {mode} mode")));
        }
        let mut profile = match mode {
            OperatingMode::VeryLowPower => self.resolve_vlp(catalog)?,
            _ => self.resolve_connected(mode, catalog)?,
        };
        profile.name = self.name.clone();
        if let Some(m) = self.measured_energy_mwh {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::Config(format!("measured_energy_mwh must be positive, got {m}")));
            }
        }
        profile.reference = ReferenceValues {
            measured_energy_mwh: self.measured_energy_mwh,
            prediction_mwh: self.reference_prediction_mwh,
            accuracy_pct: self.reference_accuracy_pct,
        };
        Ok(profile)
    }

    fn common(&self, catalog: &ParameterCatalog) -> Result<(Volts, DurationSeconds)> {
        let d = catalog.defaults()?;
        let v = self.operating_voltage_v.unwrap_or(d.operating_voltage_v);
        let volts = Volts::new(v)?;
        let t = match self.t_s {
            Some(t) => secs("t_s", t)?,
            None => d.total_time,
        };
        Ok((volts, t))
    }

    fn resolve_connected(&self, mode: OperatingMode, catalog: &ParameterCatalog) -> Result<ScenarioProfile> {
        let hw = self.hardware.unwrap_or_default();
        hw.validate()?;
        let d = catalog.defaults()?;
        let mc = catalog.mode_constants(mode)?;
        let (volts, total) = self.common(catalog)?;
        let nbvlc = hw.nbvlc_enabled;
        let eink = self.eink.unwrap_or(match mode {
            OperatingMode::LowPower => EinkVariant::Optimized,
            _ => EinkVariant::Unoptimized,
        });
        let source = self.idle_current_source.unwrap_or_default();

        let tx = self.p_tx_dbm.unwrap_or(d.tx_power_dbm);
        let conn_interval = match self.t_conn_int_ms {
            Some(ms) => DurationSeconds::from_millis(ms)?,
            None => d.t_conn_int,
        };
        let key = BleRadioKey {
            mode,
            connection_interval: conn_interval,
            tx_power_dbm: tx,
        };
        let ms_or = |v: Option<f64>, dflt: DurationSeconds| -> Result<DurationSeconds> {
            v.map(DurationSeconds::from_millis).unwrap_or(Ok(dflt))
        };
        let t_fast_adv_int = ms_or(self.t_fast_adv_int_ms, d.t_fast_adv_int)?;
        let t_slow_adv_int = ms_or(self.t_slow_adv_int_ms, d.t_slow_adv_int)?;

        let adv_current = |over: Option<f64>, name: &'static str, interval: DurationSeconds| -> Result<CurrentMilliamp> {
            if let Some(i) = over {
                return amps(name, i);
            }
            let adv = catalog.lookup_adv(tx)?;
            if interval.value() < adv.event_duration.value() {
                return Err(Error::InvalidCombination(format!(
                    "advertising interval {} ms shorter than the advertising event",
                    interval.millis()
                )));
            }
            interval_average_current(&IntervalSpec {
                event_current: adv.event_current,
                event_duration: adv.event_duration,
                idle_current: adv.idle_current,
                idle_duration: interval.saturating_sub(adv.event_duration),
            })
        };
        let i_fast = adv_current(self.i_fast_adv_int_ma, "i_fast_adv_int_ma", t_fast_adv_int)?;
        let i_slow = adv_current(self.i_slow_adv_int_ma, "i_slow_adv_int_ma", t_slow_adv_int)?;
        let i_conn = match self.i_conn_int_ma {
            Some(i) => amps("i_conn_int_ma", i)?,
            None => {
                let c = catalog.lookup_ble_conn(key)?;
                interval_average_current(&IntervalSpec {
                    event_current: c.event_current,
                    event_duration: c.event_duration,
                    idle_current: c.idle_current,
                    idle_duration: c.idle_duration,
                })?
            }
        };

        // cyclic cell, looked up only when something needs it
        let cell = std::cell::OnceCell::new();
        let cyclic = || -> Result<crate::catalog::CyclicCurrents> {
            if let Some(c) = cell.get() {
                return Ok(*c);
            }
            let c = catalog.lookup_cyclic(key)?;
            Ok(*cell.get_or_init(|| c))
        };
        let idle = |label: PhaseLabel, over: Option<f64>, name: &'static str| -> Result<CurrentMilliamp> {
            if let Some(i) = over {
                return amps(name, i);
            }
            match (source, label) {
                (IdleCurrentSource::Measured, PhaseLabel::IdleSens) => Ok(cyclic()?.idle_sens),
                (IdleCurrentSource::Measured, PhaseLabel::IdleEink | PhaseLabel::IdleNbvlc) => {
                    Ok(cyclic()?.idle_eink)
                }
                _ => i_conn.scaled(catalog.idle_factor(mode, label)?),
            }
        };

        let dur = |v: Option<f64>, name: &'static str, dflt: DurationSeconds| -> Result<DurationSeconds> {
            v.map(|x| secs(name, x)).unwrap_or(Ok(dflt))
        };
        let zero = DurationSeconds::ZERO;

        let init = vec![
            PhaseSpec::new(PhaseLabel::FastAdv, i_fast, dur(self.t_fast_adv_s, "t_fast_adv_s", d.t_fast_adv)?),
            PhaseSpec::new(PhaseLabel::SlowAdv, i_slow, dur(self.t_slow_adv_s, "t_slow_adv_s", d.t_slow_adv)?),
            PhaseSpec::new(PhaseLabel::BleConnIdle, i_conn, dur(self.t_ble_conn_s, "t_ble_conn_s", d.t_ble_conn)?),
            PhaseSpec::new(
                PhaseLabel::Startup,
                match self.i_start_ma {
                    Some(i) => amps("i_start_ma", i)?,
                    None => mc.startup.current,
                },
                dur(self.t_start_s, "t_start_s", mc.startup.duration)?,
            ),
            PhaseSpec::new(
                PhaseLabel::IdleStart,
                idle(PhaseLabel::IdleStart, self.i_idle_start_ma, "i_idle_start_ma")?,
                dur(self.t_idle_start_s, "t_idle_start_s", d.t_idle_start)?,
            ),
        ];

        let i_sens = match self.i_sens_ma {
            Some(i) => amps("i_sens_ma", i)?,
            None => cyclic()?.sensing,
        };
        let (i_eink, t_eink) = match eink {
            EinkVariant::Disabled => (CurrentMilliamp::ZERO, zero),
            EinkVariant::Unoptimized => (
                match self.i_eink_ma {
                    Some(i) => amps("i_eink_ma", i)?,
                    None => cyclic()?.eink_unoptimized,
                },
                dur(self.t_eink_s, "t_eink_s", d.t_eink_unoptimized)?,
            ),
            EinkVariant::Optimized => {
                let opt = mc.eink_optimized;
                let i = match (self.i_eink_ma, opt) {
                    (Some(i), _) => amps("i_eink_ma", i)?,
                    (None, Some(o)) => o.current,
                    (None, None) => {
                        return Err(Error::MissingCatalogEntry(format!("optimized E-ink current for {mode} mode")))
                    }
                };
                let t = match (self.t_eink_s, opt) {
                    (Some(t), _) => secs("t_eink_s", t)?,
                    (None, Some(o)) => o.duration,
                    (None, None) => {
                        return Err(Error::MissingCatalogEntry(format!("optimized E-ink duration for {mode} mode")))
                    }
                };
                (i, t)
            }
        };
        let eink_on = eink != EinkVariant::Disabled;
        let cycle = vec![
            PhaseSpec::new(PhaseLabel::Sensing, i_sens, dur(self.t_sens_s, "t_sens_s", d.t_sens)?),
            PhaseSpec::new(
                PhaseLabel::IdleSens,
                idle(PhaseLabel::IdleSens, self.i_idle_sens_ma, "i_idle_sens_ma")?,
                dur(self.t_idle_sens_s, "t_idle_sens_s", d.t_idle_sens)?,
            ),
            PhaseSpec::new(PhaseLabel::Eink, i_eink, t_eink),
            PhaseSpec::new(
                PhaseLabel::IdleEink,
                idle(PhaseLabel::IdleEink, self.i_idle_eink_ma, "i_idle_eink_ma")?,
                dur(self.t_idle_eink_s, "t_idle_eink_s", if eink_on { d.t_idle_eink } else { zero })?,
            ),
            if nbvlc {
                PhaseSpec::new(
                    PhaseLabel::Nbvlc,
                    match self.i_nbvlc_ma {
                        Some(i) => amps("i_nbvlc_ma", i)?,
                        None => mc.nbvlc.current,
                    },
                    dur(self.t_nbvlc_s, "t_nbvlc_s", mc.nbvlc.duration)?,
                )
            } else {
                PhaseSpec::new(PhaseLabel::Nbvlc, CurrentMilliamp::ZERO, zero)
            },
            PhaseSpec::new(
                PhaseLabel::IdleNbvlc,
                idle(PhaseLabel::IdleNbvlc, self.i_idle_nbvlc_ma, "i_idle_nbvlc_ma")?,
                dur(self.t_idle_nbvlc_s, "t_idle_nbvlc_s", if nbvlc { d.t_idle_nbvlc } else { zero })?,
            ),
        ];

        let mut profile = ScenarioProfile::new(mode, hw, volts, total, init, cycle)?;
        profile.eink = eink;
        profile.ble = Some(BleTiming {
            radio: key,
            t_fast_adv_int,
            t_slow_adv_int,
            i_conn_int: i_conn,
        });
        Ok(profile)
    }

    fn resolve_vlp(&self, catalog: &ParameterCatalog) -> Result<ScenarioProfile> {
        let hw = self.hardware.unwrap_or_else(HardwareConfig::both_cut);
        let ops = catalog.lookup_vlp(hw)?;
        let (volts, total) = self.common(catalog)?;
        let eink = self.eink.unwrap_or(EinkVariant::Optimized);
        let ph = |label, i_over: Option<f64>, i_name, t_over: Option<f64>, t_name, op: crate::catalog::OperationValue| -> Result<PhaseSpec> {
            Ok(PhaseSpec::new(
                label,
                i_over.map(|i| amps(i_name, i)).unwrap_or(Ok(op.current))?,
                t_over.map(|t| secs(t_name, t)).unwrap_or(Ok(op.duration))?,
            ))
        };
        let eink_op = match eink {
            EinkVariant::Optimized => ops.eink_optimized,
            EinkVariant::Unoptimized => ops.eink_unoptimized,
            EinkVariant::Disabled => crate::catalog::OperationValue {
                current: CurrentMilliamp::ZERO,
                duration: DurationSeconds::ZERO,
            },
        };
        let mut cycle = vec![
            ph(PhaseLabel::Startup, self.i_start_ma, "i_start_ma", self.t_start_s, "t_start_s", ops.startup)?,
            ph(PhaseLabel::IdleStart, self.i_idle_start_ma, "i_idle_start_ma", self.t_idle_start_s, "t_idle_start_s", ops.idle_start)?,
            ph(PhaseLabel::Sensing, self.i_sens_ma, "i_sens_ma", self.t_sens_s, "t_sens_s", ops.sensing)?,
            ph(PhaseLabel::IdleSens, self.i_idle_sens_ma, "i_idle_sens_ma", self.t_idle_sens_s, "t_idle_sens_s", ops.idle_sens)?,
        ];
        if eink == EinkVariant::Disabled {
            cycle.push(PhaseSpec::new(PhaseLabel::Eink, CurrentMilliamp::ZERO, DurationSeconds::ZERO));
        } else {
            cycle.push(ph(PhaseLabel::Eink, self.i_eink_ma, "i_eink_ma", self.t_eink_s, "t_eink_s", eink_op)?);
        }
        if hw.nbvlc_enabled {
            let need = |o: Option<crate::catalog::OperationValue>, what: &str| {
                o.ok_or_else(|| Error::MissingCatalogEntry(format!("very-low-power {what} with NBVLC")))
            };
            cycle.push(ph(PhaseLabel::IdleEink, self.i_idle_eink_ma, "i_idle_eink_ma", self.t_idle_eink_s, "t_idle_eink_s", need(ops.idle_eink, "idle_eink")?)?);
            cycle.push(ph(PhaseLabel::Nbvlc, self.i_nbvlc_ma, "i_nbvlc_ma", self.t_nbvlc_s, "t_nbvlc_s", need(ops.nbvlc, "nbvlc")?)?);
            cycle.push(ph(PhaseLabel::IdleNbvlc, self.i_idle_nbvlc_ma, "i_idle_nbvlc_ma", self.t_idle_nbvlc_s, "t_idle_nbvlc_s", need(ops.idle_nbvlc, "idle_nbvlc")?)?);
        } else if let Some(k) = [
            ("t_idle_eink_s", self.t_idle_eink_s),
            ("t_nbvlc_s", self.t_nbvlc_s),
            ("t_idle_nbvlc_s", self.t_idle_nbvlc_s),
        ]
        .iter()
        .find(|(_, v)| v.is_some_and(|x| x > 0.0))
        {
            return Err(Error::Config(format!(
                "key `{}` needs NBVLC enabled in very_low_power mode",
                k.0
            )));
        }
        // The tables keep the wake period fixed: a longer E-ink refresh
        // comes out of deep sleep.
        let mut sleep = ops.deep_sleep;
        let t_eink = cycle[4].duration.value();
        sleep.duration = DurationSeconds::new((sleep.duration.value() - (t_eink - ops.eink_optimized.duration.value())).max(0.0))?;
        cycle.push(ph(PhaseLabel::DeepSleep, self.i_deep_sleep_ma, "i_deep_sleep_ma", self.t_deep_sleep_s, "t_deep_sleep_s", sleep)?);

        let mut profile = ScenarioProfile::new(OperatingMode::VeryLowPower, hw, volts, total, vec![], cycle)?;
        profile.eink = eink;
        Ok(profile)
    }
}
