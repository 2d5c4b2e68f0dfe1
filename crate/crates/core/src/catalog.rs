//! Measured parameter catalog.
//!
//! The built-in values ship as an embedded TOML file
//! (`data/catalog-v1.toml`). A [`ParameterCatalog`] is that base layer plus
//! an optional overlay of user overrides; lookups hit the overlay first and
//! fall back to the base. Nothing is ever interpolated: a key that is not on
//! the measured grid and not overridden is a [`Error::MissingCatalogEntry`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::model::PhaseLabel;
use crate::scenario::ScenarioProfile;
use crate::units::{CurrentMilliamp, DurationSeconds};

/// Embedded catalog source.
pub const BUILTIN_CATALOG_TOML: &str = include_str!("../data/catalog-v1.toml");
pub const CATALOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatingMode {
    Normal,
    LowPower,
    VeryLowPower,
}

impl OperatingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            OperatingMode::Normal => "normal",
            OperatingMode::LowPower => "low_power",
            OperatingMode::VeryLowPower => "very_low_power",
        }
    }

    /// BLE stays connected during cyclic operation.
    pub fn ble_connected(self) -> bool {
        !matches!(self, OperatingMode::VeryLowPower)
    }
}

impl fmt::Display for OperatingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OperatingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "normal" => Ok(OperatingMode::Normal),
            "low_power" | "lowpower" => Ok(OperatingMode::LowPower),
            "very_low_power" | "vlp" => Ok(OperatingMode::VeryLowPower),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Which of the sleep-current cut points are severed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutState {
    Shorted,
    U6Cut,
    U9Cut,
    BothCut,
}

impl CutState {
    fn as_str(self) -> &'static str {
        match self {
            CutState::Shorted => "shorted",
            CutState::U6Cut => "u6_cut",
            CutState::U9Cut => "u9_cut",
            CutState::BothCut => "both_cut",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareConfig {
    #[serde(default)]
    pub u6_cut: bool,
    #[serde(default)]
    pub u9_cut: bool,
    #[serde(default = "yes")]
    pub nbvlc_enabled: bool,
}

fn yes() -> bool {
    true
}

impl Default for HardwareConfig {
    /// Factory state: both cut points shorted, NBVLC available.
    fn default() -> Self {
        Self {
            u6_cut: false,
            u9_cut: false,
            nbvlc_enabled: true,
        }
    }
}

impl HardwareConfig {
    /// Lowest-current very-low-power build: U6 and U9 cut, NBVLC off.
    pub fn both_cut() -> Self {
        Self {
            u6_cut: true,
            u9_cut: true,
            nbvlc_enabled: false,
        }
    }

    pub fn cut_state(&self) -> CutState {
        match (self.u6_cut, self.u9_cut) {
            (false, false) => CutState::Shorted,
            (true, false) => CutState::U6Cut,
            (false, true) => CutState::U9Cut,
            (true, true) => CutState::BothCut,
        }
    }

    /// Cutting U9 removes the NBVLC receiver's supply.
    pub fn validate(&self) -> Result<()> {
        if self.u9_cut && self.nbvlc_enabled {
            return Err(Error::InvalidCombination(
                "NBVLC cannot be enabled with U9 cut (receiver unpowered)".into(),
            ));
        }
        Ok(())
    }
}

/// Connection interval rounded to whole microseconds, used as an exact
/// lookup key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IntervalKey(u64);

impl IntervalKey {
    pub fn from_duration(d: DurationSeconds) -> Self {
        Self((d.value() * 1e6).round() as u64)
    }

    fn from_ms(ms: f64) -> Self {
        Self((ms * 1e3).round() as u64)
    }

    pub fn millis(self) -> f64 {
        self.0 as f64 / 1e3
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleRadioKey {
    pub mode: OperatingMode,
    pub connection_interval: DurationSeconds,
    pub tx_power_dbm: i32,
}

impl BleRadioKey {
    pub fn new(mode: OperatingMode, connection_interval_ms: f64, tx_power_dbm: i32) -> Result<Self> {
        Ok(Self {
            mode,
            connection_interval: DurationSeconds::from_millis(connection_interval_ms)?,
            tx_power_dbm,
        })
    }

    fn grid_key(&self) -> GridKey {
        (self.mode, IntervalKey::from_duration(self.connection_interval), self.tx_power_dbm)
    }
}

impl fmt::Display for BleRadioKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {} ms, {:+} dBm)",
            self.mode,
            self.connection_interval.millis(),
            self.tx_power_dbm
        )
    }
}

type GridKey = (OperatingMode, IntervalKey, i32);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvLookup {
    pub event_current: CurrentMilliamp,
    pub idle_current: CurrentMilliamp,
    pub event_duration: DurationSeconds,
    /// Measured 152.5 ms interval average.
    pub measured_interval_current: Option<CurrentMilliamp>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConnLookup {
    pub event_current: CurrentMilliamp,
    pub idle_current: CurrentMilliamp,
    pub event_duration: DurationSeconds,
    pub idle_duration: DurationSeconds,
    /// Only present at the interval where it was measured (45 ms).
    pub measured_interval_current: Option<CurrentMilliamp>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CyclicCurrents {
    pub sensing: CurrentMilliamp,
    pub eink_unoptimized: CurrentMilliamp,
    pub idle_eink: CurrentMilliamp,
    pub idle_sens: CurrentMilliamp,
    pub overall: Option<CurrentMilliamp>,
}

/// Current and duration of one measured operation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperationValue {
    pub current: CurrentMilliamp,
    pub duration: DurationSeconds,
}

/// One column of the very-low-power operation tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VlpOperations {
    pub startup: OperationValue,
    pub idle_start: OperationValue,
    pub sensing: OperationValue,
    pub idle_sens: OperationValue,
    pub eink_optimized: OperationValue,
    pub eink_unoptimized: OperationValue,
    pub idle_eink: Option<OperationValue>,
    pub nbvlc: Option<OperationValue>,
    pub idle_nbvlc: Option<OperationValue>,
    pub deep_sleep: OperationValue,
    pub overall_optimized: Option<CurrentMilliamp>,
    pub overall_unoptimized: Option<CurrentMilliamp>,
}

/// Single-valued mode parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeConstants {
    pub startup: OperationValue,
    pub nbvlc: OperationValue,
    pub eink_optimized: Option<OperationValue>,
}

/// Scenario defaults shared by the BLE-connected modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatalogDefaults {
    pub operating_voltage_v: f64,
    pub total_time: DurationSeconds,
    pub tx_power_dbm: i32,
    pub t_fast_adv: DurationSeconds,
    pub t_slow_adv: DurationSeconds,
    pub t_ble_conn: DurationSeconds,
    pub t_fast_adv_int: DurationSeconds,
    pub t_slow_adv_int: DurationSeconds,
    pub t_adv_event: DurationSeconds,
    pub t_conn_int: DurationSeconds,
    pub t_conn_event: DurationSeconds,
    pub t_idle_start: DurationSeconds,
    pub t_sens: DurationSeconds,
    pub t_idle_sens: DurationSeconds,
    pub t_eink_unoptimized: DurationSeconds,
    pub t_idle_eink: DurationSeconds,
    pub t_idle_nbvlc: DurationSeconds,
}

// ---------------------------------------------------------------------------
// file layout

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    schema_version: Option<u32>,
    #[serde(default)]
    defaults: DefaultsRaw,
    #[serde(default)]
    modes: BTreeMap<OperatingMode, ModeRaw>,
    #[serde(default)]
    idle_factors: BTreeMap<OperatingMode, BTreeMap<PhaseLabel, f64>>,
    #[serde(default)]
    advertising: Vec<AdvRaw>,
    #[serde(default)]
    connection: ConnectionRaw,
    cyclic_timing: Option<CyclicTimingRaw>,
    #[serde(default)]
    cyclic: Vec<CyclicRaw>,
    #[serde(default)]
    vlp: Vec<VlpRaw>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DefaultsRaw {
    operating_voltage_v: Option<f64>,
    t_s: Option<f64>,
    p_tx_dbm: Option<i32>,
    t_fast_adv_s: Option<f64>,
    t_slow_adv_s: Option<f64>,
    t_ble_conn_s: Option<f64>,
    t_fast_adv_int_ms: Option<f64>,
    t_slow_adv_int_ms: Option<f64>,
    t_adv_event_ms: Option<f64>,
    t_conn_int_ms: Option<f64>,
    t_conn_event_ms: Option<f64>,
    t_idle_start_s: Option<f64>,
    t_sens_ms: Option<f64>,
    t_idle_sens_ms: Option<f64>,
    t_eink_unoptimized_s: Option<f64>,
    t_idle_eink_s: Option<f64>,
    t_idle_nbvlc_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeRaw {
    i_start_ma: Option<f64>,
    t_start_ms: Option<f64>,
    i_nbvlc_ma: Option<f64>,
    t_nbvlc_ms: Option<f64>,
    i_eink_optimized_ma: Option<f64>,
    t_eink_optimized_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvRaw {
    p_tx_dbm: i32,
    i_adv_int_ma: Option<f64>,
    i_adv_idle_ma: f64,
    i_adv_event_ma: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConnectionRaw {
    #[serde(default)]
    connection_intervals_ms: Vec<f64>,
    measured_at_interval_ms: Option<f64>,
    #[serde(default)]
    entry: Vec<ConnRaw>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConnRaw {
    mode: OperatingMode,
    p_tx_dbm: i32,
    /// Absent: applies at every grid interval.
    t_conn_int_ms: Option<f64>,
    i_conn_int_ma: Option<f64>,
    i_conn_idle_ma: f64,
    i_conn_event_ma: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(dead_code)]
struct CyclicTimingRaw {
    t_idle_eink_s: f64,
    t_idle_sens_ms: f64,
    t_sens_ms: f64,
    t_eink_s: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct CyclicRaw {
    mode: OperatingMode,
    t_conn_int_ms: f64,
    p_tx_dbm: i32,
    overall_ma: Option<f64>,
    i_idle_eink_ma: f64,
    i_idle_sens_ma: f64,
    i_sens_ma: f64,
    i_eink_ma: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct VlpRaw {
    hw: CutState,
    nbvlc: bool,
    i_start_ma: f64,
    t_start_ms: f64,
    i_idle_start_ma: f64,
    t_idle_start_ms: f64,
    i_sens_ma: f64,
    t_sens_ms: f64,
    i_idle_sens_ma: f64,
    t_idle_sens_ms: f64,
    i_eink_optimized_ma: f64,
    t_eink_optimized_ms: f64,
    i_eink_unoptimized_ma: f64,
    t_eink_unoptimized_s: f64,
    i_idle_eink_ma: Option<f64>,
    t_idle_eink_s: Option<f64>,
    i_nbvlc_ma: Option<f64>,
    t_nbvlc_ms: Option<f64>,
    i_idle_nbvlc_ma: Option<f64>,
    t_idle_nbvlc_s: Option<f64>,
    i_deep_sleep_ma: f64,
    t_deep_sleep_s: f64,
    overall_optimized_ma: Option<f64>,
    overall_unoptimized_ma: Option<f64>,
}

fn ma(v: f64) -> Result<CurrentMilliamp> {
    CurrentMilliamp::new(v)
}

fn op_ms(i: f64, t_ms: f64) -> Result<OperationValue> {
    Ok(OperationValue {
        current: ma(i)?,
        duration: DurationSeconds::from_millis(t_ms)?,
    })
}

fn op_s(i: f64, t_s: f64) -> Result<OperationValue> {
    Ok(OperationValue {
        current: ma(i)?,
        duration: DurationSeconds::new(t_s)?,
    })
}

fn opt_op(i: Option<f64>, t: Option<f64>, to_s: f64) -> Result<Option<OperationValue>> {
    match (i, t) {
        (Some(i), Some(t)) => op_s(i, t * to_s).map(Some),
        (None, None) => Ok(None),
        _ => Err(Error::Config("operation needs both a current and a duration".into())),
    }
}

impl VlpRaw {
    fn convert(&self) -> Result<VlpOperations> {
        Ok(VlpOperations {
            startup: op_ms(self.i_start_ma, self.t_start_ms)?,
            idle_start: op_ms(self.i_idle_start_ma, self.t_idle_start_ms)?,
            sensing: op_ms(self.i_sens_ma, self.t_sens_ms)?,
            idle_sens: op_ms(self.i_idle_sens_ma, self.t_idle_sens_ms)?,
            eink_optimized: op_ms(self.i_eink_optimized_ma, self.t_eink_optimized_ms)?,
            eink_unoptimized: op_s(self.i_eink_unoptimized_ma, self.t_eink_unoptimized_s)?,
            idle_eink: opt_op(self.i_idle_eink_ma, self.t_idle_eink_s, 1.0)?,
            nbvlc: opt_op(self.i_nbvlc_ma, self.t_nbvlc_ms, 1e-3)?,
            idle_nbvlc: opt_op(self.i_idle_nbvlc_ma, self.t_idle_nbvlc_s, 1.0)?,
            deep_sleep: op_s(self.i_deep_sleep_ma, self.t_deep_sleep_s)?,
            overall_optimized: self.overall_optimized_ma.map(ma).transpose()?,
            overall_unoptimized: self.overall_unoptimized_ma.map(ma).transpose()?,
        })
    }
}

// ---------------------------------------------------------------------------
// layers

/// One layer of catalog data (the built-in base or a user overlay), indexed
/// for exact-match lookup.
#[derive(Debug, Clone, Default)]
pub struct CatalogLayer {
    defaults: DefaultsRaw,
    modes: BTreeMap<OperatingMode, ModeRaw>,
    idle_factors: BTreeMap<(OperatingMode, PhaseLabel), f64>,
    adv: BTreeMap<i32, AdvRaw>,
    conn: BTreeMap<GridKey, ConnRaw>,
    conn_any_interval: BTreeMap<(OperatingMode, i32), ConnRaw>,
    measured_interval: Option<IntervalKey>,
    cyclic: BTreeMap<GridKey, CyclicRaw>,
    cyclic_timing: Option<CyclicTimingRaw>,
    vlp: BTreeMap<(CutState, bool), VlpRaw>,
}

impl CatalogLayer {
    /// Parses a catalog file. Every section is optional.
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let file: CatalogFile =
            toml::from_str(src).map_err(|e| Error::Config(format!("catalog: {e}")))?;
        if let Some(v) = file.schema_version {
            if v != CATALOG_SCHEMA_VERSION {
                return Err(Error::Config(format!(
                    "catalog schema_version {v} is not supported (expected {CATALOG_SCHEMA_VERSION})"
                )));
            }
        }
        let mut layer = CatalogLayer {
            defaults: file.defaults,
            modes: file.modes,
            cyclic_timing: file.cyclic_timing,
            measured_interval: file.connection.measured_at_interval_ms.map(IntervalKey::from_ms),
            ..Default::default()
        };
        for (mode, factors) in file.idle_factors {
            for (label, f) in factors {
                if !label.is_idle() {
                    return Err(Error::Config(format!("idle factor for non-idle phase `{label}`")));
                }
                if !(f.is_finite() && f >= 0.0) {
                    return Err(Error::Config(format!("idle factor {f} for `{label}` is invalid")));
                }
                layer.idle_factors.insert((mode, label), f);
            }
        }
        for a in file.advertising {
            if layer.adv.insert(a.p_tx_dbm, a).is_some() {
                return Err(Error::Config(format!("duplicate advertising entry {} dBm", a.p_tx_dbm)));
            }
        }
        let grid: Vec<IntervalKey> = file
            .connection
            .connection_intervals_ms
            .iter()
            .map(|&ms| IntervalKey::from_ms(ms))
            .collect();
        for c in file.connection.entry {
            if c.mode == OperatingMode::VeryLowPower {
                return Err(Error::Config("connection entries need normal or low_power mode".into()));
            }
            match c.t_conn_int_ms {
                Some(ms) => {
                    layer.conn.insert((c.mode, IntervalKey::from_ms(ms), c.p_tx_dbm), c);
                }
                None if grid.is_empty() => {
                    layer.conn_any_interval.insert((c.mode, c.p_tx_dbm), c);
                }
                None => {
                    for &k in &grid {
                        layer.conn.insert((c.mode, k, c.p_tx_dbm), c);
                    }
                }
            }
        }
        for c in file.cyclic {
            let key = (c.mode, IntervalKey::from_ms(c.t_conn_int_ms), c.p_tx_dbm);
            if layer.cyclic.insert(key, c).is_some() {
                return Err(Error::Config(format!(
                    "duplicate cyclic entry ({}, {} ms, {} dBm)",
                    c.mode, c.t_conn_int_ms, c.p_tx_dbm
                )));
            }
        }
        for v in file.vlp {
            v.convert()?;
            if v.nbvlc && matches!(v.hw, CutState::U9Cut | CutState::BothCut) {
                return Err(Error::Config("vlp entry with NBVLC requires U9 shorted".into()));
            }
            if v.nbvlc && (v.i_nbvlc_ma.is_none() || v.i_idle_eink_ma.is_none() || v.i_idle_nbvlc_ma.is_none()) {
                return Err(Error::Config(format!(
                    "vlp entry ({}, nbvlc) lacks NBVLC operation values",
                    v.hw.as_str()
                )));
            }
            layer.vlp.insert((v.hw, v.nbvlc), v);
        }
        Ok(layer)
    }
}

/// Override that can be layered over a catalog.
#[derive(Debug, Clone, PartialEq)]
pub enum CatalogOverride {
    Advertising {
        tx_power_dbm: i32,
        event_current: CurrentMilliamp,
        idle_current: CurrentMilliamp,
    },
    Connection {
        key: BleRadioKey,
        event_current: CurrentMilliamp,
        idle_current: CurrentMilliamp,
    },
    Cyclic {
        key: BleRadioKey,
        currents: CyclicCurrents,
    },
    IdleFactor {
        mode: OperatingMode,
        label: PhaseLabel,
        factor: f64,
    },
}

/// Identifies an override for removal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OverrideKey {
    Advertising(i32),
    Connection(BleRadioKey),
    Cyclic(BleRadioKey),
    IdleFactor(OperatingMode, PhaseLabel),
}

/// Built-in measurements plus optional user overrides. Cheap to clone;
/// layering returns a new value and never mutates an existing catalog.
#[derive(Debug, Clone)]
pub struct ParameterCatalog {
    base: Arc<CatalogLayer>,
    overlay: Arc<CatalogLayer>,
}

static BUILTIN: OnceLock<Arc<CatalogLayer>> = OnceLock::new();

fn builtin_layer() -> Arc<CatalogLayer> {
    BUILTIN
        .get_or_init(|| {
            let layer = CatalogLayer::from_toml_str(BUILTIN_CATALOG_TOML)
                .expect("embedded catalog must parse");
            Arc::new(layer)
        })
        .clone()
}

impl Default for ParameterCatalog {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ParameterCatalog {
    /// The embedded catalog with no overrides.
    pub fn builtin() -> Self {
        Self {
            base: builtin_layer(),
            overlay: Arc::new(CatalogLayer::default()),
        }
    }

    /// Built-in defaults with `src` (catalog-format TOML) layered on top.
    pub fn with_overlay_str(&self, src: &str) -> Result<Self> {
        let layer = CatalogLayer::from_toml_str(src)?;
        Ok(self.with_overlay(layer))
    }

    /// Replaces the overlay with `layer`.
    pub fn with_overlay(&self, layer: CatalogLayer) -> Self {
        Self {
            base: self.base.clone(),
            overlay: Arc::new(layer),
        }
    }

    pub fn has_overrides(&self) -> bool {
        let o = &self.overlay;
        !(o.adv.is_empty()
            && o.conn.is_empty()
            && o.conn_any_interval.is_empty()
            && o.cyclic.is_empty()
            && o.vlp.is_empty()
            && o.idle_factors.is_empty()
            && o.modes.is_empty())
    }

    pub fn with_override(&self, ov: CatalogOverride) -> Self {
        let mut layer = (*self.overlay).clone();
        match ov {
            CatalogOverride::Advertising {
                tx_power_dbm,
                event_current,
                idle_current,
            } => {
                layer.adv.insert(
                    tx_power_dbm,
                    AdvRaw {
                        p_tx_dbm: tx_power_dbm,
                        i_adv_int_ma: None,
                        i_adv_idle_ma: idle_current.value(),
                        i_adv_event_ma: event_current.value(),
                    },
                );
            }
            CatalogOverride::Connection {
                key,
                event_current,
                idle_current,
            } => {
                layer.conn.insert(
                    key.grid_key(),
                    ConnRaw {
                        mode: key.mode,
                        p_tx_dbm: key.tx_power_dbm,
                        t_conn_int_ms: Some(key.connection_interval.millis()),
                        i_conn_int_ma: None,
                        i_conn_idle_ma: idle_current.value(),
                        i_conn_event_ma: event_current.value(),
                    },
                );
            }
            CatalogOverride::Cyclic { key, currents } => {
                layer.cyclic.insert(
                    key.grid_key(),
                    CyclicRaw {
                        mode: key.mode,
                        t_conn_int_ms: key.connection_interval.millis(),
                        p_tx_dbm: key.tx_power_dbm,
                        overall_ma: currents.overall.map(|c| c.value()),
                        i_idle_eink_ma: currents.idle_eink.value(),
                        i_idle_sens_ma: currents.idle_sens.value(),
                        i_sens_ma: currents.sensing.value(),
                        i_eink_ma: currents.eink_unoptimized.value(),
                    },
                );
            }
            CatalogOverride::IdleFactor { mode, label, factor } => {
                layer.idle_factors.insert((mode, label), factor);
            }
        }
        self.with_overlay(layer)
    }

    pub fn without_override(&self, key: OverrideKey) -> Self {
        let mut layer = (*self.overlay).clone();
        match key {
            OverrideKey::Advertising(tx) => {
                layer.adv.remove(&tx);
            }
            OverrideKey::Connection(k) => {
                layer.conn.remove(&k.grid_key());
            }
            OverrideKey::Cyclic(k) => {
                layer.cyclic.remove(&k.grid_key());
            }
            OverrideKey::IdleFactor(m, l) => {
                layer.idle_factors.remove(&(m, l));
            }
        }
        self.with_overlay(layer)
    }

    fn layers(&self) -> [&CatalogLayer; 2] {
        [&self.overlay, &self.base]
    }

    fn default_f64(&self, name: &str, get: impl Fn(&DefaultsRaw) -> Option<f64>) -> Result<f64> {
        self.layers()
            .iter()
            .find_map(|l| get(&l.defaults))
            .ok_or_else(|| Error::MissingCatalogEntry(format!("defaults.{name}")))
    }

    pub fn defaults(&self) -> Result<CatalogDefaults> {
        let s = |name: &str, get: fn(&DefaultsRaw) -> Option<f64>| -> Result<DurationSeconds> {
            DurationSeconds::new(self.default_f64(name, get)?)
        };
        let ms = |name: &str, get: fn(&DefaultsRaw) -> Option<f64>| -> Result<DurationSeconds> {
            DurationSeconds::from_millis(self.default_f64(name, get)?)
        };
        Ok(CatalogDefaults {
            operating_voltage_v: self.default_f64("operating_voltage_v", |d| d.operating_voltage_v)?,
            total_time: s("t_s", |d| d.t_s)?,
            tx_power_dbm: self
                .layers()
                .iter()
                .find_map(|l| l.defaults.p_tx_dbm)
                .ok_or_else(|| Error::MissingCatalogEntry("defaults.p_tx_dbm".into()))?,
            t_fast_adv: s("t_fast_adv_s", |d| d.t_fast_adv_s)?,
            t_slow_adv: s("t_slow_adv_s", |d| d.t_slow_adv_s)?,
            t_ble_conn: s("t_ble_conn_s", |d| d.t_ble_conn_s)?,
            t_fast_adv_int: ms("t_fast_adv_int_ms", |d| d.t_fast_adv_int_ms)?,
            t_slow_adv_int: ms("t_slow_adv_int_ms", |d| d.t_slow_adv_int_ms)?,
            t_adv_event: ms("t_adv_event_ms", |d| d.t_adv_event_ms)?,
            t_conn_int: ms("t_conn_int_ms", |d| d.t_conn_int_ms)?,
            t_conn_event: ms("t_conn_event_ms", |d| d.t_conn_event_ms)?,
            t_idle_start: s("t_idle_start_s", |d| d.t_idle_start_s)?,
            t_sens: ms("t_sens_ms", |d| d.t_sens_ms)?,
            t_idle_sens: ms("t_idle_sens_ms", |d| d.t_idle_sens_ms)?,
            t_eink_unoptimized: s("t_eink_unoptimized_s", |d| d.t_eink_unoptimized_s)?,
            t_idle_eink: s("t_idle_eink_s", |d| d.t_idle_eink_s)?,
            t_idle_nbvlc: s("t_idle_nbvlc_s", |d| d.t_idle_nbvlc_s)?,
        })
    }

    fn mode_value(
        &self,
        mode: OperatingMode,
        name: &str,
        get: impl Fn(&ModeRaw) -> (Option<f64>, Option<f64>),
    ) -> Result<Option<OperationValue>> {
        let mut current = None;
        let mut duration_ms = None;
        for layer in self.layers() {
            if let Some(m) = layer.modes.get(&mode) {
                let (i, t) = get(m);
                current = current.or(i);
                duration_ms = duration_ms.or(t);
            }
        }
        match (current, duration_ms) {
            (Some(i), Some(t)) => op_ms(i, t).map(Some),
            (None, None) => Ok(None),
            _ => Err(Error::MissingCatalogEntry(format!("modes.{mode}.{name}"))),
        }
    }

    /// Startup, NBVLC and optimized E-ink values for a BLE-connected mode.
    pub fn mode_constants(&self, mode: OperatingMode) -> Result<ModeConstants> {
        if mode == OperatingMode::VeryLowPower {
            return Err(Error::UnsupportedMode(mode.to_string()));
        }
        let missing = |what: &str| Error::MissingCatalogEntry(format!("modes.{mode}.{what}"));
        Ok(ModeConstants {
            startup: self
                .mode_value(mode, "startup", |m| (m.i_start_ma, m.t_start_ms))?
                .ok_or_else(|| missing("startup"))?,
            nbvlc: self
                .mode_value(mode, "nbvlc", |m| (m.i_nbvlc_ma, m.t_nbvlc_ms))?
                .ok_or_else(|| missing("nbvlc"))?,
            eink_optimized: self.mode_value(mode, "eink_optimized", |m| {
                (m.i_eink_optimized_ma, m.t_eink_optimized_ms)
            })?,
        })
    }

    /// Idle inflation factor, overridable per (mode, phase).
    pub fn idle_factor(&self, mode: OperatingMode, label: PhaseLabel) -> Result<f64> {
        if mode == OperatingMode::VeryLowPower {
            return Err(Error::UnsupportedMode(mode.to_string()));
        }
        if !label.is_idle() {
            return Err(Error::NotAnIdlePhase(label.to_string()));
        }
        self.layers()
            .iter()
            .find_map(|l| l.idle_factors.get(&(mode, label)).copied())
            .ok_or_else(|| Error::MissingCatalogEntry(format!("idle_factors.{mode}.{label}")))
    }

    /// Advertising event/idle currents for a TX power level.
    pub fn lookup_adv(&self, tx_power_dbm: i32) -> Result<AdvLookup> {
        let raw = self
            .layers()
            .iter()
            .find_map(|l| l.adv.get(&tx_power_dbm).copied())
            .ok_or_else(|| Error::MissingCatalogEntry(format!("advertising at {tx_power_dbm:+} dBm")))?;
        Ok(AdvLookup {
            event_current: ma(raw.i_adv_event_ma)?,
            idle_current: ma(raw.i_adv_idle_ma)?,
            event_duration: self.defaults()?.t_adv_event,
            measured_interval_current: raw.i_adv_int_ma.map(ma).transpose()?,
        })
    }

    /// Connected-only event/idle currents and timing for a radio key.
    pub fn lookup_ble_conn(&self, key: BleRadioKey) -> Result<ConnLookup> {
        if key.mode == OperatingMode::VeryLowPower {
            return Err(Error::UnsupportedMode(key.mode.to_string()));
        }
        let gk = key.grid_key();
        let raw = self
            .layers()
            .iter()
            .find_map(|l| {
                l.conn
                    .get(&gk)
                    .or_else(|| l.conn_any_interval.get(&(key.mode, key.tx_power_dbm)))
                    .copied()
            })
            .ok_or_else(|| Error::MissingCatalogEntry(format!("BLE connection {key}")))?;
        let event_duration = self.defaults()?.t_conn_event;
        if key.connection_interval.value() < event_duration.value() {
            return Err(Error::InvalidCombination(format!(
                "connection interval {} ms shorter than the connection event",
                key.connection_interval.millis()
            )));
        }
        let measured_here = self
            .layers()
            .iter()
            .find_map(|l| l.measured_interval)
            .is_some_and(|m| m == gk.1)
            || raw.t_conn_int_ms.is_some();
        Ok(ConnLookup {
            event_current: ma(raw.i_conn_event_ma)?,
            idle_current: ma(raw.i_conn_idle_ma)?,
            event_duration,
            idle_duration: key.connection_interval.saturating_sub(event_duration),
            measured_interval_current: if measured_here {
                raw.i_conn_int_ma.map(ma).transpose()?
            } else {
                None
            },
        })
    }

    /// Per-cell cyclic currents (sensing, unoptimized E-ink, idles).
    pub fn lookup_cyclic(&self, key: BleRadioKey) -> Result<CyclicCurrents> {
        let raw = self
            .layers()
            .iter()
            .find_map(|l| l.cyclic.get(&key.grid_key()).copied())
            .ok_or_else(|| Error::MissingCatalogEntry(format!("cyclic currents {key}")))?;
        Ok(CyclicCurrents {
            sensing: ma(raw.i_sens_ma)?,
            eink_unoptimized: ma(raw.i_eink_ma)?,
            idle_eink: ma(raw.i_idle_eink_ma)?,
            idle_sens: ma(raw.i_idle_sens_ma)?,
            overall: raw.overall_ma.map(ma).transpose()?,
        })
    }

    /// Idle-after-E-ink duration the cyclic cells were measured with.
    pub fn cyclic_measurement_idle_eink(&self) -> Option<DurationSeconds> {
        self.layers()
            .iter()
            .find_map(|l| l.cyclic_timing)
            .and_then(|t| DurationSeconds::new(t.t_idle_eink_s).ok())
    }

    /// Very-low-power operation table column for a hardware configuration.
    pub fn lookup_vlp(&self, hw: HardwareConfig) -> Result<VlpOperations> {
        hw.validate()?;
        let key = (hw.cut_state(), hw.nbvlc_enabled);
        self.layers()
            .iter()
            .find_map(|l| l.vlp.get(&key).copied())
            .ok_or_else(|| {
                Error::MissingCatalogEntry(format!(
                    "very-low-power operations ({}, nbvlc={})",
                    key.0.as_str(),
                    key.1
                ))
            })?
            .convert()
    }

    /// All (mode, interval, TX power) keys present in the cyclic tables.
    pub fn cyclic_grid(&self) -> Vec<BleRadioKey> {
        let mut keys: Vec<GridKey> = self
            .layers()
            .iter()
            .flat_map(|l| l.cyclic.keys().copied())
            .collect();
        keys.sort();
        keys.dedup();
        keys.into_iter()
            .map(|(mode, ik, tx)| BleRadioKey {
                mode,
                connection_interval: DurationSeconds::from_millis(ik.millis()).expect("positive"),
                tx_power_dbm: tx,
            })
            .collect()
    }

    /// All connection keys resolvable without overrides.
    pub fn connection_grid(&self) -> Vec<BleRadioKey> {
        let mut keys: Vec<GridKey> = self
            .layers()
            .iter()
            .flat_map(|l| l.conn.keys().copied())
            .collect();
        keys.sort();
        keys.dedup();
        keys.into_iter()
            .map(|(mode, ik, tx)| BleRadioKey {
                mode,
                connection_interval: DurationSeconds::from_millis(ik.millis()).expect("positive"),
                tx_power_dbm: tx,
            })
            .collect()
    }

    pub fn advertising_powers(&self) -> Vec<i32> {
        let mut p: Vec<i32> = self.layers().iter().flat_map(|l| l.adv.keys().copied()).collect();
        p.sort();
        p.dedup();
        p
    }

    /// Fully populated built-in scenario for a mode and hardware build.
    pub fn default_scenario(&self, mode: OperatingMode, hw: HardwareConfig) -> Result<ScenarioProfile> {
        hw.validate()?;
        ScenarioConfig::for_mode(mode, hw).resolve(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(mode: OperatingMode, ms: f64, tx: i32) -> BleRadioKey {
        BleRadioKey::new(mode, ms, tx).unwrap()
    }

    #[test]
    fn connection_lookup_examples() {
        let cat = ParameterCatalog::builtin();
        let c = cat.lookup_ble_conn(key(OperatingMode::Normal, 45.0, 0)).unwrap();
        assert_eq!(c.event_current.value(), 7.31);
        assert_eq!(c.idle_current.value(), 5.43);
        assert!((c.event_duration.millis() - 2.14).abs() < 1e-12);
        assert!((c.idle_duration.millis() - 42.86).abs() < 1e-9);
        assert_eq!(c.measured_interval_current.unwrap().value(), 5.51);

        let c = cat.lookup_ble_conn(key(OperatingMode::LowPower, 45.0, 8)).unwrap();
        assert_eq!(c.event_current.value(), 4.69);
        assert_eq!(c.idle_current.value(), 1.33);

        let c = cat.lookup_ble_conn(key(OperatingMode::Normal, 11.25, 8)).unwrap();
        assert_eq!(c.event_current.value(), 8.58);
        assert!(c.measured_interval_current.is_none());

        let err = cat.lookup_ble_conn(key(OperatingMode::Normal, 37.0, 0)).unwrap_err();
        assert!(matches!(err, Error::MissingCatalogEntry(ref s) if s.contains("37")), "{err}");
        assert!(cat.lookup_ble_conn(key(OperatingMode::Normal, 45.0, 2)).is_err());
    }

    #[test]
    fn advertising_lookup_examples() {
        let cat = ParameterCatalog::builtin();
        let a = cat.lookup_adv(0).unwrap();
        assert_eq!((a.event_current.value(), a.idle_current.value()), (9.65, 5.46));
        assert!((a.event_duration.millis() - 4.18).abs() < 1e-12);
        let a = cat.lookup_adv(8).unwrap();
        assert_eq!((a.event_current.value(), a.idle_current.value()), (15.78, 5.48));
        assert!(matches!(cat.lookup_adv(-4), Err(Error::MissingCatalogEntry(_))));
    }

    #[test]
    fn hardware_invariant() {
        let bad = HardwareConfig {
            u6_cut: false,
            u9_cut: true,
            nbvlc_enabled: true,
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidCombination(_))));
        assert!(HardwareConfig::both_cut().validate().is_ok());
        let cat = ParameterCatalog::builtin();
        assert!(matches!(cat.lookup_vlp(bad), Err(Error::InvalidCombination(_))));
    }

    #[test]
    fn deep_sleep_distinctions_are_kept() {
        let cat = ParameterCatalog::builtin();
        let sleep: Vec<f64> = [(false, false), (true, false), (false, true), (true, true)]
            .into_iter()
            .map(|(u6, u9)| {
                cat.lookup_vlp(HardwareConfig {
                    u6_cut: u6,
                    u9_cut: u9,
                    nbvlc_enabled: false,
                })
                .unwrap()
                .deep_sleep
                .current
                .value()
            })
            .collect();
        assert_eq!(sleep, vec![0.416, 0.345, 0.076, 0.005]);
    }

    #[test]
    fn override_shadows_and_restores() {
        let cat = ParameterCatalog::builtin();
        let k = key(OperatingMode::Normal, 45.0, 0);
        let before = cat.lookup_ble_conn(k).unwrap();
        let shadowed = cat.with_override(CatalogOverride::Connection {
            key: k,
            event_current: CurrentMilliamp::new(9.0).unwrap(),
            idle_current: CurrentMilliamp::new(5.0).unwrap(),
        });
        assert_eq!(shadowed.lookup_ble_conn(k).unwrap().event_current.value(), 9.0);
        // original untouched
        assert_eq!(cat.lookup_ble_conn(k).unwrap(), before);
        let restored = shadowed.without_override(OverrideKey::Connection(k));
        assert_eq!(restored.lookup_ble_conn(k).unwrap(), before);
        assert!(!restored.has_overrides());
    }

    #[test]
    fn off_grid_interval_resolves_with_override() {
        let cat = ParameterCatalog::builtin();
        let k = key(OperatingMode::Normal, 100.0, 0);
        assert!(cat.lookup_ble_conn(k).is_err());
        let cat = cat
            .with_overlay_str(
                r#"
                [[connection.entry]]
                mode = "normal"
                p_tx_dbm = 0
                t_conn_int_ms = 100.0
                i_conn_idle_ma = 5.4
                i_conn_event_ma = 7.3
                "#,
            )
            .unwrap();
        let c = cat.lookup_ble_conn(k).unwrap();
        assert_eq!(c.idle_current.value(), 5.4);
        assert!((c.idle_duration.millis() - 97.86).abs() < 1e-9);
    }

    #[test]
    fn idle_factor_override() {
        let cat = ParameterCatalog::builtin();
        assert_eq!(cat.idle_factor(OperatingMode::LowPower, PhaseLabel::IdleEink).unwrap(), 1.14);
        let cat2 = cat.with_override(CatalogOverride::IdleFactor {
            mode: OperatingMode::LowPower,
            label: PhaseLabel::IdleEink,
            factor: 1.2,
        });
        assert_eq!(cat2.idle_factor(OperatingMode::LowPower, PhaseLabel::IdleEink).unwrap(), 1.2);
        assert_eq!(cat2.idle_factor(OperatingMode::LowPower, PhaseLabel::IdleNbvlc).unwrap(), 1.14);
    }

    #[test]
    fn overlay_rejects_unknown_keys() {
        let err = ParameterCatalog::builtin()
            .with_overlay_str("[defaults]\nt_bogus = 1.0\n")
            .unwrap_err();
        assert!(matches!(err, Error::Config(ref s) if s.contains("t_bogus")), "{err}");
    }
}
