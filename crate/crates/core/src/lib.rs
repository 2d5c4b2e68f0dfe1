//! Duty-cycle charge and energy models for an intermittently operating
//! BLE sensor node, with a trace-integration oracle to check them.
//!
//! ```
//! use duty_energy::{predict, HardwareConfig, OperatingMode, ParameterCatalog};
//!
//! let catalog = ParameterCatalog::builtin();
//! let scenario = catalog
//!     .default_scenario(OperatingMode::Normal, HardwareConfig::default())
//!     .unwrap();
//! let report = predict(&scenario).unwrap();
//! assert!((report.q_total_mah() - 6.22).abs() < 0.01);
//! ```

pub mod catalog;
pub mod config;
pub mod error;
pub mod model;
pub mod presets;
pub mod scenario;
pub mod sweep;
pub mod trace;
pub mod units;
pub mod validation;

pub use catalog::{BleRadioKey, CatalogOverride, HardwareConfig, OperatingMode, OverrideKey, ParameterCatalog};
pub use config::{ConfigTable, IdleCurrentSource, ScenarioConfig};
pub use error::{Error, Result};
pub use model::{
    idle_inflation_factor, interval_average_current, phase_charge, repetition_count, IntervalSpec, PhaseLabel,
    PhaseSpec,
};
pub use scenario::{
    energy_report, layout, partial_cycle_charge, predict, total_charge_connected, total_charge_very_low_power,
    ChargeResult, CycleAccounting, EinkVariant, EnergyReport, ScenarioProfile,
};
pub use sweep::{run_sweep, SweepAxis, SweepRow};
pub use trace::{
    integrate_trace, label_segments, parse_trace_csv, reconstruct_from_segments, segment_trace, synthesize_trace,
    write_trace_csv, CurrentTrace, PhaseSegment, SegmentConfig, TraceOrigin,
};
pub use units::{ChargeMilliampSecond, CurrentMilliamp, DurationSeconds, EnergyMilliwattHour, Volts};
pub use validation::{accuracy_percent, bundled_suite, load_suite, run_validation_suite, ValidationCase, ValidationReport};
