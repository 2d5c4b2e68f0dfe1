//! Python bindings. The module is importable as `duty_energy`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ::duty_energy as core;
use core::presets::preset_source;
use core::{ConfigTable, OperatingMode, SweepAxis};
use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(duty_energy, DutyEnergyError, PyValueError, "Model, catalog or input error.");

fn err(e: core::Error) -> PyErr {
    DutyEnergyError::new_err(e.to_string())
}

/// Measured parameter catalog, optionally with a user overlay.
#[pyclass(name = "Catalog", module = "duty_energy", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Catalog(core::ParameterCatalog);

#[pymethods]
impl Catalog {
    #[new]
    #[pyo3(signature = (overlay = None))]
    fn new(overlay: Option<&str>) -> PyResult<Self> {
        let base = core::ParameterCatalog::builtin();
        Ok(Self(match overlay {
            Some(src) => base.with_overlay_str(src).map_err(err)?,
            None => base,
        }))
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        let src = std::fs::read_to_string(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Self::new(Some(&src))
    }

    /// `(mode, interval_ms, tx_dbm)` for every cyclic-table cell.
    fn cyclic_grid(&self) -> Vec<(String, f64, i32)> {
        self.0
            .cyclic_grid()
            .into_iter()
            .map(|k| (k.mode.to_string(), k.connection_interval.millis(), k.tx_power_dbm))
            .collect()
    }

    /// Average current (mA) of one connection interval from its event/idle split.
    fn connection_interval_current(&self, mode: &str, interval_ms: f64, tx_dbm: i32) -> PyResult<f64> {
        let mode: OperatingMode = mode.parse().map_err(err)?;
        let key = core::BleRadioKey::new(mode, interval_ms, tx_dbm).map_err(err)?;
        let c = self.0.lookup_ble_conn(key).map_err(err)?;
        let spec = core::IntervalSpec {
            event_current: c.event_current,
            event_duration: c.event_duration,
            idle_current: c.idle_current,
            idle_duration: c.idle_duration,
        };
        Ok(core::interval_average_current(&spec).map_err(err)?.value())
    }
}

fn catalog_or_default(c: Option<&Catalog>) -> core::ParameterCatalog {
    c.map_or_else(core::ParameterCatalog::builtin, |c| c.0.clone())
}

/// A resolved scenario: every phase current and duration known.
#[pyclass(name = "Scenario", module = "duty_energy", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Scenario(core::ScenarioProfile);

fn table_from(src_or_preset: &str) -> PyResult<ConfigTable> {
    let src = preset_source(src_or_preset).unwrap_or(src_or_preset);
    ConfigTable::parse(src, None).map_err(err)
}

#[pymethods]
impl Scenario {
    /// Builds a scenario from a bundled preset name or TOML config text.
    #[new]
    #[pyo3(signature = (config, catalog = None))]
    fn new(config: &str, catalog: Option<&Catalog>) -> PyResult<Self> {
        let cfg = table_from(config)?.to_config().map_err(err)?;
        Ok(Self(cfg.resolve(&catalog_or_default(catalog)).map_err(err)?))
    }

    #[staticmethod]
    fn from_file(path: PathBuf, catalog: Option<&Catalog>) -> PyResult<Self> {
        let cfg = ConfigTable::from_file(&path).and_then(|t| t.to_config()).map_err(err)?;
        Ok(Self(cfg.resolve(&catalog_or_default(catalog)).map_err(err)?))
    }

    /// Catalog defaults for `normal`, `low_power` or `very_low_power`.
    #[staticmethod]
    #[pyo3(signature = (mode, catalog = None))]
    fn default(mode: &str, catalog: Option<&Catalog>) -> PyResult<Self> {
        let mode: OperatingMode = mode.parse().map_err(err)?;
        let hw = match mode {
            OperatingMode::VeryLowPower => core::HardwareConfig::both_cut(),
            _ => core::HardwareConfig::default(),
        };
        Ok(Self(catalog_or_default(catalog).default_scenario(mode, hw).map_err(err)?))
    }

    #[getter]
    fn name(&self) -> Option<String> {
        self.0.name.clone()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.0.mode.as_str()
    }

    #[getter]
    fn total_time_s(&self) -> f64 {
        self.0.total_time.value()
    }

    #[getter]
    fn t_init_s(&self) -> f64 {
        self.0.t_init().value()
    }

    #[getter]
    fn t_cycle_s(&self) -> f64 {
        self.0.t_one_cycle().value()
    }

    /// `(label, current_ma, duration_s)` for the init phases, then the cycle.
    fn phases(&self) -> (Vec<(&'static str, f64, f64)>, Vec<(&'static str, f64, f64)>) {
        let f = |ps: &[core::PhaseSpec]| {
            ps.iter()
                .map(|p| (p.label.as_str(), p.current.value(), p.duration.value()))
                .collect()
        };
        (f(self.0.init_phases()), f(self.0.cycle_phases()))
    }

    fn with_total_time(&self, seconds: f64) -> PyResult<Self> {
        let t = core::DurationSeconds::new(seconds).map_err(err)?;
        Ok(Self(self.0.with_total_time(t).map_err(err)?))
    }

    fn predict(&self) -> PyResult<EnergyReport> {
        predict(self)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, mode='{}', total_time_s={})",
            self.0.name.as_deref().unwrap_or(""),
            self.0.mode,
            self.0.total_time.value()
        )
    }
}

/// Charge, energy and average current of one run.
#[pyclass(name = "EnergyReport", module = "duty_energy", frozen)]
struct EnergyReport(core::EnergyReport);

#[pymethods]
impl EnergyReport {
    #[getter]
    fn q_total_mah(&self) -> f64 {
        self.0.q_total_mah()
    }
    #[getter]
    fn q_total_mas(&self) -> f64 {
        self.0.q_total.value()
    }
    #[getter]
    fn q_total_coulomb(&self) -> f64 {
        self.0.q_total_coulomb()
    }
    #[getter]
    fn p_total_mwh(&self) -> f64 {
        self.0.p_total_mwh()
    }
    #[getter]
    fn p_total_joule(&self) -> f64 {
        self.0.p_total_joule()
    }
    #[getter]
    fn i_overall_ma(&self) -> f64 {
        self.0.i_overall.value()
    }
    #[getter]
    fn i_1_ma(&self) -> f64 {
        self.0.i_1.value()
    }
    #[getter]
    fn i_2_ma(&self) -> f64 {
        self.0.i_2.value()
    }
    #[getter]
    fn truncated_init(&self) -> bool {
        self.0.truncated_init
    }

    /// Charge per phase in mA·s.
    #[getter]
    fn breakdown(&self) -> BTreeMap<&'static str, f64> {
        self.0.breakdown.iter().map(|(k, v)| (k.as_str(), v.value())).collect()
    }

    #[getter]
    fn accounting<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let a = &self.0.accounting;
        let d = PyDict::new(py);
        d.set_item("t_init", a.t_init)?;
        d.set_item("t_one_cycle", a.t_one_cycle)?;
        d.set_item("n_cycles_real", a.n_cycles_real)?;
        d.set_item("n_full_cycles", a.n_full_cycles)?;
        d.set_item("t_full_cycles", a.t_full_cycles)?;
        d.set_item("t_partial", a.t_partial)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "EnergyReport(q_total_mah={:.6}, p_total_mwh={:.6}, i_overall_ma={:.6})",
            self.0.q_total_mah(),
            self.0.p_total_mwh(),
            self.0.i_overall.value()
        )
    }
}

#[pyfunction]
fn predict(scenario: &Scenario) -> PyResult<EnergyReport> {
    Ok(EnergyReport(core::predict(&scenario.0).map_err(err)?))
}

#[pyfunction]
fn accuracy_percent(predicted_mwh: f64, measured_mwh: f64) -> PyResult<f64> {
    core::accuracy_percent(predicted_mwh, measured_mwh).map_err(err)
}

fn validation_dict<'py>(py: Python<'py>, r: &core::ValidationReport) -> PyResult<Bound<'py, PyDict>> {
    let cases = r
        .cases
        .iter()
        .map(|c| {
            let d = PyDict::new(py);
            d.set_item("name", &c.name)?;
            d.set_item("mode", &c.mode)?;
            d.set_item("measured_mwh", c.measured_mwh)?;
            d.set_item("predicted_mwh", c.predicted_mwh)?;
            d.set_item("accuracy_pct", c.accuracy_pct)?;
            d.set_item("reference_prediction_mwh", c.reference_prediction_mwh)?;
            d.set_item("error", &c.error)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let g = &r.aggregate;
    let out = PyDict::new(py);
    out.set_item("cases", cases)?;
    out.set_item("n_errors", g.n_errors)?;
    out.set_item("min_accuracy_pct", g.min_accuracy_pct)?;
    out.set_item("mean_accuracy_pct", g.mean_accuracy_pct)?;
    out.set_item("threshold_pct", g.threshold_pct)?;
    out.set_item("passed", g.pass)?;
    Ok(out)
}

/// Runs the bundled suite, or the suite at `path` (index, case or directory).
#[pyfunction]
#[pyo3(signature = (path = None, threshold_pct = None, catalog = None))]
fn validate<'py>(
    py: Python<'py>,
    path: Option<PathBuf>,
    threshold_pct: Option<f64>,
    catalog: Option<&Catalog>,
) -> PyResult<Bound<'py, PyDict>> {
    let (cases, file_threshold) = match path {
        Some(p) => {
            let s = core::load_suite(&p).map_err(err)?;
            (s.cases, s.threshold_pct)
        }
        None => (core::bundled_suite().map_err(err)?, None),
    };
    let threshold = threshold_pct
        .or(file_threshold)
        .unwrap_or(core::validation::DEFAULT_THRESHOLD_PCT);
    let report = py.detach(|| core::run_validation_suite(&cases, &catalog_or_default(catalog), threshold));
    validation_dict(py, &report)
}

/// Evaluates `config` (preset or TOML text) over the cartesian product of
/// `vary`, given as `[(key, [values...]), ...]`; first axis varies slowest.
#[pyfunction]
#[pyo3(signature = (config, vary, catalog = None))]
fn sweep(
    config: &str,
    vary: Vec<(String, Vec<String>)>,
    catalog: Option<&Catalog>,
) -> PyResult<Vec<(Vec<(String, String)>, Option<EnergyReport>, Option<String>)>> {
    let table = table_from(config)?;
    let axes: Vec<SweepAxis> = vary.into_iter().map(|(key, values)| SweepAxis { key, values }).collect();
    let rows = core::run_sweep(&table, &axes, &catalog_or_default(catalog)).map_err(err)?;
    Ok(rows
        .into_iter()
        .map(|r| (r.point, r.report.map(EnergyReport), r.error))
        .collect())
}

/// Current trace sampled in time (mA against seconds).
#[pyclass(name = "Trace", module = "duty_energy", frozen)]
struct Trace(core::CurrentTrace);

#[pymethods]
impl Trace {
    #[staticmethod]
    #[pyo3(signature = (scenario, rate_hz = 10_000.0))]
    fn synthesize(py: Python<'_>, scenario: &Scenario, rate_hz: f64) -> PyResult<Self> {
        let s = scenario.0.clone();
        Ok(Self(py.detach(|| core::synthesize_trace(&s, rate_hz)).map_err(err)?))
    }

    /// Uniformly sampled trace starting at `t0`.
    #[staticmethod]
    #[pyo3(signature = (currents_ma, rate_hz, t0 = 0.0))]
    fn from_uniform(currents_ma: Vec<f64>, rate_hz: f64, t0: f64) -> PyResult<Self> {
        core::CurrentTrace::from_uniform(t0, rate_hz, &currents_ma, core::TraceOrigin::Imported)
            .map(Self)
            .map_err(err)
    }

    /// Trace from `(time_s, current_ma)` pairs.
    #[staticmethod]
    fn from_samples(samples: Vec<(f64, f64)>) -> PyResult<Self> {
        core::CurrentTrace::from_samples(&samples, core::TraceOrigin::Imported)
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn read_csv(path: PathBuf) -> PyResult<Self> {
        let bytes = std::fs::read(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        core::parse_trace_csv(&bytes).map(Self).map_err(err)
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        let f = std::fs::File::create(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        core::write_trace_csv(&self.0, std::io::BufWriter::new(f)).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn duration_s(&self) -> f64 {
        self.0.duration()
    }

    #[getter]
    fn sample_rate_hz(&self) -> Option<f64> {
        self.0.sample_rate()
    }

    fn samples(&self) -> Vec<(f64, f64)> {
        self.0.samples().collect()
    }

    /// Left-Riemann charge in mA·s.
    fn integrate(&self) -> PyResult<f64> {
        Ok(core::integrate_trace(&self.0).map_err(err)?.value())
    }

    #[pyo3(signature = (amplitude, seed = 0))]
    fn with_noise(&self, amplitude: f64, seed: u64) -> PyResult<Self> {
        self.0.with_uniform_noise(amplitude, seed).map(Self).map_err(err)
    }

    /// Constant-current segments as dicts; labelled when `label_with` is given.
    #[pyo3(signature = (hysteresis_frac = 0.05, band_ma = None, thresholds = None, min_duration_s = 0.010, label_with = None))]
    fn segment<'py>(
        &self,
        py: Python<'py>,
        hysteresis_frac: f64,
        band_ma: Option<f64>,
        thresholds: Option<Vec<f64>>,
        min_duration_s: f64,
        label_with: Option<&Scenario>,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let config = core::SegmentConfig {
            hysteresis_frac,
            band_ma,
            thresholds,
            min_segment_duration_s: min_duration_s,
        };
        let mut segs = py.detach(|| core::segment_trace(&self.0, &config)).map_err(err)?;
        if let Some(s) = label_with {
            let phases: Vec<_> = s.0.init_phases().iter().chain(s.0.cycle_phases()).copied().collect();
            core::label_segments(&mut segs, &phases);
        }
        segs.iter()
            .map(|g| {
                let d = PyDict::new(py);
                d.set_item("label", g.label.map(|l| l.as_str()))?;
                d.set_item("start_s", g.start)?;
                d.set_item("end_s", g.end)?;
                d.set_item("mean_current_ma", g.mean_current)?;
                d.set_item("charge_mas", g.charge)?;
                d.set_item("first_sample", g.first_sample)?;
                d.set_item("n_samples", g.n_samples)?;
                Ok(d)
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Trace(samples={}, duration_s={})", self.0.len(), self.0.duration())
    }
}

#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    core::presets::preset_names().collect()
}

#[pymodule]
#[pyo3(name = "duty_energy")]
fn duty_energy_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DutyEnergyError", m.py().get_type::<DutyEnergyError>())?;
    m.add_class::<Catalog>()?;
    m.add_class::<Scenario>()?;
    m.add_class::<EnergyReport>()?;
    m.add_class::<Trace>()?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy_percent, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    Ok(())
}
