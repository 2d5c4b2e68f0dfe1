//! Cycle layout and total-charge computation for all operating modes.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::catalog::{BleRadioKey, HardwareConfig, OperatingMode};
use crate::error::{Error, Result};
use crate::model::{PhaseLabel, PhaseSpec};
use crate::units::{ChargeMilliampSecond, CurrentMilliamp, DurationSeconds, EnergyMilliwattHour, Volts};

/// Residual partial-cycle time below this is treated as exact tiling.
const TILING_EPS_S: f64 = 1e-10;

/// Init phase order for the BLE-connected modes.
pub const CONNECTED_INIT_ORDER: [PhaseLabel; 5] = [
    PhaseLabel::FastAdv,
    PhaseLabel::SlowAdv,
    PhaseLabel::BleConnIdle,
    PhaseLabel::Startup,
    PhaseLabel::IdleStart,
];

/// Cycle phase order for the BLE-connected modes.
pub const CONNECTED_CYCLE_ORDER: [PhaseLabel; 6] = [
    PhaseLabel::Sensing,
    PhaseLabel::IdleSens,
    PhaseLabel::Eink,
    PhaseLabel::IdleEink,
    PhaseLabel::Nbvlc,
    PhaseLabel::IdleNbvlc,
];

/// Very-low-power cycle order; the three NBVLC-related phases only appear
/// when NBVLC is enabled.
pub fn very_low_power_cycle_order(nbvlc: bool) -> Vec<PhaseLabel> {
    let mut v = vec![
        PhaseLabel::Startup,
        PhaseLabel::IdleStart,
        PhaseLabel::Sensing,
        PhaseLabel::IdleSens,
        PhaseLabel::Eink,
    ];
    if nbvlc {
        v.extend([PhaseLabel::IdleEink, PhaseLabel::Nbvlc, PhaseLabel::IdleNbvlc]);
    }
    v.push(PhaseLabel::DeepSleep);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EinkVariant {
    #[default]
    Unoptimized,
    Optimized,
    Disabled,
}

/// BLE timing that produced the advertising and connection phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleTiming {
    pub radio: BleRadioKey,
    pub t_fast_adv_int: DurationSeconds,
    pub t_slow_adv_int: DurationSeconds,
    pub i_conn_int: CurrentMilliamp,
}

/// Reference values attached to a validation case.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReferenceValues {
    pub measured_energy_mwh: Option<f64>,
    pub prediction_mwh: Option<f64>,
    pub accuracy_pct: Option<f64>,
}

/// A fully resolved scenario: every phase current and duration is known.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioProfile {
    pub name: Option<String>,
    pub mode: OperatingMode,
    pub hardware: HardwareConfig,
    pub eink: EinkVariant,
    pub operating_voltage: Volts,
    pub total_time: DurationSeconds,
    pub ble: Option<BleTiming>,
    init_phases: Vec<PhaseSpec>,
    cycle_phases: Vec<PhaseSpec>,
    pub reference: ReferenceValues,
}

impl ScenarioProfile {
    /// Builds a profile from explicit phase lists, checking phase order.
    pub fn new(
        mode: OperatingMode,
        hardware: HardwareConfig,
        operating_voltage: Volts,
        total_time: DurationSeconds,
        init_phases: Vec<PhaseSpec>,
        cycle_phases: Vec<PhaseSpec>,
    ) -> Result<Self> {
        if operating_voltage.value() <= 0.0 {
            return Err(Error::InvalidScenario("operating voltage must be positive".into()));
        }
        if total_time.value() <= 0.0 {
            return Err(Error::InvalidScenario("total time must be positive".into()));
        }
        hardware.validate()?;
        let (want_init, want_cycle): (Vec<PhaseLabel>, Vec<PhaseLabel>) = match mode {
            OperatingMode::VeryLowPower => (vec![], very_low_power_cycle_order(hardware.nbvlc_enabled)),
            _ => (CONNECTED_INIT_ORDER.to_vec(), CONNECTED_CYCLE_ORDER.to_vec()),
        };
        check_order("init", &init_phases, &want_init)?;
        check_order("cycle", &cycle_phases, &want_cycle)?;
        Ok(Self {
            name: None,
            mode,
            hardware,
            eink: EinkVariant::default(),
            operating_voltage,
            total_time,
            ble: None,
            init_phases,
            cycle_phases,
            reference: ReferenceValues::default(),
        })
    }

    pub fn init_phases(&self) -> &[PhaseSpec] {
        &self.init_phases
    }

    pub fn cycle_phases(&self) -> &[PhaseSpec] {
        &self.cycle_phases
    }

    /// Finds a phase by label, init phases first.
    pub fn phase(&self, label: PhaseLabel) -> Option<&PhaseSpec> {
        self.init_phases
            .iter()
            .chain(self.cycle_phases.iter())
            .find(|p| p.label == label)
    }

    /// Returns a copy with a different total operating time.
    pub fn with_total_time(&self, total_time: DurationSeconds) -> Result<Self> {
        if total_time.value() <= 0.0 {
            return Err(Error::InvalidScenario("total time must be positive".into()));
        }
        let mut s = self.clone();
        s.total_time = total_time;
        Ok(s)
    }

    /// Returns a copy where `f` has been applied to the phase labelled
    /// `label` (init and cycle).
    pub fn map_phase(&self, label: PhaseLabel, f: impl Fn(&mut PhaseSpec)) -> Self {
        let mut s = self.clone();
        for p in s.init_phases.iter_mut().chain(s.cycle_phases.iter_mut()) {
            if p.label == label {
                f(p);
            }
        }
        s
    }

    pub fn t_init(&self) -> DurationSeconds {
        self.init_phases.iter().map(|p| p.duration).sum()
    }

    pub fn t_one_cycle(&self) -> DurationSeconds {
        self.cycle_phases.iter().map(|p| p.duration).sum()
    }
}

fn check_order(what: &str, phases: &[PhaseSpec], want: &[PhaseLabel]) -> Result<()> {
    let got: Vec<PhaseLabel> = phases.iter().map(|p| p.label).collect();
    if got != want {
        let fmt = |v: &[PhaseLabel]| v.iter().map(|l| l.as_str()).collect::<Vec<_>>().join(", ");
        return Err(Error::InvalidScenario(format!(
            "{what} phases must be [{}], got [{}]",
            fmt(want),
            fmt(&got)
        )));
    }
    Ok(())
}

/// How the operating time splits into init, full cycles and a partial cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycleAccounting {
    pub t_init: f64,
    pub t_one_cycle: f64,
    pub n_cycles_real: f64,
    pub n_full_cycles: u64,
    pub t_full_cycles: f64,
    pub t_partial: f64,
}

/// Splits the scenario's operating time. Fails with
/// [`Error::InitExceedsTotal`] when the init sequence does not fit.
pub fn layout(scenario: &ScenarioProfile) -> Result<CycleAccounting> {
    let total = scenario.total_time.value();
    let t_init = scenario.t_init().value();
    if total < t_init {
        return Err(Error::InitExceedsTotal { t_init, total });
    }
    let cycle = scenario.t_one_cycle().value();
    let remaining = total - t_init;
    if cycle <= 0.0 {
        if remaining > TILING_EPS_S {
            return Err(Error::EmptyCycle { remaining });
        }
        return Ok(CycleAccounting {
            t_init,
            t_one_cycle: 0.0,
            n_cycles_real: 0.0,
            n_full_cycles: 0,
            t_full_cycles: 0.0,
            t_partial: 0.0,
        });
    }
    let n_real = remaining / cycle;
    let mut n_full = n_real.floor();
    let mut t_partial = remaining - n_full * cycle;
    // floating-point floor correction
    if t_partial < 0.0 {
        n_full -= 1.0;
        t_partial += cycle;
    }
    if t_partial >= cycle - TILING_EPS_S {
        n_full += 1.0;
        t_partial = (t_partial - cycle).max(0.0);
    }
    if t_partial < TILING_EPS_S {
        t_partial = 0.0;
    }
    Ok(CycleAccounting {
        t_init,
        t_one_cycle: cycle,
        n_cycles_real: n_real,
        n_full_cycles: n_full as u64,
        t_full_cycles: n_full * cycle,
        t_partial,
    })
}

/// Charge over the first `t_partial` seconds of an ordered phase list:
/// each phase is charged in full while it fits, the phase that straddles
/// the cut-off is charged for the remaining time only.
pub fn partial_cycle_charge(phases: &[PhaseSpec], t_partial: DurationSeconds) -> Result<ChargeMilliampSecond> {
    Ok(prefix_walk(phases, t_partial)?.0)
}

type Breakdown = BTreeMap<PhaseLabel, ChargeMilliampSecond>;

fn prefix_walk(phases: &[PhaseSpec], t: DurationSeconds) -> Result<(ChargeMilliampSecond, Vec<(PhaseLabel, f64)>)> {
    let cycle: f64 = phases.iter().map(|p| p.duration.value()).sum();
    let mut left = t.value();
    if left > cycle + TILING_EPS_S {
        return Err(Error::PartialExceedsCycle {
            t_partial: left,
            cycle,
        });
    }
    let mut q = 0.0;
    let mut parts = Vec::with_capacity(phases.len());
    for p in phases {
        if left <= 0.0 {
            break;
        }
        let d = p.duration.value();
        if left <= d {
            let c = p.current.value() * left;
            q += c;
            parts.push((p.label, c));
            break;
        }
        let c = p.current.value() * d;
        q += c;
        parts.push((p.label, c));
        left -= d;
    }
    Ok((ChargeMilliampSecond::new(q)?, parts))
}

/// Total charge and its decomposition, before unit views are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeResult {
    pub q_total: ChargeMilliampSecond,
    pub q_init: ChargeMilliampSecond,
    pub q_full_cycles: ChargeMilliampSecond,
    pub q_partial: ChargeMilliampSecond,
    pub breakdown: Breakdown,
    pub accounting: CycleAccounting,
    /// Operating time ended inside the init sequence.
    pub truncated_init: bool,
}

fn add(b: &mut Breakdown, label: PhaseLabel, mas: f64) {
    let e = b.entry(label).or_insert(ChargeMilliampSecond::ZERO);
    *e = *e + ChargeMilliampSecond::new(mas).unwrap_or(ChargeMilliampSecond::ZERO);
}

fn accumulate(scenario: &ScenarioProfile) -> Result<ChargeResult> {
    let mut breakdown = Breakdown::new();
    for p in scenario.init_phases.iter().chain(scenario.cycle_phases.iter()) {
        breakdown.entry(p.label).or_insert(ChargeMilliampSecond::ZERO);
    }
    let accounting = match layout(scenario) {
        Ok(a) => a,
        Err(Error::InitExceedsTotal { .. }) => {
            let (q, parts) = prefix_walk(&scenario.init_phases, scenario.total_time)?;
            for (l, c) in parts {
                add(&mut breakdown, l, c);
            }
            let total = scenario.total_time.value();
            return Ok(ChargeResult {
                q_total: q,
                q_init: q,
                q_full_cycles: ChargeMilliampSecond::ZERO,
                q_partial: ChargeMilliampSecond::ZERO,
                breakdown,
                accounting: CycleAccounting {
                    t_init: total,
                    t_one_cycle: scenario.t_one_cycle().value(),
                    n_cycles_real: 0.0,
                    n_full_cycles: 0,
                    t_full_cycles: 0.0,
                    t_partial: 0.0,
                },
                truncated_init: true,
            });
        }
        Err(e) => return Err(e),
    };

    let mut q_init = 0.0;
    for p in &scenario.init_phases {
        let c = p.charge().value();
        q_init += c;
        add(&mut breakdown, p.label, c);
    }
    let n = accounting.n_full_cycles as f64;
    let mut q_full = 0.0;
    for p in &scenario.cycle_phases {
        let c = p.charge().value() * n;
        q_full += c;
        add(&mut breakdown, p.label, c);
    }
    let (q_partial, parts) = prefix_walk(
        &scenario.cycle_phases,
        DurationSeconds::new(accounting.t_partial)?,
    )?;
    for (l, c) in parts {
        add(&mut breakdown, l, c);
    }
    Ok(ChargeResult {
        q_total: ChargeMilliampSecond::new(q_init + q_full + q_partial.value())?,
        q_init: ChargeMilliampSecond::new(q_init)?,
        q_full_cycles: ChargeMilliampSecond::new(q_full)?,
        q_partial,
        breakdown,
        accounting,
        truncated_init: false,
    })
}

/// Total charge for the BLE-connected modes: init sequence (advertising,
/// connection setup, startup, idle), full cycles and the partial cycle.
pub fn total_charge_connected(scenario: &ScenarioProfile) -> Result<ChargeResult> {
    if scenario.mode == OperatingMode::VeryLowPower {
        return Err(Error::UnsupportedMode(scenario.mode.to_string()));
    }
    accumulate(scenario)
}

/// Total charge for the very-low-power mode, where every wake-up repeats
/// startup and ends in deep sleep.
pub fn total_charge_very_low_power(scenario: &ScenarioProfile) -> Result<ChargeResult> {
    if scenario.mode != OperatingMode::VeryLowPower {
        return Err(Error::UnsupportedMode(scenario.mode.to_string()));
    }
    scenario.hardware.validate()?;
    accumulate(scenario)
}

/// Charge, energy and average current for one scenario run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    pub mode: OperatingMode,
    pub total_time_s: f64,
    pub operating_voltage_v: f64,
    pub q_total: ChargeMilliampSecond,
    pub p_total: EnergyMilliwattHour,
    pub i_overall: CurrentMilliamp,
    /// Average over init plus full cycles.
    pub i_1: CurrentMilliamp,
    /// Average over the partial cycle.
    pub i_2: CurrentMilliamp,
    /// `(i_1·(t_init + t_full) + i_2·t_partial) / T`.
    pub i_overall_split: CurrentMilliamp,
    pub breakdown: BTreeMap<PhaseLabel, ChargeMilliampSecond>,
    pub accounting: CycleAccounting,
    pub truncated_init: bool,
}

impl EnergyReport {
    pub fn q_total_mah(&self) -> f64 {
        self.q_total.mah()
    }
    pub fn q_total_coulomb(&self) -> f64 {
        self.q_total.coulomb()
    }
    pub fn p_total_mwh(&self) -> f64 {
        self.p_total.0
    }
    pub fn p_total_joule(&self) -> f64 {
        self.p_total.joule()
    }
}

fn ratio(q: f64, t: f64) -> f64 {
    // 0/0 is defined as zero
    if t == 0.0 {
        0.0
    } else {
        q / t
    }
}

/// Attaches unit views and the overall current to a charge result.
pub fn energy_report(result: &ChargeResult, scenario: &ScenarioProfile) -> Result<EnergyReport> {
    let a = &result.accounting;
    let total = scenario.total_time.value();
    let q = result.q_total.value();
    let t1 = a.t_init + a.t_full_cycles;
    let q1 = result.q_init.value() + result.q_full_cycles.value();
    let i_1 = ratio(q1, t1);
    let i_2 = ratio(result.q_partial.value(), a.t_partial);
    let split = ratio(i_1 * t1 + i_2 * a.t_partial, total);
    Ok(EnergyReport {
        mode: scenario.mode,
        total_time_s: total,
        operating_voltage_v: scenario.operating_voltage.value(),
        q_total: result.q_total,
        p_total: EnergyMilliwattHour::from_charge(result.q_total, scenario.operating_voltage),
        i_overall: CurrentMilliamp::new(ratio(q, total))?,
        i_1: CurrentMilliamp::new(i_1)?,
        i_2: CurrentMilliamp::new(i_2)?,
        i_overall_split: CurrentMilliamp::new(split)?,
        breakdown: result.breakdown.clone(),
        accounting: result.accounting,
        truncated_init: result.truncated_init,
    })
}

/// Runs the total-charge computation matching the scenario's mode.
pub fn predict(scenario: &ScenarioProfile) -> Result<EnergyReport> {
    let r = match scenario.mode {
        OperatingMode::VeryLowPower => total_charge_very_low_power(scenario)?,
        _ => total_charge_connected(scenario)?,
    };
    energy_report(&r, scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ParameterCatalog;

    fn normal() -> ScenarioProfile {
        ParameterCatalog::builtin()
            .default_scenario(OperatingMode::Normal, HardwareConfig::default())
            .unwrap()
    }

    fn vlp() -> ScenarioProfile {
        ParameterCatalog::builtin()
            .default_scenario(OperatingMode::VeryLowPower, HardwareConfig::both_cut())
            .unwrap()
    }

    fn oracle_sum(v: &[f64]) -> f64 {
        v.iter().sum()
    }

    #[test]
    fn normal_layout() {
        let s = normal();
        let a = layout(&s).unwrap();
        let t_init = oracle_sum(&[30.0, 30.0, 30.0, 0.9158, 1.9]);
        let cycle = oracle_sum(&[0.516, 0.2, 2.8, 2.1, 0.084, 5.12]);
        assert!((a.t_init - t_init).abs() < 1e-9);
        assert!((a.t_one_cycle - cycle).abs() < 1e-9);
        assert_eq!(a.n_full_cycles, ((3600.0 - t_init) / cycle).floor() as u64);
        assert_eq!(a.n_full_cycles, 324);
        assert!((a.t_partial - (3600.0 - t_init - 324.0 * cycle)).abs() < 1e-9);
        assert!((a.t_partial - 1.504).abs() < 1e-3);
    }

    #[test]
    fn vlp_layout() {
        let a = layout(&vlp()).unwrap();
        let cycle = oracle_sum(&[0.909, 0.03, 0.149, 0.118, 0.544, 76.1]);
        assert_eq!(a.t_init, 0.0);
        assert!((a.t_one_cycle - cycle).abs() < 1e-9);
        assert_eq!(a.n_full_cycles, 46);
        assert!((a.t_partial - (3600.0 - 46.0 * cycle)).abs() < 1e-9);
    }

    #[test]
    fn exact_tiling_has_no_partial() {
        let s = normal();
        for k in [1u32, 7, 100, 324] {
            let t = s.t_init().value() + f64::from(k) * s.t_one_cycle().value();
            let s = s.with_total_time(DurationSeconds::new(t).unwrap()).unwrap();
            let a = layout(&s).unwrap();
            assert_eq!(a.t_partial, 0.0, "k={k}");
            assert_eq!(a.n_full_cycles, u64::from(k));
        }
    }

    #[test]
    fn partial_examples() {
        let s = normal();
        let ph = s.cycle_phases();
        assert_eq!(partial_cycle_charge(ph, DurationSeconds::ZERO).unwrap().value(), 0.0);
        let q = partial_cycle_charge(ph, DurationSeconds::new(0.3).unwrap()).unwrap();
        assert!((q.value() - 12.26 * 0.3).abs() < 1e-12);
        let q = partial_cycle_charge(ph, DurationSeconds::new(1.504).unwrap()).unwrap();
        let i_conn = (7.31 * 2.14 + 5.43 * 42.86) / 45.0;
        let want = 12.26 * 0.516 + i_conn * 0.2 + 6.84 * (1.504 - 0.716);
        assert!((q.value() - want).abs() < 1e-9);
        assert!((q.value() - 12.82).abs() < 0.01);
        let over = partial_cycle_charge(ph, DurationSeconds::new(11.0).unwrap());
        assert!(matches!(over, Err(Error::PartialExceedsCycle { .. })));
    }

    #[test]
    fn init_only_when_total_equals_init() {
        let s = normal();
        let s = s.with_total_time(s.t_init()).unwrap();
        let r = total_charge_connected(&s).unwrap();
        assert_eq!(r.q_partial.value(), 0.0);
        assert_eq!(r.q_full_cycles.value(), 0.0);
        let want: f64 = s.init_phases().iter().map(|p| p.current.value() * p.duration.value()).sum();
        assert!((r.q_total.value() - want).abs() < 1e-9);
        assert!(!r.truncated_init);
    }

    #[test]
    fn truncated_init_is_flagged() {
        let s = normal().with_total_time(DurationSeconds::new(45.0).unwrap()).unwrap();
        assert!(matches!(layout(&s), Err(Error::InitExceedsTotal { .. })));
        let rep = predict(&s).unwrap();
        assert!(rep.truncated_init);
        let fast = s.phase(PhaseLabel::FastAdv).unwrap();
        let slow = s.phase(PhaseLabel::SlowAdv).unwrap();
        let want = fast.current.value() * 30.0 + slow.current.value() * 15.0;
        assert!((rep.q_total.value() - want).abs() < 1e-9);
        assert!((rep.i_overall.value() * 45.0 - want).abs() < 1e-9);
    }

    #[test]
    fn vlp_shorter_than_startup() {
        let s = vlp().with_total_time(DurationSeconds::new(0.5).unwrap()).unwrap();
        let r = total_charge_very_low_power(&s).unwrap();
        assert!((r.q_total.value() - 15.1 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn mode_dispatch_guards() {
        assert!(matches!(total_charge_connected(&vlp()), Err(Error::UnsupportedMode(_))));
        assert!(matches!(total_charge_very_low_power(&normal()), Err(Error::UnsupportedMode(_))));
    }

    #[test]
    fn zero_charge_report() {
        let zero = |l| PhaseSpec::new(l, CurrentMilliamp::ZERO, DurationSeconds::new(1.0).unwrap());
        let s = ScenarioProfile::new(
            OperatingMode::VeryLowPower,
            HardwareConfig::both_cut(),
            Volts::new(3.3).unwrap(),
            DurationSeconds::new(100.0).unwrap(),
            vec![],
            very_low_power_cycle_order(false).into_iter().map(zero).collect(),
        )
        .unwrap();
        let r = predict(&s).unwrap();
        assert_eq!(r.q_total.value(), 0.0);
        assert_eq!(r.p_total_mwh(), 0.0);
        assert_eq!(r.p_total_joule(), 0.0);
        assert_eq!(r.i_overall.value(), 0.0);
        assert_eq!(r.i_overall_split.value(), 0.0);
    }

    #[test]
    fn phase_order_enforced() {
        let s = normal();
        let mut cyc = s.cycle_phases().to_vec();
        cyc.swap(0, 1);
        let err = ScenarioProfile::new(
            s.mode,
            s.hardware,
            s.operating_voltage,
            s.total_time,
            s.init_phases().to_vec(),
            cyc,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidScenario(_)));
    }

    #[test]
    fn energy_report_views() {
        let r = predict(&normal()).unwrap();
        assert!((r.p_total_mwh() - r.q_total_mah() * 3.3).abs() < 1e-12);
        assert!((r.q_total_coulomb() - r.q_total_mah() * 3.6).abs() < 1e-12);
        assert!((r.i_overall.value() - r.q_total_mah()).abs() < 1e-12);
        assert!((r.i_overall.value() - r.i_overall_split.value()).abs() < 1e-9 * r.i_overall.value());
    }
}
