//! Seeded random scenarios shared by the integration tests.
#![allow(dead_code)]

use duty_energy::scenario::very_low_power_cycle_order;
use duty_energy::{CurrentMilliamp, DurationSeconds, HardwareConfig, OperatingMode, PhaseLabel, PhaseSpec, ScenarioProfile, Volts};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

pub fn random_phase(rng: &mut ChaCha8Rng, label: PhaseLabel) -> PhaseSpec {
    PhaseSpec::new(
        label,
        CurrentMilliamp::new(log_uniform(rng, 0.001, 20.0)).unwrap(),
        DurationSeconds::new(log_uniform(rng, 0.01, 100.0)).unwrap(),
    )
}

pub fn random_scenario(rng: &mut ChaCha8Rng) -> ScenarioProfile {
    random_scenario_within(rng, 600.0..7200.0)
}

/// Durations 10 ms to 100 s and currents 1 uA to 20 mA, log-uniform.
pub fn random_scenario_within(rng: &mut ChaCha8Rng, t_range: std::ops::Range<f64>) -> ScenarioProfile {
    let total = DurationSeconds::new(rng.random_range(t_range)).unwrap();
    let volts = Volts::new(3.3).unwrap();
    match rng.random_range(0..3) {
        2 => {
            let nbvlc = rng.random_bool(0.5);
            let hw = HardwareConfig {
                u6_cut: rng.random_bool(0.5),
                u9_cut: !nbvlc && rng.random_bool(0.5),
                nbvlc_enabled: nbvlc,
            };
            let cycle = very_low_power_cycle_order(nbvlc)
                .into_iter()
                .map(|l| random_phase(rng, l))
                .collect();
            ScenarioProfile::new(OperatingMode::VeryLowPower, hw, volts, total, vec![], cycle).unwrap()
        }
        m => {
            let mode = if m == 0 { OperatingMode::Normal } else { OperatingMode::LowPower };
            use PhaseLabel::*;
            let init = [FastAdv, SlowAdv, BleConnIdle, Startup, IdleStart]
                .into_iter()
                .map(|l| random_phase(rng, l))
                .collect();
            let cycle = [Sensing, IdleSens, Eink, IdleEink, Nbvlc, IdleNbvlc]
                .into_iter()
                .map(|l| random_phase(rng, l))
                .collect();
            ScenarioProfile::new(mode, HardwareConfig::default(), volts, total, init, cycle).unwrap()
        }
    }
}

pub fn random_scenarios(n: usize, seed: u64) -> Vec<ScenarioProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_scenario(&mut rng)).collect()
}
