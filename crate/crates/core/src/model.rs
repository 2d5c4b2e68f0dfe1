//! Closed-form per-interval and per-phase charge formulas.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::OperatingMode;
use crate::error::{Error, Result};
use crate::units::{ChargeMilliampSecond, CurrentMilliamp, DurationSeconds};

/// Default idle inflation after E-ink/NBVLC in normal mode (+0.7 %).
pub const NORMAL_IDLE_INFLATION: f64 = 1.007;
/// Default idle inflation after E-ink/NBVLC in low-power mode (+14 %).
pub const LOW_POWER_IDLE_INFLATION: f64 = 1.14;

/// An event/idle pair that repeats with a fixed period (advertising or
/// connection interval).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalSpec {
    pub event_current: CurrentMilliamp,
    pub event_duration: DurationSeconds,
    pub idle_current: CurrentMilliamp,
    pub idle_duration: DurationSeconds,
}

impl IntervalSpec {
    pub fn period(&self) -> DurationSeconds {
        self.event_duration + self.idle_duration
    }
}

/// Time-weighted average current over one interval.
pub fn interval_average_current(spec: &IntervalSpec) -> Result<CurrentMilliamp> {
    let period = spec.period().value();
    if period <= 0.0 {
        return Err(Error::ZeroLengthInterval);
    }
    let charge = spec.event_current * spec.event_duration + spec.idle_current * spec.idle_duration;
    let avg = charge.value() / period;
    // keep the result inside [min, max] despite rounding
    let lo = spec.event_current.value().min(spec.idle_current.value());
    let hi = spec.event_current.value().max(spec.idle_current.value());
    CurrentMilliamp::new(avg.clamp(lo, hi))
}

/// `current × duration × count`. Fractional counts are allowed.
pub fn phase_charge(
    current: CurrentMilliamp,
    duration: DurationSeconds,
    count: f64,
) -> Result<ChargeMilliampSecond> {
    if !(count.is_finite() && count >= 0.0) {
        return Err(Error::InvalidQuantity {
            quantity: "repetition count",
            value: count,
        });
    }
    ChargeMilliampSecond::new(current.value() * duration.value() * count)
}

/// Number of intervals of length `interval` that fit in `window`, without
/// flooring.
pub fn repetition_count(window: DurationSeconds, interval: DurationSeconds) -> Result<f64> {
    if interval.value() == 0.0 {
        return Err(Error::ZeroInterval);
    }
    Ok(window.value() / interval.value())
}

/// Operational phases a node can be in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseLabel {
    FastAdv,
    SlowAdv,
    BleConnIdle,
    Startup,
    IdleStart,
    Sensing,
    IdleSens,
    Eink,
    IdleEink,
    Nbvlc,
    IdleNbvlc,
    DeepSleep,
}

impl PhaseLabel {
    pub const ALL: [PhaseLabel; 12] = [
        PhaseLabel::FastAdv,
        PhaseLabel::SlowAdv,
        PhaseLabel::BleConnIdle,
        PhaseLabel::Startup,
        PhaseLabel::IdleStart,
        PhaseLabel::Sensing,
        PhaseLabel::IdleSens,
        PhaseLabel::Eink,
        PhaseLabel::IdleEink,
        PhaseLabel::Nbvlc,
        PhaseLabel::IdleNbvlc,
        PhaseLabel::DeepSleep,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PhaseLabel::FastAdv => "fast_adv",
            PhaseLabel::SlowAdv => "slow_adv",
            PhaseLabel::BleConnIdle => "ble_conn_idle",
            PhaseLabel::Startup => "startup",
            PhaseLabel::IdleStart => "idle_start",
            PhaseLabel::Sensing => "sensing",
            PhaseLabel::IdleSens => "idle_sens",
            PhaseLabel::Eink => "eink",
            PhaseLabel::IdleEink => "idle_eink",
            PhaseLabel::Nbvlc => "nbvlc",
            PhaseLabel::IdleNbvlc => "idle_nbvlc",
            PhaseLabel::DeepSleep => "deep_sleep",
        }
    }

    pub fn is_idle(self) -> bool {
        matches!(
            self,
            PhaseLabel::IdleStart | PhaseLabel::IdleSens | PhaseLabel::IdleEink | PhaseLabel::IdleNbvlc
        )
    }
}

impl fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PhaseLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PhaseLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown phase label `{s}`")))
    }
}

/// One operational phase with its average current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub label: PhaseLabel,
    pub current: CurrentMilliamp,
    pub duration: DurationSeconds,
}

impl PhaseSpec {
    pub fn new(label: PhaseLabel, current: CurrentMilliamp, duration: DurationSeconds) -> Self {
        Self {
            label,
            current,
            duration,
        }
    }

    pub fn charge(&self) -> ChargeMilliampSecond {
        self.current * self.duration
    }
}

/// Default multiplier relating an idle phase's current to the plain
/// connected-idle interval current. Catalogs may override these.
pub fn idle_inflation_factor(mode: OperatingMode, label: PhaseLabel) -> Result<f64> {
    let inflated = match mode {
        OperatingMode::Normal => NORMAL_IDLE_INFLATION,
        OperatingMode::LowPower => LOW_POWER_IDLE_INFLATION,
        OperatingMode::VeryLowPower => return Err(Error::UnsupportedMode(mode.to_string())),
    };
    match label {
        PhaseLabel::IdleStart | PhaseLabel::IdleSens => Ok(1.0),
        PhaseLabel::IdleEink | PhaseLabel::IdleNbvlc => Ok(inflated),
        other => Err(Error::NotAnIdlePhase(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ma(v: f64) -> CurrentMilliamp {
        CurrentMilliamp::new(v).unwrap()
    }
    fn ms(v: f64) -> DurationSeconds {
        DurationSeconds::from_millis(v).unwrap()
    }
    fn s(v: f64) -> DurationSeconds {
        DurationSeconds::new(v).unwrap()
    }

    fn spec(ie: f64, te: f64, ii: f64, ti: f64) -> IntervalSpec {
        IntervalSpec {
            event_current: ma(ie),
            event_duration: ms(te),
            idle_current: ma(ii),
            idle_duration: ms(ti),
        }
    }

    fn round_to(v: f64, places: i32) -> f64 {
        let p = 10f64.powi(places);
        (v * p).round() / p
    }

    #[test]
    fn advertising_and_connection_interval_currents() {
        let fast = interval_average_current(&spec(9.65, 4.18, 5.46, 15.82)).unwrap();
        assert_eq!(round_to(fast.value(), 3), 6.336);
        let slow = interval_average_current(&spec(9.65, 4.18, 5.46, 148.32)).unwrap();
        assert_eq!(round_to(slow.value(), 3), 5.575);
        let conn = interval_average_current(&spec(7.31, 2.14, 5.43, 42.86)).unwrap();
        assert_eq!(round_to(conn.value(), 2), 5.52);
        let lp = interval_average_current(&spec(3.52, 2.14, 1.33, 42.86)).unwrap();
        assert_eq!(round_to(lp.value(), 3), 1.434);
    }

    #[test]
    fn zero_length_interval() {
        assert_eq!(
            interval_average_current(&spec(1.0, 0.0, 2.0, 0.0)),
            Err(Error::ZeroLengthInterval)
        );
    }

    #[test]
    fn phase_charge_examples() {
        let q = phase_charge(ma(15.03), s(0.9158), 1.0).unwrap();
        assert!((q.value() - 13.764474).abs() < 1e-9);
        assert!((q.mah() - 0.003823465).abs() < 1e-9);
        assert_eq!(phase_charge(ma(3.0), s(2.0), 0.0).unwrap().value(), 0.0);
        let q = phase_charge(ma(6.84), s(2.8), 3.0).unwrap();
        assert!((q.value() - 57.456).abs() < 1e-9);
        assert!(phase_charge(ma(1.0), s(1.0), -1.0).is_err());
    }

    #[test]
    fn repetition_counts() {
        assert!((repetition_count(s(30.0), ms(20.0)).unwrap() - 1500.0).abs() < 1e-9);
        let n = repetition_count(s(30.0), ms(152.5)).unwrap();
        assert!((n - 196.7213114754098).abs() < 1e-9);
        assert_eq!(repetition_count(s(0.0), ms(3.0)).unwrap(), 0.0);
        assert_eq!(repetition_count(s(1.0), s(0.0)), Err(Error::ZeroInterval));
    }

    #[test]
    fn inflation_factors() {
        let f = idle_inflation_factor(OperatingMode::Normal, PhaseLabel::IdleEink).unwrap();
        assert_eq!(f, 1.007);
        assert_eq!(round_to(f * 5.52, 2), 5.56);
        let f = idle_inflation_factor(OperatingMode::LowPower, PhaseLabel::IdleNbvlc).unwrap();
        assert_eq!(f, 1.14);
        assert_eq!(round_to(f * 1.434, 3), 1.635);
        assert_eq!(
            idle_inflation_factor(OperatingMode::Normal, PhaseLabel::IdleSens).unwrap(),
            1.0
        );
        assert!(matches!(
            idle_inflation_factor(OperatingMode::VeryLowPower, PhaseLabel::IdleEink),
            Err(Error::UnsupportedMode(_))
        ));
        assert!(idle_inflation_factor(OperatingMode::Normal, PhaseLabel::Eink).is_err());
    }

    #[test]
    fn phase_labels_round_trip_through_strings() {
        for l in PhaseLabel::ALL {
            assert_eq!(l.as_str().parse::<PhaseLabel>().unwrap(), l);
        }
    }

    proptest! {
        #[test]
        fn interval_average_is_convex(ie in 0.0f64..50.0, te in 0.0f64..1.0, ii in 0.0f64..50.0, ti in 1e-6f64..1.0) {
            let sp = IntervalSpec {
                event_current: ma(ie), event_duration: s(te), idle_current: ma(ii), idle_duration: s(ti),
            };
            let avg = interval_average_current(&sp).unwrap().value();
            prop_assert!(avg >= ie.min(ii) && avg <= ie.max(ii));
            let lhs = avg * (te + ti);
            let rhs = ie * te + ii * ti;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300) + 1e-300);
        }

        #[test]
        fn equal_currents_collapse(c in 0.0f64..50.0, d in 1e-6f64..10.0) {
            let sp = IntervalSpec { event_current: ma(c), event_duration: s(d), idle_current: ma(c), idle_duration: s(d) };
            prop_assert_eq!(interval_average_current(&sp).unwrap().value(), c);
        }

        #[test]
        fn phase_charge_is_linear(i in 0.0f64..20.0, t in 0.0f64..100.0, n in 0.0f64..1000.0) {
            let one = phase_charge(ma(i), s(t), 1.0).unwrap().value();
            let many = phase_charge(ma(i), s(t), n).unwrap().value();
            let stretched = phase_charge(ma(i), s(t * n), 1.0).unwrap().value();
            let tol = 1e-12 * many.max(1e-300);
            prop_assert!((many - n * one).abs() <= tol);
            prop_assert!((many - stretched).abs() <= tol);
        }
    }
}
