//! Unit-safe scalar quantities.
//!
//! Everything inside the crate works in seconds, milliamperes and
//! milliampere-seconds. Hours, milliseconds and mAh only appear at the
//! boundaries (config files, reports).

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Div, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds per hour; 1 mAh = 3600 mA·s.
pub const SECONDS_PER_HOUR: f64 = 3600.0;
/// Coulombs per mAh.
pub const COULOMB_PER_MAH: f64 = 3.6;
/// Joules per mWh.
pub const JOULE_PER_MWH: f64 = 3.6;

fn check(quantity: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value >= 0.0 {
        // normalise -0.0
        Ok(value + 0.0)
    } else {
        Err(Error::InvalidQuantity { quantity, value })
    }
}

macro_rules! quantity {
    ($(#[$meta:meta])* $name:ident, $label:literal, $unit:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
        #[serde(try_from = "f64", into = "f64")]
        pub struct $name(f64);

        impl $name {
            pub const ZERO: Self = Self(0.0);

            /// Fails unless `value` is finite and non-negative.
            pub fn new(value: f64) -> Result<Self> {
                check($label, value).map(Self)
            }

            #[inline]
            pub fn value(self) -> f64 {
                self.0
            }
        }

        impl TryFrom<f64> for $name {
            type Error = Error;
            fn try_from(value: f64) -> Result<Self> {
                Self::new(value)
            }
        }

        impl From<$name> for f64 {
            fn from(q: $name) -> f64 {
                q.0
            }
        }

        impl Add for $name {
            type Output = Self;
            fn add(self, rhs: Self) -> Self {
                Self(self.0 + rhs.0)
            }
        }

        impl Sum for $name {
            fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
                Self(iter.fold(0.0, |acc, q| acc + q.0))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                if let Some(p) = f.precision() {
                    write!(f, "{:.*} {}", p, self.0, $unit)
                } else {
                    write!(f, "{} {}", self.0, $unit)
                }
            }
        }
    };
}

quantity!(
    /// Average current in milliamperes.
    CurrentMilliamp,
    "current",
    "mA"
);
quantity!(
    /// A span of time in seconds.
    DurationSeconds,
    "duration",
    "s"
);
quantity!(
    /// Charge in milliampere-seconds, the canonical internal charge unit.
    ChargeMilliampSecond,
    "charge",
    "mA·s"
);
quantity!(
    /// Supply voltage in volts.
    Volts,
    "voltage",
    "V"
);

impl DurationSeconds {
    pub fn from_millis(ms: f64) -> Result<Self> {
        Self::new(ms / 1000.0).map_err(|_| Error::InvalidQuantity {
            quantity: "duration",
            value: ms,
        })
    }

    pub fn from_hours(h: f64) -> Result<Self> {
        Self::new(h * SECONDS_PER_HOUR)
    }

    pub fn millis(self) -> f64 {
        self.0 * 1000.0
    }

    /// Difference clamped at zero.
    pub fn saturating_sub(self, rhs: Self) -> Self {
        Self((self.0 - rhs.0).max(0.0))
    }
}

impl Sub for DurationSeconds {
    type Output = f64;
    fn sub(self, rhs: Self) -> f64 {
        self.0 - rhs.0
    }
}

impl Mul<f64> for DurationSeconds {
    type Output = DurationSeconds;
    /// Panics in debug builds on negative scale factors.
    fn mul(self, rhs: f64) -> DurationSeconds {
        debug_assert!(rhs >= 0.0);
        DurationSeconds(self.0 * rhs)
    }
}

impl ChargeMilliampSecond {
    pub fn from_mah(mah: f64) -> Result<Self> {
        Self::new(mah * SECONDS_PER_HOUR)
    }

    pub fn from_coulomb(c: f64) -> Result<Self> {
        Self::from_mah(c / COULOMB_PER_MAH)
    }

    pub fn mah(self) -> f64 {
        self.0 / SECONDS_PER_HOUR
    }

    pub fn coulomb(self) -> f64 {
        self.mah() * COULOMB_PER_MAH
    }
}

impl Mul<f64> for ChargeMilliampSecond {
    type Output = ChargeMilliampSecond;
    fn mul(self, rhs: f64) -> ChargeMilliampSecond {
        debug_assert!(rhs >= 0.0);
        ChargeMilliampSecond(self.0 * rhs)
    }
}

impl CurrentMilliamp {
    /// Scales by a non-negative factor (idle inflation, etc.).
    pub fn scaled(self, factor: f64) -> Result<Self> {
        Self::new(self.0 * factor)
    }
}

impl Mul<DurationSeconds> for CurrentMilliamp {
    type Output = ChargeMilliampSecond;
    fn mul(self, rhs: DurationSeconds) -> ChargeMilliampSecond {
        ChargeMilliampSecond(self.0 * rhs.0)
    }
}

impl Div<DurationSeconds> for ChargeMilliampSecond {
    type Output = CurrentMilliamp;
    /// Zero duration yields zero current.
    fn div(self, rhs: DurationSeconds) -> CurrentMilliamp {
        if rhs.0 == 0.0 {
            CurrentMilliamp(0.0)
        } else {
            CurrentMilliamp(self.0 / rhs.0)
        }
    }
}

/// Energy in milliwatt-hours.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct EnergyMilliwattHour(pub f64);

impl EnergyMilliwattHour {
    pub fn from_charge(q: ChargeMilliampSecond, v: Volts) -> Self {
        Self(q.mah() * v.value())
    }

    pub fn joule(self) -> f64 {
        self.0 * JOULE_PER_MWH
    }
}
