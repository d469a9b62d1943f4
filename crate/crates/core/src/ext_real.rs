//! Extended reals used as expression values.

use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};

/// A real number or one of the infinities. Never NaN.
///
/// `+inf` arises as the gap of a single candidate; `-inf` only appears as
/// its negation inside a `max`, where it drops out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ExtReal(f64);

impl ExtReal {
    pub const INFINITY: ExtReal = ExtReal(f64::INFINITY);
    pub const NEG_INFINITY: ExtReal = ExtReal(f64::NEG_INFINITY);
    pub const ZERO: ExtReal = ExtReal(0.0);

    /// Wraps a finite value. Returns `None` for NaN.
    pub fn new(value: f64) -> Option<Self> {
        (!value.is_nan()).then_some(ExtReal(value))
    }

    pub fn finite(value: f64) -> Option<Self> {
        value.is_finite().then_some(ExtReal(value))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    pub fn is_pos_infinity(self) -> bool {
        self.0 == f64::INFINITY
    }

    /// `self - other`, or `None` when both are the same infinity.
    pub fn checked_sub(self, other: ExtReal) -> Option<ExtReal> {
        ExtReal::new(self.0 - other.0)
    }

    /// `c * self`, or `None` for `0 * inf`.
    pub fn checked_scale(self, c: f64) -> Option<ExtReal> {
        ExtReal::new(c * self.0)
    }

    pub fn checked_add(self, c: f64) -> Option<ExtReal> {
        ExtReal::new(self.0 + c)
    }
}

impl Eq for ExtReal {}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExtReal {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl core::ops::Neg for ExtReal {
    type Output = ExtReal;
    fn neg(self) -> ExtReal {
        ExtReal(-self.0)
    }
}

impl From<ExtReal> for f64 {
    fn from(v: ExtReal) -> f64 {
        v.0
    }
}

impl TryFrom<f64> for ExtReal {
    type Error = &'static str;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        ExtReal::new(v).ok_or("NaN is not an extended real")
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == f64::INFINITY {
            f.write_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            f.write_str("-inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}
