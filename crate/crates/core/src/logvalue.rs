use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A positive quantity stored by its natural logarithm.
///
/// Products of powers `prod b_i^{e_i}` are accumulated as `sum e_i ln b_i`,
/// so nothing is exponentiated until [`LogValue::value`] is asked for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogValue(f64);

impl LogValue {
    pub const ONE: LogValue = LogValue(0.0);

    pub fn from_log(log_value: f64) -> Self {
        Self(log_value)
    }

    pub fn from_value(value: f64) -> Self {
        debug_assert!(value > 0.0);
        Self(value.ln())
    }

    /// `prod base^exponent` over the given pairs.
    pub fn product_of_powers<I>(factors: I) -> Self
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        Self(factors.into_iter().map(|(b, e)| e * b.ln()).sum())
    }

    pub fn log(self) -> f64 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0.exp()
    }

    pub fn total_cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for LogValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (log {})", self.value(), self.0)
    }
}

impl std::ops::Mul for LogValue {
    type Output = LogValue;

    #[allow(clippy::suspicious_arithmetic_impl)]
    fn mul(self, other: LogValue) -> LogValue {
        LogValue(self.0 + other.0)
    }
}
