//! Exact rationals for every counting metric, threshold and ratio.
//!
//! Serialized as `{"num":3,"den":4,"dec":"0.750000"}`. The decimal is for
//! display only and is ignored on input.

use std::fmt;
use std::ops::{Add, Div, Mul, Sub};
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::Zero;
use serde::de::{self, Deserializer};
use serde::ser::{SerializeStruct, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fraction(Ratio<i64>);

impl Fraction {
    pub const ZERO: Fraction = Fraction(Ratio::new_raw(0, 1));
    pub const ONE: Fraction = Fraction(Ratio::new_raw(1, 1));

    /// Builds `num/den` in lowest terms. Panics if `den == 0`.
    pub fn new(num: i64, den: i64) -> Self {
        Fraction(Ratio::new(num, den))
    }

    pub fn try_new(num: i64, den: i64) -> Result<Self> {
        if den == 0 {
            return Err(Error::invalid(format!(
                "fraction {num}/0 has zero denominator"
            )));
        }
        Ok(Self::new(num, den))
    }

    /// `count / total`, with `0/0` read as `empty`.
    pub fn ratio_or(count: usize, total: usize, empty: Fraction) -> Self {
        if total == 0 {
            empty
        } else {
            Self::new(count as i64, total as i64)
        }
    }

    pub fn numer(&self) -> i64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> i64 {
        *self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn in_unit_interval(&self) -> bool {
        *self >= Self::ZERO && *self <= Self::ONE
    }

    pub fn min(self, other: Self) -> Self {
        std::cmp::min(self, other)
    }

    /// Largest integer not above the value.
    pub fn floor(&self) -> i64 {
        self.0.floor().to_integer()
    }

    /// `floor(x + 1/2)`: halves round towards positive infinity.
    pub fn round_half_up(&self) -> i64 {
        (self.0 + Ratio::new(1, 2)).floor().to_integer()
    }

    pub fn to_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    /// Fixed six-decimal rendering, rounded half away from zero.
    pub fn decimal(&self) -> String {
        let num = i128::from(self.numer()) * 1_000_000;
        let den = i128::from(self.denom());
        let neg = num < 0;
        let abs = num.abs();
        let mut scaled = abs / den;
        if (abs % den) * 2 >= den {
            scaled += 1;
        }
        let sign = if neg && scaled != 0 { "-" } else { "" };
        format!("{sign}{}.{:06}", scaled / 1_000_000, scaled % 1_000_000)
    }

    /// Signed rendering for deltas, e.g. `+0.050000`.
    pub fn signed_decimal(&self) -> String {
        let d = self.decimal();
        if d.starts_with('-') {
            d
        } else {
            format!("+{d}")
        }
    }
}

impl Default for Fraction {
    fn default() -> Self {
        Self::ZERO
    }
}

impl From<i64> for Fraction {
    fn from(v: i64) -> Self {
        Fraction(Ratio::from_integer(v))
    }
}

impl Sub for Fraction {
    type Output = Fraction;
    fn sub(self, rhs: Self) -> Self {
        Fraction(self.0 - rhs.0)
    }
}

impl Mul for Fraction {
    type Output = Fraction;
    fn mul(self, rhs: Self) -> Self {
        Fraction(self.0 * rhs.0)
    }
}

impl Div for Fraction {
    type Output = Fraction;
    fn div(self, rhs: Self) -> Self {
        assert!(!rhs.is_zero(), "division by zero fraction");
        Fraction(self.0 / rhs.0)
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom() == 1 {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl FromStr for Fraction {
    type Err = Error;

    /// Accepts `a/b`, an integer, or a plain decimal such as `0.85`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::invalid(format!("cannot parse `{s}` as a fraction"));
        if let Some((n, d)) = s.split_once('/') {
            let n: i64 = n.trim().parse().map_err(|_| bad())?;
            let d: i64 = d.trim().parse().map_err(|_| bad())?;
            return Self::try_new(n, d);
        }
        if let Some((int, frac)) = s.split_once('.') {
            if frac.is_empty() || frac.len() > 12 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            let neg = int.starts_with('-');
            let int: i64 = if int.is_empty() || int == "-" {
                0
            } else {
                int.parse().map_err(|_| bad())?
            };
            let den = 10i64.pow(frac.len() as u32);
            let frac: i64 = frac.parse().map_err(|_| bad())?;
            let mag = int.abs() * den + frac;
            return Self::try_new(if neg { -mag } else { mag }, den);
        }
        s.parse::<i64>().map(Fraction::from).map_err(|_| bad())
    }
}

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("Fraction", 3)?;
        st.serialize_field("num", &self.numer())?;
        st.serialize_field("den", &self.denom())?;
        st.serialize_field("dec", &self.decimal())?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Parts { num: i64, den: i64 },
            Text(String),
            Int(i64),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Parts { num, den } => Fraction::try_new(num, den).map_err(de::Error::custom),
            Repr::Text(s) => s.parse().map_err(de::Error::custom),
            Repr::Int(v) => Ok(Fraction::from(v)),
        }
    }
}

impl Add for Fraction {
    type Output = Fraction;
    fn add(self, rhs: Self) -> Self {
        Fraction(self.0 + rhs.0)
    }
}
