//! Exact nonnegative rational amounts.
//!
//! All mechanism arithmetic is exact: amounts are arbitrary-precision
//! rationals kept in canonical reduced form, and no floating point enters
//! any allocation, charge or payment computation. Floats appear only in
//! report files as display approximations next to the exact value.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Add;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use thiserror::Error;

/// A nonnegative exact rational amount of currency.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Money(BigRational);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MoneyError {
    #[error("amount must be nonnegative, got {0}")]
    Negative(String),
    #[error("malformed rational literal {0:?}")]
    Malformed(String),
    #[error("zero denominator in {0:?}")]
    ZeroDenominator(String),
}

impl Money {
    pub fn new(value: BigRational) -> Result<Self, MoneyError> {
        if value.is_negative() {
            return Err(MoneyError::Negative(format_rational(&value)));
        }
        Ok(Money(value))
    }

    pub fn zero() -> Self {
        Money(BigRational::zero())
    }

    pub fn from_u64(n: u64) -> Self {
        Money(BigRational::from_integer(BigInt::from(n)))
    }

    /// `numer / denom`, reduced. Panics on a zero denominator.
    pub fn from_ratio(numer: u64, denom: u64) -> Self {
        Money(BigRational::new(BigInt::from(numer), BigInt::from(denom)))
    }

    pub fn amount(&self) -> &BigRational {
        &self.0
    }

    pub fn into_rational(self) -> BigRational {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }
}

impl PartialOrd for Money {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Money {
    fn cmp(&self, other: &Self) -> Ordering {
        cmp_rationals(&self.0, &other.0)
    }
}

impl Add<&Money> for Money {
    type Output = Money;
    fn add(self, rhs: &Money) -> Money {
        Money(self.0 + &rhs.0)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_rational(&self.0))
    }
}

impl FromStr for Money {
    type Err = MoneyError;
    fn from_str(s: &str) -> Result<Self, MoneyError> {
        Money::new(parse_rational(s)?)
    }
}

impl From<u64> for Money {
    fn from(n: u64) -> Self {
        Money::from_u64(n)
    }
}

/// Compares two reduced rationals, cross-multiplying in `i128` when both
/// fit in machine words. Denominators are positive by `Ratio`'s invariant,
/// so the cross products preserve the ordering. Large instances sort
/// hundreds of thousands of amounts, which makes the allocation-free path
/// worth having; the slow path defers to `BigRational`'s own ordering.
pub fn cmp_rationals(a: &BigRational, b: &BigRational) -> Ordering {
    if let (Some(an), Some(ad), Some(bn), Some(bd)) = (
        a.numer().to_i64(),
        a.denom().to_i64(),
        b.numer().to_i64(),
        b.denom().to_i64(),
    ) {
        return (an as i128 * bd as i128).cmp(&(bn as i128 * ad as i128));
    }
    a.cmp(b)
}

/// Serializes a rational as `numer/denom`, always including the
/// denominator so integers round-trip as e.g. `39/1`.
pub fn format_rational(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Parses `numer/denom` or a bare integer into an exact rational.
pub fn parse_rational(s: &str) -> Result<BigRational, MoneyError> {
    let s = s.trim();
    let (numer, denom) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s, "1"),
    };
    let numer = BigInt::from_str(numer).map_err(|_| MoneyError::Malformed(s.to_string()))?;
    let denom = BigInt::from_str(denom).map_err(|_| MoneyError::Malformed(s.to_string()))?;
    if denom.is_zero() {
        return Err(MoneyError::ZeroDenominator(s.to_string()));
    }
    Ok(BigRational::new(numer, denom))
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Serde adapter serializing rationals as `numer/denom` strings, the
/// interchange convention used by every file format here. Exactness is
/// the point: decimal floats would corrupt tie-break-sensitive values.
pub mod serde_rational {
    use super::{format_rational, parse_rational};
    use num_rational::BigRational;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &BigRational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigRational, D::Error> {
        let text = String::deserialize(d)?;
        parse_rational(&text).map_err(D::Error::custom)
    }
}
