//! Exact rational numbers for weights, scores and thresholds.
//!
//! Scores are compared against thresholds such as `2/3` and `1`, neither of
//! which survives a round trip through binary floating point, so every
//! quantity that takes part in a collective outcome is kept as a reduced
//! `i128` ratio.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Div, Mul, Sub};
use std::str::FromStr;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{One, Signed, Zero};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Largest magnitude accepted for numerators and denominators parsed from
/// user input. Keeps sums over realistic groups far away from `i128` overflow.
const INPUT_LIMIT: i128 = 1_000_000_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FractionError {
    #[error("invalid number `{0}`")]
    Invalid(String),
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
    #[error("number `{0}` is out of range")]
    OutOfRange(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fraction(Ratio<i128>);

impl Fraction {
    pub const ZERO: Fraction = Fraction(Ratio::new_raw(0, 1));
    pub const ONE: Fraction = Fraction(Ratio::new_raw(1, 1));

    /// Returns `None` for a zero denominator.
    pub fn new(numer: i128, denom: i128) -> Option<Self> {
        if denom == 0 {
            None
        } else {
            Some(Fraction(Ratio::new(numer, denom)))
        }
    }

    pub fn from_integer(n: i128) -> Self {
        Fraction(Ratio::from_integer(n))
    }

    pub fn numer(&self) -> i128 {
        *self.0.numer()
    }

    pub fn denom(&self) -> i128 {
        *self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn to_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    /// Exact conversion of the shortest decimal representation of `x`.
    pub fn from_f64(x: f64) -> Result<Self, FractionError> {
        if !x.is_finite() {
            return Err(FractionError::Invalid(x.to_string()));
        }
        // `Display` for f64 prints the shortest round-tripping decimal and
        // never uses exponent notation.
        format!("{x}").parse()
    }

    /// Finite decimal expansion, if the denominator only has factors 2 and 5.
    pub fn to_decimal_string(&self) -> Option<String> {
        let mut d = self.denom();
        let mut twos = 0u32;
        let mut fives = 0u32;
        while d % 2 == 0 {
            d /= 2;
            twos += 1;
        }
        while d % 5 == 0 {
            d /= 5;
            fives += 1;
        }
        if d != 1 {
            return None;
        }
        let places = twos.max(fives);
        let scale = 10i128.checked_pow(places)?;
        let scaled = self.numer().checked_mul(scale / self.denom())?;
        let negative = scaled < 0;
        let digits = scaled.unsigned_abs().to_string();
        let mut out = String::new();
        if negative {
            out.push('-');
        }
        if places == 0 {
            out.push_str(&digits);
        } else {
            let places = places as usize;
            let padded = format!("{digits:0>width$}", width = places + 1);
            let (int_part, frac_part) = padded.split_at(padded.len() - places);
            out.push_str(int_part);
            out.push('.');
            out.push_str(frac_part);
        }
        Some(out)
    }

    fn checked_input(numer: i128, denom: i128, text: &str) -> Result<Self, FractionError> {
        if denom == 0 {
            return Err(FractionError::ZeroDenominator(text.to_string()));
        }
        if numer.abs() > INPUT_LIMIT || denom.abs() > INPUT_LIMIT {
            return Err(FractionError::OutOfRange(text.to_string()));
        }
        Ok(Fraction(Ratio::new(numer, denom)))
    }
}

fn parse_int(s: &str, original: &str) -> Result<i128, FractionError> {
    if s.is_empty() || s.len() > 30 {
        return Err(FractionError::Invalid(original.to_string()));
    }
    s.parse::<i128>()
        .map_err(|_| FractionError::Invalid(original.to_string()))
}

impl FromStr for Fraction {
    type Err = FractionError;

    /// Accepts integers, decimals (`0.75`, `1e-3`) and ratios (`2/3`).
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let s = text.trim();
        if let Some((n, d)) = s.split_once('/') {
            let numer = parse_int(n.trim(), text)?;
            let denom = parse_int(d.trim(), text)?;
            return Fraction::checked_input(numer, denom, text);
        }

        let (mantissa, exponent) = match s.find(['e', 'E']) {
            Some(i) => (&s[..i], parse_int(&s[i + 1..], text)?),
            None => (s, 0),
        };
        let (negative, unsigned) = match mantissa.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
        };
        let (int_part, frac_part) = unsigned.split_once('.').unwrap_or((unsigned, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(FractionError::Invalid(text.to_string()));
        }
        if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
            return Err(FractionError::Invalid(text.to_string()));
        }
        let digits = format!("{int_part}{frac_part}");
        let digits = digits.trim_start_matches('0');
        let magnitude = if digits.is_empty() {
            0
        } else {
            parse_int(digits, text)?
        };
        let shift = exponent - frac_part.len() as i128;
        if shift.abs() > 30 {
            return Err(FractionError::OutOfRange(text.to_string()));
        }
        let pow = 10i128.pow(shift.unsigned_abs() as u32);
        let signed = if negative { -magnitude } else { magnitude };
        let (numer, denom) = if shift >= 0 {
            (
                signed
                    .checked_mul(pow)
                    .ok_or_else(|| FractionError::OutOfRange(text.to_string()))?,
                1,
            )
        } else {
            (signed, pow)
        };
        let value = Fraction(Ratio::new(numer, denom));
        Fraction::checked_input(value.numer(), value.denom(), text)
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

impl fmt::Debug for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Builds a reduced fraction from `numer / denom` with `denom > 0`.
/// Values that fit in 64 bits are reduced without 128-bit division.
fn reduced(numer: i128, denom: i128) -> Fraction {
    debug_assert!(denom > 0);
    if denom == 1 {
        return Fraction(Ratio::new_raw(numer, 1));
    }
    match (u64::try_from(numer.unsigned_abs()), u64::try_from(denom)) {
        (Ok(n), Ok(d)) => {
            let g = n.gcd(&d).max(1);
            let n = (n / g) as i128;
            Fraction(Ratio::new_raw(if numer < 0 { -n } else { n }, (d / g) as i128))
        }
        _ => Fraction(Ratio::new(numer, denom)),
    }
}

impl Add for Fraction {
    type Output = Fraction;
    fn add(self, rhs: Fraction) -> Fraction {
        let (a, b, c, d) = (self.numer(), self.denom(), rhs.numer(), rhs.denom());
        let fast = if b == d {
            a.checked_add(c).map(|n| (n, b))
        } else {
            a.checked_mul(d)
                .zip(c.checked_mul(b))
                .and_then(|(x, y)| x.checked_add(y))
                .zip(b.checked_mul(d))
        };
        match fast {
            Some((n, den)) => reduced(n, den),
            None => Fraction(self.0 + rhs.0),
        }
    }
}

impl Sub for Fraction {
    type Output = Fraction;
    fn sub(self, rhs: Fraction) -> Fraction {
        self + Fraction(-rhs.0)
    }
}

impl Mul for Fraction {
    type Output = Fraction;
    fn mul(self, rhs: Fraction) -> Fraction {
        match self.numer().checked_mul(rhs.numer()).zip(self.denom().checked_mul(rhs.denom())) {
            Some((n, d)) => reduced(n, d),
            None => Fraction(self.0 * rhs.0),
        }
    }
}

impl Div for Fraction {
    type Output = Fraction;
    fn div(self, rhs: Fraction) -> Fraction {
        assert!(!rhs.is_zero(), "division by zero");
        let sign = if rhs.numer() < 0 { -1 } else { 1 };
        match self
            .numer()
            .checked_mul(rhs.denom() * sign)
            .zip(self.denom().checked_mul(rhs.numer() * sign))
        {
            Some((n, d)) => reduced(n, d),
            None => Fraction(self.0 / rhs.0),
        }
    }
}

impl Ord for Fraction {
    fn cmp(&self, other: &Self) -> Ordering {
        // Denominators are positive, so cross-multiplication preserves order.
        if self.denom() == other.denom() {
            return self.numer().cmp(&other.numer());
        }
        match self.numer().checked_mul(other.denom()).zip(other.numer().checked_mul(self.denom())) {
            Some((x, y)) => x.cmp(&y),
            None => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for Fraction {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Sum for Fraction {
    fn sum<I: Iterator<Item = Fraction>>(iter: I) -> Fraction {
        iter.fold(Fraction::ZERO, Add::add)
    }
}

impl Zero for Fraction {
    fn zero() -> Self {
        Fraction::ZERO
    }
    fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}

impl One for Fraction {
    fn one() -> Self {
        Fraction::ONE
    }
}

/// Decimals with at most this many significant digits are emitted as JSON
/// numbers; everything else is written as an `"n/d"` string.
const MAX_JSON_DIGITS: usize = 15;

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.denom() == 1 {
            if let Ok(n) = i64::try_from(self.numer()) {
                return serializer.serialize_i64(n);
            }
        }
        if let Some(decimal) = self.to_decimal_string() {
            let significant = decimal
                .chars()
                .filter(char::is_ascii_digit)
                .collect::<String>()
                .trim_start_matches('0')
                .len();
            if significant <= MAX_JSON_DIGITS {
                return serializer.serialize_f64(self.to_f64());
            }
        }
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct FractionVisitor;

        impl Visitor<'_> for FractionVisitor {
            type Value = Fraction;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or a string like \"2/3\" or \"0.75\"")
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Fraction, E> {
                Fraction::checked_input(v as i128, 1, &v.to_string()).map_err(E::custom)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Fraction, E> {
                Fraction::checked_input(v as i128, 1, &v.to_string()).map_err(E::custom)
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Fraction, E> {
                Fraction::from_f64(v).map_err(E::custom)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Fraction, E> {
                v.parse().map_err(E::custom)
            }
        }

        deserializer.deserialize_any(FractionVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frac(n: i128, d: i128) -> Fraction {
        Fraction::new(n, d).unwrap()
    }

    #[test]
    fn parses_decimals_ratios_and_exponents() {
        assert_eq!("0.75".parse::<Fraction>().unwrap(), frac(3, 4));
        assert_eq!("2/3".parse::<Fraction>().unwrap(), frac(2, 3));
        assert_eq!(" 4 / 6 ".parse::<Fraction>().unwrap(), frac(2, 3));
        assert_eq!("1e-3".parse::<Fraction>().unwrap(), frac(1, 1000));
        assert_eq!("1.5E2".parse::<Fraction>().unwrap(), frac(150, 1));
        assert_eq!("-0.5".parse::<Fraction>().unwrap(), frac(-1, 2));
        assert_eq!(".5".parse::<Fraction>().unwrap(), frac(1, 2));
        assert!("1/0".parse::<Fraction>().is_err());
        assert!("abc".parse::<Fraction>().is_err());
        assert!("".parse::<Fraction>().is_err());
        assert!("1..2".parse::<Fraction>().is_err());
    }

    #[test]
    fn float_conversion_is_exact_on_the_shortest_decimal() {
        assert_eq!(Fraction::from_f64(0.1).unwrap(), frac(1, 10));
        assert_eq!(Fraction::from_f64(0.9).unwrap(), frac(9, 10));
        assert_eq!(Fraction::from_f64(1e-7).unwrap(), frac(1, 10_000_000));
    }

    #[test]
    fn decimal_strings() {
        assert_eq!(frac(3, 5).to_decimal_string().as_deref(), Some("0.6"));
        assert_eq!(frac(1, 8).to_decimal_string().as_deref(), Some("0.125"));
        assert_eq!(frac(-5, 2).to_decimal_string().as_deref(), Some("-2.5"));
        assert_eq!(frac(7, 1).to_decimal_string().as_deref(), Some("7"));
        assert_eq!(frac(2, 3).to_decimal_string(), None);
    }

    #[test]
    fn json_form() {
        assert_eq!(serde_json::to_string(&frac(1, 1)).unwrap(), "1");
        assert_eq!(serde_json::to_string(&frac(4, 5)).unwrap(), "0.8");
        assert_eq!(serde_json::to_string(&frac(2, 3)).unwrap(), "\"2/3\"");
        let parsed: Fraction = serde_json::from_str("0.9").unwrap();
        assert_eq!(parsed, frac(9, 10));
        let parsed: Fraction = serde_json::from_str("\"2/3\"").unwrap();
        assert_eq!(parsed, frac(2, 3));
    }

    #[test]
    fn wide_values_fall_back_to_ratio() {
        let big = 1i128 << 70;
        let (x, y) = (frac(big, 3), frac(big + 1, 7));
        let (rx, ry) = (Ratio::new(big, 3), Ratio::new(big + 1, 7));
        assert_eq!((x + y).0, rx + ry);
        assert_eq!((x * frac(3, big)).0, Ratio::from_integer(1));
        assert_eq!((x / y).0, rx / ry);
        assert_eq!(x.cmp(&y), rx.cmp(&ry));
    }

    proptest! {
        #[test]
        fn fast_paths_agree_with_ratio(
            a in -1_000_000i128..1_000_000, b in 1i128..10_000,
            c in -1_000_000i128..1_000_000, d in 1i128..10_000,
        ) {
            let (x, y) = (frac(a, b), frac(c, d));
            let (rx, ry) = (Ratio::new(a, b), Ratio::new(c, d));
            prop_assert_eq!((x + y).0, rx + ry);
            prop_assert_eq!((x - y).0, rx - ry);
            prop_assert_eq!((x * y).0, rx * ry);
            if c != 0 {
                prop_assert_eq!((x / y).0, rx / ry);
            }
            prop_assert_eq!(x.cmp(&y), rx.cmp(&ry));
        }

        #[test]
        fn json_round_trip(n in -1_000_000i128..1_000_000, d in 1i128..100_000) {
            let f = frac(n, d);
            let text = serde_json::to_string(&f).unwrap();
            let back: Fraction = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
