//! Scalar abstraction shared by every width, multiplier, and fraction in the crate.
//!
//! Widths are positive rationals. Most callers use `f64`; `Rational64` gives exact
//! arithmetic where a ratio must come out bit-exact (overhead accounting, stacking
//! equivalence). Channel counts and MACs stay integers regardless of the scalar.

use std::fmt::Debug;

use num_rational::Rational64;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Numeric type usable as a width multiplier.
pub trait Scalar:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    /// `num / den` in this scalar type.
    fn from_ratio(num: u64, den: u64) -> Self;

    /// Floor of a non-negative value. `None` for negative or non-finite input.
    fn floor_u64(self) -> Option<u64>;

    /// Parses `"0.312"`, `"3"`, or `"39/125"`.
    fn parse_decimal(s: &str) -> Option<Self>;

    /// Canonical text form; `parse_decimal` of the result yields the same value.
    fn to_decimal(&self) -> String;

    fn as_f64(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Round-half-up of a non-negative value.
    fn round_half_up(self) -> Option<u64> {
        (self + Self::from_ratio(1, 2)).floor_u64()
    }

    /// `round_half_up(n * self)` computed without passing `n` through the scalar
    /// (large counts would lose precision in `f32`).
    fn scale_count(self, n: u128) -> u128 {
        let v = n as f64 * self.as_f64();
        (v + 0.5).floor().max(0.0) as u128
    }

    fn is_positive(&self) -> bool {
        *self > Self::zero()
    }
}

fn parse_float_text(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: f64 = n.trim().parse().ok()?;
        let d: f64 = d.trim().parse().ok()?;
        if d == 0.0 {
            return None;
        }
        return Some(n / d);
    }
    s.parse().ok()
}

impl Scalar for f64 {
    fn from_ratio(num: u64, den: u64) -> Self {
        num as f64 / den as f64
    }

    fn floor_u64(self) -> Option<u64> {
        if !self.is_finite() || self < 0.0 {
            return None;
        }
        Some(self.floor() as u64)
    }

    fn parse_decimal(s: &str) -> Option<Self> {
        parse_float_text(s).filter(|v| v.is_finite())
    }

    fn to_decimal(&self) -> String {
        format!("{self}")
    }
}

impl Scalar for f32 {
    fn from_ratio(num: u64, den: u64) -> Self {
        (num as f64 / den as f64) as f32
    }

    fn floor_u64(self) -> Option<u64> {
        if !self.is_finite() || self < 0.0 {
            return None;
        }
        Some(self.floor() as u64)
    }

    fn parse_decimal(s: &str) -> Option<Self> {
        let s = s.trim();
        if s.contains('/') {
            return parse_float_text(s).map(|v| v as f32).filter(|v| v.is_finite());
        }
        s.parse::<f32>().ok().filter(|v| v.is_finite())
    }

    fn to_decimal(&self) -> String {
        format!("{self}")
    }
}

impl Scalar for Rational64 {
    fn from_ratio(num: u64, den: u64) -> Self {
        Rational64::new(num as i64, den as i64)
    }

    fn floor_u64(self) -> Option<u64> {
        if self < Rational64::from_integer(0) {
            return None;
        }
        u64::try_from(self.floor().to_integer()).ok()
    }

    fn parse_decimal(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n: i64 = n.trim().parse().ok()?;
            let d: i64 = d.trim().parse().ok()?;
            if d == 0 {
                return None;
            }
            return Some(Rational64::new(n, d));
        }
        let (negative, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
            return None;
        }
        let digits = format!("{int_part}{frac_part}");
        let numer: i64 = digits.parse().ok()?;
        let denom = 10i64.checked_pow(frac_part.len() as u32)?;
        let value = Rational64::new(numer, denom);
        Some(if negative { -value } else { value })
    }

    /// Terminating decimal when the denominator is `2^a 5^b`, otherwise `p/q`.
    fn to_decimal(&self) -> String {
        let (numer, denom) = (*self.numer(), *self.denom());
        if denom == 1 {
            return format!("{numer}");
        }
        let mut d = denom;
        let (mut twos, mut fives) = (0u32, 0u32);
        while d % 2 == 0 {
            d /= 2;
            twos += 1;
        }
        while d % 5 == 0 {
            d /= 5;
            fives += 1;
        }
        let digits = twos.max(fives);
        let scaled = 10i128
            .checked_pow(digits)
            .and_then(|p| (numer as i128).checked_mul(p / denom as i128));
        match scaled {
            Some(scaled) if d == 1 => {
                let sign = if scaled < 0 { "-" } else { "" };
                let abs = scaled.unsigned_abs();
                let p = 10u128.pow(digits);
                format!("{sign}{}.{:0width$}", abs / p, abs % p, width = digits as usize)
            }
            _ => format!("{numer}/{denom}"),
        }
    }

    fn round_half_up(self) -> Option<u64> {
        (self + Rational64::new(1, 2)).floor_u64()
    }

    fn scale_count(self, n: u128) -> u128 {
        let numer = *self.numer() as i128;
        let denom = *self.denom() as i128;
        if numer <= 0 {
            return 0;
        }
        let scaled = (n as i128).saturating_mul(numer);
        // floor((2*scaled + denom) / (2*denom)) == round half up of scaled/denom
        ((scaled.saturating_mul(2) + denom) / (denom * 2)) as u128
    }
}

/// Serde adapter writing a scalar as its decimal string (`#[serde(with = "decimal")]`).
pub mod decimal {
    use serde::{de, Deserialize, Deserializer, Serializer};

    use super::Scalar;

    pub fn serialize<T: Scalar, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_decimal())
    }

    pub fn deserialize<'de, T: Scalar, D: Deserializer<'de>>(d: D) -> Result<T, D::Error> {
        let text = String::deserialize(d)?;
        T::parse_decimal(&text).ok_or_else(|| de::Error::custom(format!("bad decimal `{text}`")))
    }
}

/// Simplest rational (smallest denominator) in `[lo, hi]`, both positive and finite.
/// Returns `None` when the continued-fraction walk does not converge in a few dozen steps.
pub(crate) fn simplest_rational_between(lo: f64, hi: f64) -> Option<(u64, u64)> {
    fn walk(lo: f64, hi: f64, depth: u32) -> Option<(u64, u64)> {
        if depth > 40 || !(lo.is_finite() && hi.is_finite()) || lo > hi || lo < 0.0 {
            return None;
        }
        let ceil = lo.ceil();
        if ceil <= hi {
            return Some((ceil as u64, 1));
        }
        let whole = lo.floor();
        let (p, q) = walk(1.0 / (hi - whole), 1.0 / (lo - whole), depth + 1)?;
        let numer = (whole as u64).checked_mul(p)?.checked_add(q)?;
        Some((numer, p))
    }
    walk(lo, hi, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_half_up_matches_channel_examples() {
        assert_eq!((64.0f64 * 0.312).round_half_up(), Some(20));
        assert_eq!((512.0f64 * 2.539).round_half_up(), Some(1300));
        assert_eq!(2.5f64.round_half_up(), Some(3));
        let exact = Rational64::from_integer(64) * Rational64::parse_decimal("0.312").unwrap();
        assert_eq!(exact.round_half_up(), Some(20));
        assert_eq!(Rational64::new(5, 2).round_half_up(), Some(3));
    }

    #[test]
    fn decimal_text_round_trips() {
        for s in ["0.312", "1.732", "3", "0.1"] {
            let v = f64::parse_decimal(s).unwrap();
            assert_eq!(f64::parse_decimal(&v.to_decimal()), Some(v));
            let r = Rational64::parse_decimal(s).unwrap();
            assert_eq!(Rational64::parse_decimal(&r.to_decimal()), Some(r));
        }
        assert_eq!(Rational64::parse_decimal("0.312"), Some(Rational64::new(39, 125)));
        assert_eq!(Rational64::parse_decimal("39/125"), Some(Rational64::new(39, 125)));
        assert_eq!(Rational64::new(39, 125).to_decimal(), "0.312");
        assert_eq!(Rational64::new(-1, 40).to_decimal(), "-0.025");
        assert_eq!(Rational64::new(1, 3).to_decimal(), "1/3");
        assert_eq!(Rational64::new(7, 2).to_decimal(), "3.5");
        assert_eq!(f64::parse_decimal("1/4"), Some(0.25));
        assert!(f64::parse_decimal("abc").is_none());
        assert!(Rational64::parse_decimal("1/0").is_none());
    }

    #[test]
    fn scale_count_rounds_half_up() {
        assert_eq!(Rational64::new(1, 2).scale_count(5), 3);
        assert_eq!(Rational64::new(1, 3).scale_count(9), 3);
        assert_eq!(2.0f64.scale_count(21), 42);
        assert_eq!(0.5f64.scale_count(5), 3);
    }

    #[test]
    fn simplest_rational_prefers_small_denominators() {
        assert_eq!(simplest_rational_between(1.99, 2.01), Some((2, 1)));
        assert_eq!(simplest_rational_between(0.33, 0.34), Some((1, 3)));
        assert_eq!(simplest_rational_between(0.6, 0.7), Some((2, 3)));
        let (p, q) = simplest_rational_between(0.312, 0.3125).unwrap();
        let v = p as f64 / q as f64;
        assert!((0.312..=0.3125).contains(&v));
    }
}
