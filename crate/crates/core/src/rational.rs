//! Exact rational helpers shared by every module.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Rational = BigRational;

pub fn int(v: i64) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

pub fn ratio(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn pow2_big(exp: u64) -> BigInt {
    BigInt::one() << exp
}

pub fn pow2_ubig(exp: u64) -> BigUint {
    BigUint::one() << exp
}

/// `num / 2^exp` as an exact rational.
pub fn dyadic(num: impl Into<BigInt>, exp: u64) -> Rational {
    Rational::new(num.into(), pow2_big(exp))
}

/// `2^(-exp)`.
pub fn inv_pow2(exp: u64) -> Rational {
    dyadic(1, exp)
}

/// Parses `"p/q"`, integers, decimals and scientific notation into an exact
/// rational. `"0.1"` is exactly one tenth.
pub fn parse_rational(text: &str) -> Result<Rational> {
    let s = text.trim();
    let bad = || Error::Parameter(format!("cannot parse {text:?} as a rational"));
    if s.is_empty() {
        return Err(bad());
    }
    if let Some((p, q)) = s.split_once('/') {
        let p: BigInt = p.trim().parse().map_err(|_| bad())?;
        let q: BigInt = q.trim().parse().map_err(|_| bad())?;
        if q.is_zero() {
            return Err(Error::Parameter(format!("zero denominator in {text:?}")));
        }
        return Ok(Rational::new(p, q));
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(pos) => {
            let e: i64 = s[pos + 1..].parse().map_err(|_| bad())?;
            (&s[..pos], e)
        }
        None => (s, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let all_digits = format!("{int_part}{frac_part}");
    let mut value = Rational::from_integer(all_digits.parse::<BigInt>().map_err(|_| bad())?);
    let scale = exponent - frac_part.len() as i64;
    if exponent.unsigned_abs() > 10_000 {
        return Err(bad());
    }
    let ten = BigInt::from(10);
    if scale >= 0 {
        value *= Rational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        value /= Rational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Ok(if negative { -value } else { value })
}

/// Exact value of the shortest decimal rendering of `x`, so `0.1_f64`
/// becomes exactly `1/10`.
pub fn from_f64_decimal(x: f64) -> Result<Rational> {
    if !x.is_finite() {
        return Err(Error::Parameter(format!("{x} is not finite")));
    }
    parse_rational(&format!("{x}"))
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Renders a rational as `p/q` (or `p` for integers).
pub fn format_rational(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Outward-rounded `f64` enclosure of a rational.
pub fn f64_enclosure(r: &Rational) -> (f64, f64) {
    let x = to_f64(r);
    (x.next_down().next_down(), x.next_up().next_up())
}

/// `floor(r)` for a non-negative rational.
pub fn floor_nonneg(r: &Rational) -> BigUint {
    debug_assert!(!r.is_negative());
    r.floor().to_integer().to_biguint().unwrap_or_default()
}

pub fn ubig_to_rational(v: &BigUint) -> Rational {
    Rational::from_integer(BigInt::from(v.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_common_forms() {
        assert_eq!(parse_rational("3/4").unwrap(), ratio(3, 4));
        assert_eq!(parse_rational("0.1").unwrap(), ratio(1, 10));
        assert_eq!(parse_rational("-2.5").unwrap(), ratio(-5, 2));
        assert_eq!(parse_rational("1e-3").unwrap(), ratio(1, 1000));
        assert_eq!(parse_rational("2.5E2").unwrap(), int(250));
        assert_eq!(parse_rational(".5").unwrap(), ratio(1, 2));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("").is_err());
    }

    #[test]
    fn f64_goes_through_decimal() {
        assert_eq!(from_f64_decimal(0.3).unwrap(), ratio(3, 10));
        assert_eq!(from_f64_decimal(1e-3).unwrap(), ratio(1, 1000));
        assert!(from_f64_decimal(f64::NAN).is_err());
    }

    #[test]
    fn enclosure_contains_value() {
        let r = ratio(1, 3);
        let (lo, hi) = f64_enclosure(&r);
        assert!(lo < 1.0 / 3.0 && 1.0 / 3.0 < hi);
    }
}
