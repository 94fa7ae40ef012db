//! Exact rational arithmetic helpers.
//!
//! All arithmetic in this crate is over arbitrary-precision rationals;
//! nothing is ever rounded. `BigRational` keeps values in lowest terms
//! with a positive denominator, which gives us canonical equality for
//! certificate checking.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

/// The scalar type used everywhere: an arbitrary-precision rational,
/// always normalized (lowest terms, denominator > 0).
pub type Rational = BigRational;

/// Rational from an integer.
pub fn int(n: i64) -> Rational {
    BigRational::from_integer(BigInt::from(n))
}

/// Rational from numerator and denominator. Panics on a zero denominator.
pub fn rat(n: i64, d: i64) -> Rational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Parses `p` or `p/q` (optionally negated). Returns `None` on malformed
/// input or a zero denominator.
pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let mk = |v: Rational| if neg { -v } else { v };
    match body.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().ok()?;
            let d: BigInt = d.trim().parse().ok()?;
            if d.is_zero() {
                return None;
            }
            Some(mk(BigRational::new(n, d)))
        }
        None => {
            let n: BigInt = body.parse().ok()?;
            Some(mk(BigRational::from_integer(n)))
        }
    }
}

/// Smallest natural number >= `r`, for positive `r`; 0 for `r <= 0`.
pub fn ceil_to_nat(r: &Rational) -> BigUint {
    if !r.is_positive() {
        return BigUint::zero();
    }
    let c = r.ceil().to_integer();
    c.to_biguint().unwrap_or_else(BigUint::zero)
}

/// Renders a rational as `p` or `p/q` (the `Display` of `BigRational`
/// already does this; this helper exists for call-site clarity).
pub fn fmt_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_roundtrip() {
        assert_eq!(parse_rational("3"), Some(int(3)));
        assert_eq!(parse_rational("-3"), Some(int(-3)));
        assert_eq!(parse_rational("1/2"), Some(rat(1, 2)));
        assert_eq!(parse_rational("-4/6"), Some(rat(-2, 3)));
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(parse_rational("x"), None);
    }

    #[test]
    fn normalization_is_eager() {
        let r = rat(4, -6);
        assert_eq!(r, rat(-2, 3));
        assert!(r.denom() > &BigInt::zero());
    }

    #[test]
    fn ceil_nat() {
        assert_eq!(ceil_to_nat(&rat(3, 2)), BigUint::from(2u32));
        assert_eq!(ceil_to_nat(&int(2)), BigUint::from(2u32));
        assert_eq!(ceil_to_nat(&int(0)), BigUint::zero());
        assert_eq!(ceil_to_nat(&int(-7)), BigUint::zero());
        assert_eq!(ceil_to_nat(&rat(1, 100)), BigUint::from(1u32));
    }

    #[test]
    fn fmt() {
        assert_eq!(fmt_rational(&rat(1, 2)), "1/2");
        assert_eq!(fmt_rational(&int(-3)), "-3");
    }
}
