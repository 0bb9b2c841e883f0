//! Fixed-point numbers and the signed-integer embedding for the multiplicative domain.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use num_bigint::{BigInt, BigUint};
use num_traits::{One, ToPrimitive, Zero};
use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::group::{jacobi, Element, Group, Profile};

/// Decimal digits carried by one unit of scale.
pub const SCALE_DIGITS: u32 = 6;
pub const SCALE_FACTOR: i128 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FixedError {
    #[error("`{0}` is not a decimal number")]
    Syntax(String),
    #[error("`{0}` has more than six fractional digits")]
    TooPrecise(String),
    #[error("value does not fit the fixed-point range")]
    Overflow,
}

/// mantissa / 10^(6 * scale), compared as an exact rational.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Fixed {
    #[serde(with = "i128_text")]
    pub mantissa: i128,
    pub scale: u32,
}

// JSON numbers cannot carry the full i128 range.
mod i128_text {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &i128, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<i128, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

fn pow10(scale: u32) -> Option<i128> {
    10i128.checked_pow(SCALE_DIGITS * scale)
}

/// n / d rounded half away from zero.
pub fn round_div(n: i128, d: i128) -> i128 {
    assert!(d > 0, "positive divisor");
    let q = n / d;
    let r = n % d;
    if 2 * r.abs() >= d {
        q + n.signum()
    } else {
        q
    }
}

impl Fixed {
    pub const ZERO: Fixed = Fixed { mantissa: 0, scale: 1 };

    pub fn new(mantissa: i128, scale: u32) -> Fixed {
        Fixed { mantissa, scale }
    }

    pub fn from_int(n: i64) -> Fixed {
        Fixed { mantissa: n as i128 * SCALE_FACTOR, scale: 1 }
    }

    /// Parses an optionally signed decimal at scale one.
    pub fn parse(text: &str) -> Result<Fixed, FixedError> {
        let t = text.trim();
        let (neg, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        let digits_ok = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
        if int.is_empty() || !digits_ok(int) || !digits_ok(frac) || (body.contains('.') && frac.is_empty()) {
            return Err(FixedError::Syntax(text.to_string()));
        }
        let frac = frac.trim_end_matches('0');
        if frac.len() > SCALE_DIGITS as usize {
            return Err(FixedError::TooPrecise(text.to_string()));
        }
        let int: i128 = int.parse().map_err(|_| FixedError::Overflow)?;
        let mut frac_val: i128 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| FixedError::Overflow)? };
        for _ in frac.len()..SCALE_DIGITS as usize {
            frac_val *= 10;
        }
        let mag = int
            .checked_mul(SCALE_FACTOR)
            .and_then(|v| v.checked_add(frac_val))
            .ok_or(FixedError::Overflow)?;
        Ok(Fixed { mantissa: if neg { -mag } else { mag }, scale: 1 })
    }

    /// Converts to another scale, rounding when precision is dropped.
    pub fn rescale(&self, scale: u32) -> Option<Fixed> {
        match scale.cmp(&self.scale) {
            Ordering::Equal => Some(*self),
            Ordering::Greater => {
                let m = self.mantissa.checked_mul(pow10(scale - self.scale)?)?;
                Some(Fixed { mantissa: m, scale })
            }
            Ordering::Less => {
                let d = pow10(self.scale - scale)?;
                Some(Fixed { mantissa: round_div(self.mantissa, d), scale })
            }
        }
    }

    /// Brings a value to scale one, the scale of the additive domain.
    pub fn normalized(&self) -> Option<Fixed> {
        self.rescale(1)
    }

    pub fn checked_mul(&self, other: &Fixed) -> Option<Fixed> {
        Some(Fixed {
            mantissa: self.mantissa.checked_mul(other.mantissa)?,
            scale: self.scale + other.scale,
        })
    }

    pub fn to_f64(&self) -> f64 {
        self.mantissa as f64 / 10f64.powi((SCALE_DIGITS * self.scale) as i32)
    }

    fn as_ratio(&self) -> (BigInt, BigInt) {
        let den = BigInt::from(10u32).pow(SCALE_DIGITS * self.scale);
        (BigInt::from(self.mantissa), den)
    }
}

impl PartialEq for Fixed {
    fn eq(&self, other: &Fixed) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Fixed {}

impl PartialOrd for Fixed {
    fn partial_cmp(&self, other: &Fixed) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Fixed {
    fn cmp(&self, other: &Fixed) -> Ordering {
        let (a, da) = self.as_ratio();
        let (b, db) = other.as_ratio();
        (a * db).cmp(&(b * da))
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let digits = (SCALE_DIGITS * self.scale) as usize;
        let mag = BigUint::from(self.mantissa.unsigned_abs()).to_string();
        let padded = format!("{mag:0>width$}", width = digits + 1);
        let (int, frac) = padded.split_at(padded.len() - digits);
        let mut frac = frac.trim_end_matches('0').to_string();
        while frac.len() < 2 {
            frac.push('0');
        }
        let sign = if self.mantissa < 0 { "-" } else { "" };
        write!(f, "{sign}{int}.{frac}")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("the {0} group is too small for the integer embedding")]
    GroupTooSmall(Profile),
    #[error("element does not decode to an integer within range")]
    OutOfRange,
}

/// Largest magnitude, in bits, accepted on decode.
pub const MAGNITUDE_BITS: u64 = 126;
/// Most negative or zero factors a decodable product may contain.
pub const MAX_MARKED_FACTORS: u32 = 8;

/// Embeds signed integers into a residue group so that the group operation is
/// integer multiplication.
///
/// n maps to pi(max(|n|, 1)) * sigma^[n < 0] * zeta^[n = 0], where pi picks
/// whichever of x and p - x is a residue. pi is multiplicative, so a product of
/// encodings is pi(product of magnitudes) times sigma and zeta powers that
/// count negative and zero factors. Decoding strips candidate powers until the
/// remainder is a small magnitude.
#[derive(Debug)]
pub struct IntegerCodec {
    group: Group,
    sigma: Element,
    zeta: Element,
    // (negative count, zero count, sigma^-a zeta^-b), by increasing a + b
    unmask: Vec<(u32, u32, Element)>,
}

static CODEC: Lazy<Arc<IntegerCodec>> =
    Lazy::new(|| Arc::new(IntegerCodec::new(Group::shared(Profile::Modp1536)).expect("large group")));

impl IntegerCodec {
    pub fn new(group: Group) -> Result<IntegerCodec, CodecError> {
        let p = group.modulus().ok_or(CodecError::GroupTooSmall(group.profile()))?;
        if p.bits() < 2 * MAGNITUDE_BITS + 128 {
            return Err(CodecError::GroupTooSmall(group.profile()));
        }
        let sigma = hash_to_residue(&group, b"flowseal/negative");
        let zeta = hash_to_residue(&group, b"flowseal/zero");
        let si = group.inv(&sigma);
        let zi = group.inv(&zeta);
        let mut unmask = Vec::new();
        for total in 0..=2 * MAX_MARKED_FACTORS {
            for a in 0..=total.min(MAX_MARKED_FACTORS) {
                let b = total - a;
                if b > MAX_MARKED_FACTORS {
                    continue;
                }
                let mut e = group.identity();
                for _ in 0..a {
                    e = group.op(&e, &si);
                }
                for _ in 0..b {
                    e = group.op(&e, &zi);
                }
                unmask.push((a, b, e));
            }
        }
        Ok(IntegerCodec { group, sigma, zeta, unmask })
    }

    /// Shared codec for the 1536-bit group.
    pub fn shared() -> Arc<IntegerCodec> {
        CODEC.clone()
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    pub fn encode(&self, n: i128) -> Result<Element, CodecError> {
        let mag = n.unsigned_abs().max(1);
        if 128 - mag.leading_zeros() as u64 > MAGNITUDE_BITS {
            return Err(CodecError::OutOfRange);
        }
        let p = self.group.modulus().expect("residue group");
        let x = BigUint::from(mag);
        let base = if jacobi(&x, p) == 1 { x } else { p - x };
        let mut e = Element::Residue(base);
        if n < 0 {
            e = self.group.op(&e, &self.sigma);
        }
        if n == 0 {
            e = self.group.op(&e, &self.zeta);
        }
        Ok(e)
    }

    pub fn decode(&self, m: &Element) -> Result<i128, CodecError> {
        let p = self.group.modulus().expect("residue group");
        for (a, b, mask) in &self.unmask {
            let Element::Residue(c) = self.group.op(m, mask) else {
                return Err(CodecError::OutOfRange);
            };
            let r = if &c + &c > *p { p - &c } else { c };
            if r.bits() <= MAGNITUDE_BITS && !r.is_zero() {
                if *b > 0 {
                    return Ok(0);
                }
                let v = r.to_i128().ok_or(CodecError::OutOfRange)?;
                return Ok(if a % 2 == 1 { -v } else { v });
            }
        }
        Err(CodecError::OutOfRange)
    }
}

fn hash_to_residue(group: &Group, tag: &[u8]) -> Element {
    let p = group.modulus().expect("residue group");
    let want = group.element_len() + 16;
    let mut bytes = Vec::with_capacity(want + 32);
    let mut counter = 0u32;
    while bytes.len() < want {
        let mut h = Sha256::new();
        h.update(tag);
        h.update(counter.to_be_bytes());
        bytes.extend_from_slice(&h.finalize());
        counter += 1;
    }
    let x = BigUint::from_bytes_be(&bytes[..want]) % p;
    let x = if x.is_zero() { BigUint::one() + 1u32 } else { x };
    Element::Residue((&x * &x) % p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn decimal_parsing() {
        assert_eq!(Fixed::parse("19.99").unwrap().mantissa, 19_990_000);
        assert_eq!(Fixed::parse("0.90").unwrap().mantissa, 900_000);
        assert_eq!(Fixed::parse("500").unwrap().mantissa, 500_000_000);
        assert_eq!(Fixed::parse("-0.5").unwrap().mantissa, -500_000);
        assert_eq!(Fixed::parse("1.2500000").unwrap().mantissa, 1_250_000);
        assert!(matches!(Fixed::parse("1.0000001"), Err(FixedError::TooPrecise(_))));
        assert!(matches!(Fixed::parse("1."), Err(FixedError::Syntax(_))));
        assert!(matches!(Fixed::parse("abc"), Err(FixedError::Syntax(_))));
        assert!(matches!(Fixed::parse(".5"), Err(FixedError::Syntax(_))));
    }

    #[test]
    fn rational_equality_across_scales() {
        let a = Fixed::new(540_000_000, 1);
        let b = Fixed::new(540_000_000_000_000, 2);
        assert_eq!(a, b);
        assert!(Fixed::new(1, 2) < Fixed::new(1, 1));
        assert_eq!(b.to_string(), "540.00");
        assert_eq!(Fixed::new(-1_234_500, 1).to_string(), "-1.2345");
        assert_eq!(Fixed::new(5, 1).to_string(), "0.000005");
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(round_div(15, 10), 2);
        assert_eq!(round_div(14, 10), 1);
        assert_eq!(round_div(-15, 10), -2);
        assert_eq!(round_div(-14, 10), -1);
        let v = Fixed::new(1_500_000, 2).normalized().unwrap();
        assert_eq!(v.mantissa, 2);
        let v = Fixed::new(3, 1).rescale(2).unwrap();
        assert_eq!(v.mantissa, 3_000_000);
    }

    #[test]
    fn cart_discount_products() {
        let sum = Fixed::parse("600").unwrap();
        let d = Fixed::parse("0.90").unwrap();
        let total = sum.checked_mul(&d).unwrap();
        assert_eq!(total.scale, 2);
        assert_eq!(total, Fixed::parse("540").unwrap());
        let total = Fixed::parse("300").unwrap().checked_mul(&Fixed::parse("0.95").unwrap()).unwrap();
        assert_eq!(total.to_string(), "285.00");
    }

    #[test]
    fn integer_embedding_is_multiplicative() {
        let codec = IntegerCodec::shared();
        let g = codec.group().clone();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let samples: Vec<i128> = vec![0, 1, -1, 2, -7, 19_990_000, -500_000_000, i64::MAX as i128];
        for &a in &samples {
            assert_eq!(codec.decode(&codec.encode(a).unwrap()).unwrap(), a);
            for &b in &samples {
                if let Some(prod) = a.checked_mul(b) {
                    if prod.unsigned_abs() < 1u128 << 126 {
                        let e = g.op(&codec.encode(a).unwrap(), &codec.encode(b).unwrap());
                        assert_eq!(codec.decode(&e).unwrap(), prod, "{a} * {b}");
                    }
                }
            }
        }
        for _ in 0..50 {
            let a: i64 = rng.gen_range(-1_000_000_000..1_000_000_000);
            let b: i64 = rng.gen_range(-1_000_000_000..1_000_000_000);
            let c: i32 = rng.gen();
            let e = g.op(&g.op(&codec.encode(a as i128).unwrap(), &codec.encode(b as i128).unwrap()), &codec.encode(c as i128).unwrap());
            assert_eq!(codec.decode(&e).unwrap(), a as i128 * b as i128 * c as i128);
        }
    }

    #[test]
    fn embedding_rejects_out_of_range() {
        let codec = IntegerCodec::shared();
        assert_eq!(codec.encode(i128::MAX), Err(CodecError::OutOfRange));
        let g = codec.group();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        assert_eq!(codec.decode(&g.random_element(&mut rng)), Err(CodecError::OutOfRange));
        assert!(IntegerCodec::new(Group::new(Profile::TestTiny)).is_err());
        assert!(IntegerCodec::new(Group::new(Profile::CurveStrong)).is_err());
    }
}
