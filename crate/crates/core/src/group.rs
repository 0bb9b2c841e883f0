//! Prime-order groups, exponents and the identifier PRF.
//!
//! Three parameter profiles are available. `test-tiny` is the quadratic
//! residue subgroup of Z_2063^* (order 1031) and exists so that tests can
//! brute-force every plaintext. `modp-1536` is the prime-order subgroup of the
//! 1536-bit MODP safe prime. `curve-strong` is Ristretto255.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use curve25519_dalek::constants::{RISTRETTO_BASEPOINT_POINT, RISTRETTO_BASEPOINT_TABLE};
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoBasepointTable, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::Identity;
use hmac::{Hmac, Mac};
use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, ToPrimitive, Zero};
use once_cell::sync::Lazy;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

const MODP_1536_HEX: &str = "\
    FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD1\
    29024E088A67CC74020BBEA63B139B22514A08798E3404DD\
    EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245\
    E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED\
    EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3D\
    C2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F\
    83655D23DCA3AD961C62F356208552BB9ED529077096966D\
    670C354E4ABC9804F1746C08CA237327FFFFFFFFFFFFFFFF";

const TINY_P: u32 = 2063;
const TINY_G: u32 = 4;
const WINDOW_BITS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    TestTiny,
    Modp1536,
    CurveStrong,
}

impl Profile {
    pub const ALL: [Profile; 3] = [Profile::TestTiny, Profile::Modp1536, Profile::CurveStrong];

    pub fn id(self) -> u8 {
        match self {
            Profile::TestTiny => 1,
            Profile::Modp1536 => 2,
            Profile::CurveStrong => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<Profile> {
        Profile::ALL.into_iter().find(|p| p.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::TestTiny => "test-tiny",
            Profile::Modp1536 => "modp-1536",
            Profile::CurveStrong => "curve-strong",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = GroupError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| GroupError::UnknownProfile(s.to_string()))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupError {
    #[error("unknown group profile `{0}`")]
    UnknownProfile(String),
    #[error("element encoding has {got} bytes, expected {expected}")]
    Length { got: usize, expected: usize },
    #[error("bytes do not encode an element of the group")]
    NotMember,
    #[error("PRF key must be at least 16 bytes")]
    ShortKey,
}

/// A group element. Residues are always reduced and lie in the order-q subgroup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Element {
    Residue(BigUint),
    Point(RistrettoPoint),
}

/// An exponent reduced modulo the order of the group that produced it.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Exponent(BigUint);

impl Exponent {
    pub fn value(&self) -> &BigUint {
        &self.0
    }

    fn to_scalar(&self) -> Scalar {
        let mut bytes = [0u8; 32];
        let le = self.0.to_bytes_le();
        bytes[..le.len()].copy_from_slice(&le);
        Scalar::from_bytes_mod_order(bytes)
    }
}

/// Counts of group work, used to check that trusted operations have a fixed shape.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub exps: u64,
    pub mults: u64,
    pub lookups: u64,
}

impl std::ops::Sub for OpCount {
    type Output = OpCount;

    fn sub(self, rhs: OpCount) -> OpCount {
        OpCount {
            exps: self.exps - rhs.exps,
            mults: self.mults - rhs.mults,
            lookups: self.lookups - rhs.lookups,
        }
    }
}

#[derive(Debug, Default)]
pub struct OpMeter {
    exps: AtomicU64,
    mults: AtomicU64,
    lookups: AtomicU64,
}

impl OpMeter {
    pub fn snapshot(&self) -> OpCount {
        OpCount {
            exps: self.exps.load(Ordering::Relaxed),
            mults: self.mults.load(Ordering::Relaxed),
            lookups: self.lookups.load(Ordering::Relaxed),
        }
    }

    pub(crate) fn lookup(&self) {
        self.lookups.fetch_add(1, Ordering::Relaxed);
    }

    fn exp(&self) {
        self.exps.fetch_add(1, Ordering::Relaxed);
    }

    fn mult(&self) {
        self.mults.fetch_add(1, Ordering::Relaxed);
    }
}

/// Precomputation for repeated exponentiation of one base.
pub struct FixedBase(FixedRepr);

enum FixedRepr {
    // rows[i][k - 1] = base^(k * 2^(WINDOW_BITS * i))
    Windows(Vec<Vec<BigUint>>),
    Point(Box<RistrettoBasepointTable>),
    Basepoint,
}

impl fmt::Debug for FixedBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FixedBase(..)")
    }
}

enum Kind {
    Modp { p: BigUint, g: BigUint, width: usize },
    Ristretto,
}

struct Inner {
    profile: Profile,
    order: BigUint,
    kind: Kind,
    meter: OpMeter,
    gen_table: FixedBase,
}

/// Handle to a group description. Cloning shares parameters and the op meter.
#[derive(Clone)]
pub struct Group(Arc<Inner>);

impl fmt::Debug for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Group({})", self.0.profile)
    }
}

impl PartialEq for Group {
    fn eq(&self, other: &Group) -> bool {
        self.0.profile == other.0.profile
    }
}

impl Eq for Group {}

static SHARED: Lazy<[Group; 3]> = Lazy::new(|| Profile::ALL.map(Group::new));

/// Builds a group for a profile. Same as [`Group::new`].
pub fn make_group(profile: Profile) -> Group {
    Group::new(profile)
}

impl Group {
    /// Builds a fresh group instance with its own op meter.
    pub fn new(profile: Profile) -> Group {
        let (order, kind) = match profile {
            Profile::TestTiny => {
                let p = BigUint::from(TINY_P);
                let q = (&p - 1u32) >> 1;
                (q, Kind::Modp { p, g: BigUint::from(TINY_G), width: 2 })
            }
            Profile::Modp1536 => {
                let p = BigUint::parse_bytes(MODP_1536_HEX.as_bytes(), 16).expect("valid modulus");
                let q = (&p - 1u32) >> 1;
                let width = p.bits().div_ceil(8) as usize;
                (q, Kind::Modp { p, g: BigUint::from(2u32), width })
            }
            Profile::CurveStrong => {
                let l = (BigUint::one() << 252u32)
                    + BigUint::parse_bytes(b"27742317777372353535851937790883648493", 10)
                        .expect("valid order");
                (l, Kind::Ristretto)
            }
        };
        let gen_table = match &kind {
            Kind::Modp { p, g, .. } => FixedBase(FixedRepr::Windows(window_rows(g, p, &order))),
            Kind::Ristretto => FixedBase(FixedRepr::Basepoint),
        };
        Group(Arc::new(Inner { profile, order, kind, meter: OpMeter::default(), gen_table }))
    }

    /// Process-wide instance for a profile; its meter is shared by every user.
    pub fn shared(profile: Profile) -> Group {
        SHARED[profile.id() as usize - 1].clone()
    }

    pub fn profile(&self) -> Profile {
        self.0.profile
    }

    pub fn order(&self) -> &BigUint {
        &self.0.order
    }

    /// The safe prime p for residue groups.
    pub fn modulus(&self) -> Option<&BigUint> {
        match &self.0.kind {
            Kind::Modp { p, .. } => Some(p),
            Kind::Ristretto => None,
        }
    }

    pub fn meter(&self) -> &OpMeter {
        &self.0.meter
    }

    pub fn generator(&self) -> Element {
        match &self.0.kind {
            Kind::Modp { g, .. } => Element::Residue(g.clone()),
            Kind::Ristretto => Element::Point(RISTRETTO_BASEPOINT_POINT),
        }
    }

    pub fn identity(&self) -> Element {
        match &self.0.kind {
            Kind::Modp { .. } => Element::Residue(BigUint::one()),
            Kind::Ristretto => Element::Point(RistrettoPoint::identity()),
        }
    }

    pub fn is_identity(&self, a: &Element) -> bool {
        *a == self.identity()
    }

    pub fn element_len(&self) -> usize {
        match &self.0.kind {
            Kind::Modp { width, .. } => *width,
            Kind::Ristretto => 32,
        }
    }

    pub fn op(&self, a: &Element, b: &Element) -> Element {
        self.0.meter.mult();
        match (&self.0.kind, a, b) {
            (Kind::Modp { p, .. }, Element::Residue(x), Element::Residue(y)) => {
                Element::Residue((x * y) % p)
            }
            (Kind::Ristretto, Element::Point(x), Element::Point(y)) => Element::Point(x + y),
            _ => panic!("element does not belong to {:?}", self),
        }
    }

    pub fn inv(&self, a: &Element) -> Element {
        self.0.meter.mult();
        match (&self.0.kind, a) {
            (Kind::Modp { p, .. }, Element::Residue(x)) => {
                Element::Residue(x.modinv(p).expect("residues are invertible"))
            }
            (Kind::Ristretto, Element::Point(x)) => Element::Point(-x),
            _ => panic!("element does not belong to {:?}", self),
        }
    }

    pub fn div(&self, a: &Element, b: &Element) -> Element {
        self.op(a, &self.inv(b))
    }

    pub fn exp(&self, base: &Element, e: &Exponent) -> Element {
        self.0.meter.exp();
        match (&self.0.kind, base) {
            (Kind::Modp { p, .. }, Element::Residue(x)) => Element::Residue(x.modpow(&e.0, p)),
            (Kind::Ristretto, Element::Point(x)) => Element::Point(x * e.to_scalar()),
            _ => panic!("element does not belong to {:?}", self),
        }
    }

    /// g^e through the precomputed generator table.
    pub fn exp_g(&self, e: &Exponent) -> Element {
        self.exp_fixed(&self.0.gen_table, e)
    }

    pub fn fixed_base(&self, base: &Element) -> FixedBase {
        match (&self.0.kind, base) {
            (Kind::Modp { p, .. }, Element::Residue(x)) => {
                FixedBase(FixedRepr::Windows(window_rows(x, p, &self.0.order)))
            }
            (Kind::Ristretto, Element::Point(x)) => {
                FixedBase(FixedRepr::Point(Box::new(RistrettoBasepointTable::create(x))))
            }
            _ => panic!("element does not belong to {:?}", self),
        }
    }

    pub fn exp_fixed(&self, fb: &FixedBase, e: &Exponent) -> Element {
        self.0.meter.exp();
        match (&self.0.kind, &fb.0) {
            (Kind::Modp { p, .. }, FixedRepr::Windows(rows)) => {
                let bytes = e.0.to_bytes_le();
                let mut acc = BigUint::one();
                for (i, row) in rows.iter().enumerate() {
                    let digit = window_digit(&bytes, i * WINDOW_BITS);
                    if digit != 0 {
                        acc = (acc * &row[digit - 1]) % p;
                    }
                }
                Element::Residue(acc)
            }
            (Kind::Ristretto, FixedRepr::Point(table)) => Element::Point(&e.to_scalar() * &**table),
            (Kind::Ristretto, FixedRepr::Basepoint) => {
                Element::Point(&e.to_scalar() * RISTRETTO_BASEPOINT_TABLE)
            }
            _ => panic!("fixed base does not belong to {:?}", self),
        }
    }

    /// Canonical fixed-width encoding: big-endian residue or compressed point.
    pub fn encode(&self, a: &Element) -> Vec<u8> {
        match (&self.0.kind, a) {
            (Kind::Modp { width, .. }, Element::Residue(x)) => {
                let be = x.to_bytes_be();
                let mut out = vec![0u8; *width];
                out[*width - be.len()..].copy_from_slice(&be);
                out
            }
            (Kind::Ristretto, Element::Point(x)) => x.compress().to_bytes().to_vec(),
            _ => panic!("element does not belong to {:?}", self),
        }
    }

    pub fn decode(&self, bytes: &[u8]) -> Result<Element, GroupError> {
        let expected = self.element_len();
        if bytes.len() != expected {
            return Err(GroupError::Length { got: bytes.len(), expected });
        }
        match &self.0.kind {
            Kind::Modp { .. } => {
                let e = Element::Residue(BigUint::from_bytes_be(bytes));
                if self.is_member(&e) {
                    Ok(e)
                } else {
                    Err(GroupError::NotMember)
                }
            }
            Kind::Ristretto => CompressedRistretto::from_slice(bytes)
                .ok()
                .and_then(|c| c.decompress())
                .map(Element::Point)
                .ok_or(GroupError::NotMember),
        }
    }

    pub fn is_member(&self, a: &Element) -> bool {
        match (&self.0.kind, a) {
            (Kind::Modp { p, .. }, Element::Residue(x)) => {
                !x.is_zero() && x < p && jacobi(x, p) == 1
            }
            (Kind::Ristretto, Element::Point(_)) => true,
            _ => false,
        }
    }

    pub fn random_exponent<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Exponent {
        Exponent(rng.gen_biguint_below(&self.0.order))
    }

    pub fn random_element<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Element {
        let e = self.random_exponent(rng);
        self.exp_g(&e)
    }

    pub fn exponent(&self, v: &BigUint) -> Exponent {
        Exponent(v % &self.0.order)
    }

    pub fn exponent_u64(&self, v: u64) -> Exponent {
        self.exponent(&BigUint::from(v))
    }

    pub fn exponent_i128(&self, v: i128) -> Exponent {
        let mag = self.exponent(&BigUint::from(v.unsigned_abs()));
        if v < 0 {
            self.exp_neg(&mag)
        } else {
            mag
        }
    }

    pub fn exp_add(&self, a: &Exponent, b: &Exponent) -> Exponent {
        Exponent((&a.0 + &b.0) % &self.0.order)
    }

    pub fn exp_mul(&self, a: &Exponent, b: &Exponent) -> Exponent {
        Exponent((&a.0 * &b.0) % &self.0.order)
    }

    pub fn exp_neg(&self, a: &Exponent) -> Exponent {
        if a.0.is_zero() {
            a.clone()
        } else {
            Exponent(&self.0.order - &a.0)
        }
    }

    pub fn exp_sub(&self, a: &Exponent, b: &Exponent) -> Exponent {
        self.exp_add(a, &self.exp_neg(b))
    }

    /// Fixed-width big-endian exponent encoding.
    pub fn encode_exponent(&self, e: &Exponent) -> Vec<u8> {
        let width = self.0.order.bits().div_ceil(8) as usize;
        let be = e.0.to_bytes_be();
        let mut out = vec![0u8; width];
        out[width - be.len()..].copy_from_slice(&be);
        out
    }

    pub fn decode_exponent(&self, bytes: &[u8]) -> Result<Exponent, GroupError> {
        let v = BigUint::from_bytes_be(bytes);
        if v >= self.0.order {
            return Err(GroupError::NotMember);
        }
        Ok(Exponent(v))
    }
}

fn window_rows(base: &BigUint, p: &BigUint, order: &BigUint) -> Vec<Vec<BigUint>> {
    let windows = (order.bits() as usize).div_ceil(WINDOW_BITS);
    let per_row = (1usize << WINDOW_BITS) - 1;
    let mut rows = Vec::with_capacity(windows);
    let mut row_base = base % p;
    for _ in 0..windows {
        let mut row = Vec::with_capacity(per_row);
        let mut acc = row_base.clone();
        for _ in 0..per_row {
            row.push(acc.clone());
            acc = (acc * &row_base) % p;
        }
        rows.push(row);
        row_base = acc;
    }
    rows
}

fn window_digit(le: &[u8], bit: usize) -> usize {
    let mut digit = 0usize;
    for k in 0..WINDOW_BITS {
        let pos = bit + k;
        if let Some(byte) = le.get(pos / 8) {
            digit |= (((byte >> (pos % 8)) & 1) as usize) << k;
        }
    }
    digit
}

/// Jacobi symbol (a/n) for odd positive n.
pub fn jacobi(a: &BigUint, n: &BigUint) -> i8 {
    let mut a = a % n;
    let mut n = n.clone();
    let mut sign = 1i8;
    while !a.is_zero() {
        let tz = a.trailing_zeros().unwrap_or(0);
        if tz % 2 == 1 {
            let r = (&n % 8u32).to_u32().unwrap_or(0);
            if r == 3 || r == 5 {
                sign = -sign;
            }
        }
        a >>= tz;
        if (&a % 4u32).to_u32() == Some(3) && (&n % 4u32).to_u32() == Some(3) {
            sign = -sign;
        }
        std::mem::swap(&mut a, &mut n);
        a %= &n;
    }
    if n.is_one() {
        sign
    } else {
        0
    }
}

/// Secret key for the identifier PRF.
#[derive(Clone, PartialEq, Eq)]
pub struct PrfKey(Vec<u8>);

impl fmt::Debug for PrfKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrfKey(..)")
    }
}

impl PrfKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> PrfKey {
        let mut k = vec![0u8; 32];
        rng.fill_bytes(&mut k);
        PrfKey(k)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<PrfKey, GroupError> {
        if bytes.len() < 16 {
            return Err(GroupError::ShortKey);
        }
        Ok(PrfKey(bytes.to_vec()))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

/// HMAC-SHA256 of the identifier, read big-endian and reduced mod q.
pub fn prf_eval(group: &Group, key: &PrfKey, id: &str) -> Exponent {
    let mut mac = Hmac::<Sha256>::new_from_slice(&key.0).expect("HMAC accepts any key length");
    mac.update(id.as_bytes());
    let digest = mac.finalize().into_bytes();
    group.exponent(&BigUint::from_bytes_be(&digest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn is_prime(n: u64) -> bool {
        n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| !n.is_multiple_of(d))
    }

    #[test]
    fn tiny_parameters() {
        let g = Group::new(Profile::TestTiny);
        assert_eq!(g.modulus(), Some(&BigUint::from(2063u32)));
        assert_eq!(g.order(), &BigUint::from(1031u32));
        assert!(is_prime(2063) && is_prime(1031));
        let gen = g.generator();
        assert!(g.is_member(&gen));
        assert_ne!(gen, g.identity());
        assert_eq!(g.exp(&gen, &g.exponent_u64(0)), g.identity());
        assert_eq!(g.exp(&gen, &Exponent(g.order().clone())), g.identity());
    }

    #[test]
    fn tiny_subgroup_is_exactly_the_residues() {
        let g = Group::new(Profile::TestTiny);
        let gen = g.generator();
        let mut seen = std::collections::HashSet::new();
        let mut acc = g.identity();
        for _ in 0..1031 {
            if let Element::Residue(x) = &acc {
                seen.insert(x.to_u32().unwrap());
            }
            acc = g.op(&acc, &gen);
        }
        assert_eq!(seen.len(), 1031);
        for x in 1u32..2063 {
            let euler = BigUint::from(x).modpow(&BigUint::from(1031u32), &BigUint::from(2063u32));
            let member = g.is_member(&Element::Residue(BigUint::from(x)));
            assert_eq!(member, euler.is_one(), "x = {x}");
            assert_eq!(member, seen.contains(&x));
        }
    }

    #[test]
    fn modp_generator_has_order_q() {
        let g = Group::shared(Profile::Modp1536);
        let p = g.modulus().unwrap();
        assert_eq!(p.bits(), 1536);
        assert_eq!((p % 8u32).to_u32(), Some(7));
        assert_eq!(g.exp(&g.generator(), &Exponent(g.order().clone())), g.identity());
        assert_eq!(g.element_len(), 192);
    }

    #[test]
    fn fixed_base_matches_plain_exp() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for profile in Profile::ALL {
            let g = Group::shared(profile);
            let base = g.random_element(&mut rng);
            let fb = g.fixed_base(&base);
            for _ in 0..4 {
                let e = g.random_exponent(&mut rng);
                assert_eq!(g.exp_fixed(&fb, &e), g.exp(&base, &e));
                assert_eq!(g.exp_g(&e), g.exp(&g.generator(), &e));
            }
        }
    }

    #[test]
    fn encoding_round_trip_and_rejection() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for profile in Profile::ALL {
            let g = Group::shared(profile);
            let a = g.random_element(&mut rng);
            let bytes = g.encode(&a);
            assert_eq!(bytes.len(), g.element_len());
            assert_eq!(g.decode(&bytes).unwrap(), a);
            assert!(matches!(g.decode(&bytes[1..]), Err(GroupError::Length { .. })));
        }
        let tiny = Group::new(Profile::TestTiny);
        // 5 is a non-residue mod 2063
        assert_eq!(tiny.decode(&[0, 5]), Err(GroupError::NotMember));
        assert_eq!(tiny.decode(&[0, 0]), Err(GroupError::NotMember));
    }

    #[test]
    fn inverse_and_signed_exponents() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for profile in Profile::ALL {
            let g = Group::shared(profile);
            let a = g.random_element(&mut rng);
            assert_eq!(g.op(&a, &g.inv(&a)), g.identity());
            let e = g.exponent_i128(-5);
            assert_eq!(g.exp_g(&g.exp_add(&e, &g.exponent_u64(5))), g.identity());
        }
    }

    #[test]
    fn jacobi_agrees_with_euler() {
        let n = BigUint::from(2063u32);
        for a in 0u32..300 {
            let e = BigUint::from(a).modpow(&BigUint::from(1031u32), &n);
            let expected = if a % 2063 == 0 {
                0
            } else if e.is_one() {
                1
            } else {
                -1
            };
            assert_eq!(jacobi(&BigUint::from(a), &n), expected, "a = {a}");
        }
    }

    #[test]
    fn prf_is_keyed_and_in_range() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let g = Group::new(Profile::TestTiny);
        let k = PrfKey::generate(&mut rng);
        let k2 = PrfKey::generate(&mut rng);
        assert_eq!(prf_eval(&g, &k, "a1"), prf_eval(&g, &k, "a1"));
        assert!(prf_eval(&g, &k, "a1").value() < g.order());
        let differs = (0..20)
            .filter(|i| prf_eval(&g, &k, &format!("id{i}")) != prf_eval(&g, &k2, &format!("id{i}")))
            .count();
        assert!(differs >= 18);
        assert_eq!(PrfKey::from_bytes(&[0u8; 8]), Err(GroupError::ShortKey));
    }

    #[test]
    fn prf_distinguishes_identifiers() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let g = Group::shared(Profile::CurveStrong);
        for _ in 0..20 {
            let k = PrfKey::generate(&mut rng);
            assert_ne!(prf_eval(&g, &k, "a1"), prf_eval(&g, &k, "a2"));
        }
    }

    #[test]
    fn prf_buckets_pass_chi_square() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let g = Group::new(Profile::TestTiny);
        let k = PrfKey::generate(&mut rng);
        let mut buckets = [0u32; 16];
        for i in 0..1000 {
            let v = prf_eval(&g, &k, &format!("x{i}")).value().to_u32().unwrap();
            buckets[(v as usize * 16) / 1031] += 1;
        }
        let expected = 1000.0 / 16.0;
        let chi: f64 = buckets.iter().map(|&b| (b as f64 - expected).powi(2) / expected).sum();
        // 15 degrees of freedom, 0.001 critical value
        assert!(chi < 37.697, "chi-square {chi}");
    }

    #[test]
    fn profile_names_round_trip() {
        for p in Profile::ALL {
            assert_eq!(p.name().parse::<Profile>().unwrap(), p);
            assert_eq!(Profile::from_id(p.id()), Some(p));
        }
        assert!("tiny".parse::<Profile>().is_err());
    }

    #[test]
    fn meter_counts_work() {
        let g = Group::new(Profile::TestTiny);
        let before = g.meter().snapshot();
        let x = g.exp_g(&g.exponent_u64(3));
        let _ = g.op(&x, &x);
        let d = g.meter().snapshot() - before;
        assert_eq!((d.exps, d.mults), (1, 1));
    }
}
