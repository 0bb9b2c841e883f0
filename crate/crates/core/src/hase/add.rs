//! Additive scheme: exponent ElGamal over CRT residues.
//!
//! A plaintext m in Z_d, d = d_1 ... d_t, is split into residues m_e = m mod d_e.
//! Each residue is encrypted as (g^{r_e}, h^{r_e} g^{m_e}). The authenticator
//! (s, w) = (g^r, j^r g^{sum_e a_e m_e} l) binds the residues to the identifier.
//! Decryption takes a discrete log per component; the recovered integer sums
//! feed both the CRT recombination and the authenticator check.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_bigint::BigUint;
use once_cell::sync::Lazy;
use rand::{CryptoRng, Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{derive_label, DecryptError, HaseError, HaseScheme, Label};
use crate::dlog::{DlogTable, MAX_TABLE_BOUND};
use crate::group::{prf_eval, Element, Exponent, FixedBase, Group, PrfKey, Profile};
use crate::ids::IdMultiset;

/// Pairwise coprime moduli and their product.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrtParams {
    moduli: Vec<u64>,
    modulus: u128,
}

impl CrtParams {
    pub fn new(moduli: Vec<u64>) -> Result<CrtParams, HaseError> {
        if moduli.is_empty() {
            return Err(HaseError::InvalidParameters("no CRT moduli".into()));
        }
        let mut modulus: u128 = 1;
        for (i, &d) in moduli.iter().enumerate() {
            if d < 2 {
                return Err(HaseError::InvalidParameters(format!("modulus {d} is below 2")));
            }
            for &e in &moduli[..i] {
                if gcd(d, e) != 1 {
                    return Err(HaseError::InvalidParameters(format!(
                        "moduli {e} and {d} are not coprime"
                    )));
                }
            }
            modulus = modulus
                .checked_mul(d as u128)
                .filter(|m| *m < 1u128 << 127)
                .ok_or_else(|| HaseError::InvalidParameters("modulus product exceeds 2^127".into()))?;
        }
        Ok(CrtParams { moduli, modulus })
    }

    /// The t smallest distinct primes of at least 2^(bits-1).
    pub fn with_prime_moduli(t: usize, bits: u32) -> Result<CrtParams, HaseError> {
        if !(2..=62).contains(&bits) || t == 0 {
            return Err(HaseError::InvalidParameters(format!("t={t}, bits={bits}")));
        }
        let mut moduli = Vec::with_capacity(t);
        let mut n = 1u64 << (bits - 1);
        while moduli.len() < t {
            if is_prime_u64(n) {
                moduli.push(n);
            }
            n += 1;
        }
        CrtParams::new(moduli)
    }

    pub fn moduli(&self) -> &[u64] {
        &self.moduli
    }

    pub fn modulus(&self) -> u128 {
        self.modulus
    }

    pub fn split(&self, m: u128) -> Vec<u64> {
        self.moduli.iter().map(|&d| (m % d as u128) as u64).collect()
    }

    /// Unique m < d with m = r_e mod d_e for every e.
    pub fn combine(&self, residues: &[u64]) -> u128 {
        assert_eq!(residues.len(), self.moduli.len(), "one residue per modulus");
        let mut x: u128 = 0;
        let mut m: u128 = 1;
        for (&r, &d) in residues.iter().zip(&self.moduli) {
            let d128 = d as u128;
            let diff = ((r as u128 % d128) + d128 - x % d128) % d128;
            let inv = mod_inverse((m % d128) as u64, d) as u128;
            let k = diff * inv % d128;
            x += k * m;
            m *= d128;
        }
        x
    }

    /// Largest value representable as a signed residue.
    pub fn signed_max(&self) -> i128 {
        ((self.modulus - 1) / 2) as i128
    }

    /// Two's-complement style embedding of a signed value into Z_d.
    pub fn wrap(&self, v: i128) -> Option<u128> {
        let hi = self.signed_max();
        let lo = -((self.modulus - 1) as i128 - hi);
        if v < lo || v > hi {
            return None;
        }
        Some(if v >= 0 { v as u128 } else { self.modulus - v.unsigned_abs() })
    }

    pub fn center(&self, m: u128) -> i128 {
        let m = m % self.modulus;
        if m as i128 <= self.signed_max() {
            m as i128
        } else {
            -((self.modulus - m) as i128)
        }
    }
}

/// Free-function form of [`CrtParams::split`].
pub fn crt_split(params: &CrtParams, m: u128) -> Vec<u64> {
    params.split(m)
}

/// Free-function form of [`CrtParams::combine`].
pub fn crt_combine(params: &CrtParams, residues: &[u64]) -> u128 {
    params.combine(residues)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn mod_inverse(a: u64, m: u64) -> u64 {
    let (mut old_r, mut r) = (a as i128, m as i128);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    old_s.rem_euclid(m as i128) as u64
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    (a as u128 * b as u128 % m as u128) as u64
}

fn pow_mod(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod(acc, b, m);
        }
        b = mul_mod(b, b, m);
        e >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin for 64-bit inputs.
pub(crate) fn is_prime_u64(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for p in BASES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'outer: for a in BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

/// Table bound used when none is configured.
pub fn default_table_bound(profile: Profile) -> u64 {
    match profile {
        Profile::TestTiny => 256,
        _ => 1 << 18,
    }
}

type TableKey = (Profile, u64);

static TABLES: Lazy<Mutex<HashMap<TableKey, Arc<DlogTable>>>> = Lazy::new(Default::default);

/// Process-wide table for a profile and bound, built on first use.
pub fn shared_table(group: &Group, bound: u64) -> Result<Arc<DlogTable>, HaseError> {
    let key = (group.profile(), bound);
    if let Some(t) = TABLES.lock().expect("table cache").get(&key) {
        return Ok(t.clone());
    }
    let built = Arc::new(DlogTable::build(&Group::shared(group.profile()), bound, MAX_TABLE_BOUND)?);
    let mut cache = TABLES.lock().expect("table cache");
    Ok(cache.entry(key).or_insert(built).clone())
}

#[derive(Clone, Debug)]
pub struct AddEvalKey {
    pub group: Group,
    pub h: Element,
    pub j: Element,
    pub components: usize,
}

#[derive(Clone, Debug)]
pub struct AddSecretKey {
    pub(crate) group: Group,
    pub(crate) a: Vec<Exponent>,
    pub(crate) x: Exponent,
    pub(crate) y: Exponent,
    pub(crate) prf: PrfKey,
    pub(crate) crt: CrtParams,
    table: Arc<DlogTable>,
    h_fb: Arc<FixedBase>,
    j_fb: Arc<FixedBase>,
}

#[derive(Clone, Debug)]
pub struct AddKeyPair {
    pub ek: AddEvalKey,
    pub sk: AddSecretKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AddCiphertext {
    /// (u_e, v_e) per CRT component.
    pub comps: Vec<(Element, Element)>,
    pub s: Element,
    pub w: Element,
}

impl AddSecretKey {
    pub(crate) fn from_parts(
        group: Group,
        a: Vec<Exponent>,
        x: Exponent,
        y: Exponent,
        prf: PrfKey,
        crt: CrtParams,
        table_bound: u64,
    ) -> Result<AddSecretKey, HaseError> {
        if a.len() != crt.moduli().len() {
            return Err(HaseError::InvalidParameters("one authenticator exponent per component".into()));
        }
        check_table_fit(&group, &crt, table_bound)?;
        let table = shared_table(&group, table_bound)?;
        let h_fb = Arc::new(group.fixed_base(&group.exp_g(&x)));
        let j_fb = Arc::new(group.fixed_base(&group.exp_g(&y)));
        Ok(AddSecretKey { group, a, x, y, prf, crt, table, h_fb, j_fb })
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    pub fn crt(&self) -> &CrtParams {
        &self.crt
    }

    pub fn table_bound(&self) -> u64 {
        self.table.bound()
    }

    pub fn eval_key(&self) -> AddEvalKey {
        AddEvalKey {
            group: self.group.clone(),
            h: self.group.exp_g(&self.x),
            j: self.group.exp_g(&self.y),
            components: self.crt.moduli().len(),
        }
    }

    /// Every secret exponent, exposed for leakage scans.
    pub fn exponents(&self) -> Vec<&Exponent> {
        let mut out: Vec<&Exponent> = self.a.iter().collect();
        out.push(&self.x);
        out.push(&self.y);
        out
    }

    pub fn prf_key(&self) -> &PrfKey {
        &self.prf
    }
}

fn check_table_fit(group: &Group, crt: &CrtParams, bound: u64) -> Result<(), HaseError> {
    let largest = *crt.moduli().iter().max().expect("non-empty moduli");
    if largest > bound {
        return Err(HaseError::InvalidParameters(format!(
            "modulus {largest} exceeds the dlog table bound {bound}"
        )));
    }
    if BigUint::from(bound) * 2u32 > *group.order() {
        return Err(HaseError::InvalidParameters(format!(
            "dlog table bound {bound} is too large for signed lookups in {}",
            group.profile()
        )));
    }
    if BigUint::from(crt.modulus()) >= *group.order() {
        return Err(HaseError::InvalidParameters("modulus product must be below q".into()));
    }
    Ok(())
}

impl AddCiphertext {
    pub fn components(&self) -> usize {
        self.comps.len()
    }

    /// u32 component count, then u_1 v_1 ... u_t v_t s w.
    pub fn to_bytes(&self, group: &Group) -> Vec<u8> {
        let mut out = (self.comps.len() as u32).to_be_bytes().to_vec();
        for (u, v) in &self.comps {
            out.extend(group.encode(u));
            out.extend(group.encode(v));
        }
        out.extend(group.encode(&self.s));
        out.extend(group.encode(&self.w));
        out
    }

    pub fn from_bytes(group: &Group, bytes: &[u8]) -> Result<AddCiphertext, HaseError> {
        let n = group.element_len();
        let head: [u8; 4] = bytes
            .get(..4)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| HaseError::Malformed("missing component count".into()))?;
        let t = u32::from_be_bytes(head) as usize;
        if t == 0 || t > 64 || bytes.len() != 4 + (2 * t + 2) * n {
            return Err(HaseError::Malformed(format!("bad length for {t} components")));
        }
        let mut elems = bytes[4..].chunks(n).map(|c| group.decode(c));
        let mut comps = Vec::with_capacity(t);
        for _ in 0..t {
            let u = elems.next().expect("sized")?;
            let v = elems.next().expect("sized")?;
            comps.push((u, v));
        }
        let s = elems.next().expect("sized")?;
        let w = elems.next().expect("sized")?;
        Ok(AddCiphertext { comps, s, w })
    }
}

pub fn keygen<R: RngCore + CryptoRng>(
    group: &Group,
    t: usize,
    bits: u32,
    rng: &mut R,
) -> Result<AddKeyPair, HaseError> {
    let qbits = group.order().bits();
    if (t as u64) * (bits as u64) > qbits - 1 {
        return Err(HaseError::InvalidParameters(format!(
            "t*bits = {} does not fit below q ({} bits)",
            t as u64 * bits as u64,
            qbits
        )));
    }
    let crt = CrtParams::with_prime_moduli(t, bits)?;
    let bound = default_table_bound(group.profile()).max(crt.moduli().iter().copied().max().unwrap_or(0));
    keygen_with_params(group, crt, bound, rng)
}

pub fn keygen_with_params<R: RngCore + CryptoRng>(
    group: &Group,
    crt: CrtParams,
    table_bound: u64,
    rng: &mut R,
) -> Result<AddKeyPair, HaseError> {
    let a = (0..crt.moduli().len()).map(|_| group.random_exponent(rng)).collect();
    let x = group.random_exponent(rng);
    let y = group.random_exponent(rng);
    let prf = PrfKey::generate(rng);
    let sk = AddSecretKey::from_parts(group.clone(), a, x, y, prf, crt, table_bound)?;
    Ok(AddKeyPair { ek: sk.eval_key(), sk })
}

pub fn encrypt<R: RngCore + CryptoRng>(
    sk: &AddSecretKey,
    m: u128,
    id: &str,
    rng: &mut R,
) -> Result<AddCiphertext, HaseError> {
    let g = &sk.group;
    if m >= sk.crt.modulus() {
        return Err(HaseError::PlaintextOutOfRange);
    }
    let residues = sk.crt.split(m);
    let mut comps = Vec::with_capacity(residues.len());
    let mut auth = g.exponent_u64(0);
    for (me, ae) in residues.iter().zip(&sk.a) {
        let r = g.random_exponent(rng);
        let me = g.exponent_u64(*me);
        comps.push((g.exp_g(&r), g.op(&g.exp_fixed(&sk.h_fb, &r), &g.exp_g(&me))));
        auth = g.exp_add(&auth, &g.exp_mul(ae, &me));
    }
    let r = g.random_exponent(rng);
    let s = g.exp_g(&r);
    let tag = g.exp_g(&g.exp_add(&auth, &prf_eval(g, &sk.prf, id)));
    let w = g.op(&g.exp_fixed(&sk.j_fb, &r), &tag);
    Ok(AddCiphertext { comps, s, w })
}

pub fn eval(group: &Group, cs: &[AddCiphertext]) -> Result<AddCiphertext, HaseError> {
    let (first, rest) = cs.split_first().ok_or(HaseError::EmptyInput)?;
    let mut acc = first.clone();
    for c in rest {
        if c.comps.len() != acc.comps.len() {
            return Err(HaseError::ShapeMismatch);
        }
        for ((au, av), (cu, cv)) in acc.comps.iter_mut().zip(&c.comps) {
            *au = group.op(au, cu);
            *av = group.op(av, cv);
        }
        acc.s = group.op(&acc.s, &c.s);
        acc.w = group.op(&acc.w, &c.w);
    }
    Ok(acc)
}

/// Encrypts -m under the negated identifier multiset.
pub fn negate(group: &Group, c: &AddCiphertext) -> AddCiphertext {
    AddCiphertext {
        comps: c.comps.iter().map(|(u, v)| (group.inv(u), group.inv(v))).collect(),
        s: group.inv(&c.s),
        w: group.inv(&c.w),
    }
}

pub fn der(sk: &AddSecretKey, ids: &IdMultiset) -> Result<Label, HaseError> {
    derive_label(&sk.group, &sk.prf, ids)
}

pub fn decrypt(sk: &AddSecretKey, c: &AddCiphertext, l: &Label) -> Result<u128, DecryptError> {
    let g = &sk.group;
    if c.comps.len() != sk.crt.moduli().len() {
        return Err(DecryptError::Malformed(format!(
            "{} components, key has {}",
            c.comps.len(),
            sk.crt.moduli().len()
        )));
    }
    let neg_x = g.exp_neg(&sk.x);
    let mut sums = Vec::with_capacity(c.comps.len());
    let mut missing = None;
    for (e, (u, v)) in c.comps.iter().enumerate() {
        let h = g.op(v, &g.exp(u, &neg_x));
        match sk.table.lookup_signed(g, &h) {
            Some(s) => sums.push(s),
            None => {
                missing.get_or_insert(e);
                sums.push(0);
            }
        }
    }
    if let Some(component) = missing {
        return Err(DecryptError::DlogNotFound { component });
    }
    let mut auth = g.exponent_u64(0);
    for (s, a) in sums.iter().zip(&sk.a) {
        auth = g.exp_add(&auth, &g.exp_mul(a, &g.exponent_i128(*s as i128)));
    }
    let t = g.op(&g.op(&g.exp(&c.s, &sk.y), &g.exp_g(&auth)), l.element());
    if t != c.w {
        return Err(DecryptError::Rejected);
    }
    let residues: Vec<u64> = sums
        .iter()
        .zip(sk.crt.moduli())
        .map(|(&s, &d)| s.rem_euclid(d as i64) as u64)
        .collect();
    Ok(sk.crt.combine(&residues))
}

#[derive(Clone, Debug)]
enum Moduli {
    Fixed(CrtParams),
    Primes { t: usize, bits: u32 },
}

/// Scheme handle with fixed CRT parameters.
#[derive(Clone, Debug)]
pub struct AddScheme {
    pub group: Group,
    moduli: Moduli,
    table_bound: u64,
}

impl AddScheme {
    pub fn with_moduli(group: Group, moduli: Vec<u64>) -> Result<AddScheme, HaseError> {
        let crt = CrtParams::new(moduli)?;
        let table_bound = default_table_bound(group.profile());
        check_table_fit(&group, &crt, table_bound)?;
        Ok(AddScheme { group, moduli: Moduli::Fixed(crt), table_bound })
    }

    pub fn with_primes(group: Group, t: usize, bits: u32) -> AddScheme {
        let table_bound = default_table_bound(group.profile());
        AddScheme { group, moduli: Moduli::Primes { t, bits }, table_bound }
    }

    /// Modulus d, when fixed up front.
    pub fn modulus(&self) -> Option<u128> {
        match &self.moduli {
            Moduli::Fixed(c) => Some(c.modulus()),
            Moduli::Primes { t, bits } => CrtParams::with_prime_moduli(*t, *bits).ok().map(|c| c.modulus()),
        }
    }
}

impl HaseScheme for AddScheme {
    type Plaintext = u128;
    type Ciphertext = AddCiphertext;
    type EvalKey = AddEvalKey;
    type SecretKey = AddSecretKey;

    fn group(&self) -> &Group {
        &self.group
    }

    fn keygen<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Result<(AddEvalKey, AddSecretKey), HaseError> {
        let kp = match &self.moduli {
            Moduli::Fixed(c) => keygen_with_params(&self.group, c.clone(), self.table_bound, rng)?,
            Moduli::Primes { t, bits } => keygen(&self.group, *t, *bits, rng)?,
        };
        Ok((kp.ek, kp.sk))
    }

    fn encrypt<R: RngCore + CryptoRng>(
        &self,
        sk: &AddSecretKey,
        m: &u128,
        id: &str,
        rng: &mut R,
    ) -> Result<AddCiphertext, HaseError> {
        encrypt(sk, *m, id, rng)
    }

    fn eval(&self, _ek: &AddEvalKey, cs: &[AddCiphertext]) -> Result<AddCiphertext, HaseError> {
        eval(&self.group, cs)
    }

    fn der(&self, sk: &AddSecretKey, ids: &IdMultiset) -> Result<Label, HaseError> {
        der(sk, ids)
    }

    fn decrypt(&self, sk: &AddSecretKey, c: &AddCiphertext, l: &Label) -> Result<u128, DecryptError> {
        decrypt(sk, c, l)
    }

    fn combine(&self, terms: &[(u128, i64)]) -> u128 {
        let d = self.modulus().expect("valid parameters") as i128;
        terms.iter().fold(0i128, |acc, (m, k)| {
            let term = ((*m as i128 % d) * (*k as i128).rem_euclid(d)).rem_euclid(d);
            (acc + term).rem_euclid(d)
        }) as u128
    }

    fn random_plaintext<R: RngCore + CryptoRng>(&self, rng: &mut R) -> u128 {
        rng.gen_range(0..self.modulus().expect("valid parameters"))
    }

    fn elements(&self, c: &AddCiphertext) -> Vec<Element> {
        let mut out = Vec::with_capacity(2 * c.comps.len() + 2);
        for (u, v) in &c.comps {
            out.push(u.clone());
            out.push(v.clone());
        }
        out.push(c.s.clone());
        out.push(c.w.clone());
        out
    }

    fn rebuild(&self, ek: &AddEvalKey, elems: Vec<Element>) -> Result<AddCiphertext, HaseError> {
        if elems.len() != 2 * ek.components + 2 {
            return Err(HaseError::Malformed("wrong element count".into()));
        }
        let mut it = elems.into_iter();
        let comps = (0..ek.components)
            .map(|_| (it.next().expect("sized"), it.next().expect("sized")))
            .collect();
        Ok(AddCiphertext { comps, s: it.next().expect("sized"), w: it.next().expect("sized") })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn tiny_357() -> (Group, AddKeyPair, ChaCha20Rng) {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let g = Group::new(Profile::TestTiny);
        let crt = CrtParams::new(vec![3, 5, 7]).unwrap();
        let kp = keygen_with_params(&g, crt, 256, &mut rng).unwrap();
        (g, kp, rng)
    }

    #[test]
    fn prime_moduli_derivation() {
        let c = CrtParams::with_prime_moduli(2, 17).unwrap();
        assert_eq!(c.moduli(), &[65537, 65539]);
        assert_eq!(c.modulus(), 4295229443);
        let c = CrtParams::with_prime_moduli(5, 10).unwrap();
        assert_eq!(c.moduli(), &[521, 523, 541, 547, 557]);
        assert_eq!(c.modulus(), 44_913_737_744_737);
    }

    #[test]
    fn crt_small_cases() {
        let c = CrtParams::new(vec![3, 5]).unwrap();
        assert_eq!(c.split(7), vec![1, 2]);
        assert_eq!(c.combine(&[2, 4]), 14);
        for m in 0..15u128 {
            assert_eq!(c.combine(&c.split(m)), m);
        }
        assert!(CrtParams::new(vec![4, 6]).is_err());
        assert!(CrtParams::new(vec![1]).is_err());
    }

    #[test]
    fn signed_embedding() {
        let c = CrtParams::new(vec![3, 5]).unwrap();
        assert_eq!(c.signed_max(), 7);
        assert_eq!(c.wrap(-7), Some(8));
        assert_eq!(c.wrap(8), None);
        assert_eq!(c.wrap(-8), None);
        for v in -7i128..=7 {
            assert_eq!(c.center(c.wrap(v).unwrap()), v);
        }
    }

    #[test]
    fn miller_rabin_matches_trial_division() {
        for n in 0u64..5000 {
            let naive = n >= 2 && (2..n).take_while(|d| d * d <= n).all(|d| n % d != 0);
            assert_eq!(is_prime_u64(n), naive, "n = {n}");
        }
        assert!(is_prime_u64(18446744073709551557));
    }

    #[test]
    fn component_algebra() {
        let (g, kp, mut rng) = tiny_357();
        let c = encrypt(&kp.sk, 52, "m", &mut rng).unwrap();
        let (u, v) = &c.comps[0];
        let h = g.op(v, &g.exp(u, &g.exp_neg(&kp.sk.x)));
        assert_eq!(h, g.exp_g(&g.exponent_u64(52 % 3)));
    }

    #[test]
    fn wraparound_mod_d() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let g = Group::new(Profile::TestTiny);
        let kp = keygen_with_params(&g, CrtParams::new(vec![3, 5]).unwrap(), 256, &mut rng).unwrap();
        let a = encrypt(&kp.sk, 9, "a", &mut rng).unwrap();
        let b = encrypt(&kp.sk, 9, "b", &mut rng).unwrap();
        let c = eval(&g, &[a, b]).unwrap();
        let l = der(&kp.sk, &["a", "b"].into_iter().collect()).unwrap();
        assert_eq!(decrypt(&kp.sk, &c, &l).unwrap(), 3);
    }

    #[test]
    fn subtraction_through_negation() {
        let (g, kp, mut rng) = tiny_357();
        let a = encrypt(&kp.sk, 10, "a", &mut rng).unwrap();
        let b = encrypt(&kp.sk, 30, "b", &mut rng).unwrap();
        let c = eval(&g, &[a, negate(&g, &b)]).unwrap();
        let mut ids = IdMultiset::singleton("a");
        ids.add("b", -1);
        let l = der(&kp.sk, &ids).unwrap();
        let m = decrypt(&kp.sk, &c, &l).unwrap();
        assert_eq!(kp.sk.crt.center(m), -20);
    }

    #[test]
    fn strong_group_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let g = Group::shared(Profile::CurveStrong);
        let kp = keygen(&g, 2, 17, &mut rng).unwrap();
        assert_eq!(kp.sk.crt.moduli(), &[65537, 65539]);
        let m = 123_456u128;
        let c = encrypt(&kp.sk, m, "x", &mut rng).unwrap();
        let bytes = c.to_bytes(&g);
        assert_eq!(bytes.len(), 4 + 6 * 32);
        let back = AddCiphertext::from_bytes(&g, &bytes).unwrap();
        let l = der(&kp.sk, &IdMultiset::singleton("x")).unwrap();
        assert_eq!(decrypt(&kp.sk, &back, &l).unwrap(), m);
    }

    #[test]
    fn keygen_rejects_oversized_parameters() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let g = Group::new(Profile::TestTiny);
        let kp = keygen(&g, 2, 5, &mut rng).unwrap();
        assert_eq!(kp.sk.crt.moduli(), &[17, 19]);
        assert!(keygen(&g, 3, 4, &mut rng).is_err());
        assert!(keygen_with_params(&g, CrtParams::new(vec![3, 5]).unwrap(), 600, &mut rng).is_err());
    }

    #[test]
    fn tampered_authenticator_is_rejected() {
        let (g, kp, mut rng) = tiny_357();
        let mut c = encrypt(&kp.sk, 17, "x", &mut rng).unwrap();
        c.w = g.op(&c.w, &g.generator());
        let l = der(&kp.sk, &IdMultiset::singleton("x")).unwrap();
        assert_eq!(decrypt(&kp.sk, &c, &l), Err(DecryptError::Rejected));
    }
}
