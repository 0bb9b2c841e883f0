//! Multiplicative scheme: ElGamal with an identifier-bound authenticator.
//!
//! A ciphertext is (u, v, w) = (g^r, h^r m, j^r m^a l) with l = g^{prf(k, i)}.
//! The component-wise product of ciphertexts encrypts the product of the
//! plaintexts and carries the product of their labels.

use std::sync::Arc;

use rand::{CryptoRng, RngCore};

use super::{derive_label, DecryptError, HaseError, HaseScheme, Label};
use crate::group::{prf_eval, Element, Exponent, FixedBase, Group, PrfKey};
use crate::ids::IdMultiset;

#[derive(Clone, Debug)]
pub struct MulEvalKey {
    pub group: Group,
    pub h: Element,
    pub j: Element,
}

#[derive(Clone, Debug)]
pub struct MulSecretKey {
    pub(crate) group: Group,
    pub(crate) a: Exponent,
    pub(crate) x: Exponent,
    pub(crate) y: Exponent,
    pub(crate) prf: PrfKey,
    h_fb: Arc<FixedBase>,
    j_fb: Arc<FixedBase>,
}

#[derive(Clone, Debug)]
pub struct MulKeyPair {
    pub ek: MulEvalKey,
    pub sk: MulSecretKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MulCiphertext {
    pub u: Element,
    pub v: Element,
    pub w: Element,
}

impl MulSecretKey {
    pub(crate) fn from_parts(
        group: Group,
        a: Exponent,
        x: Exponent,
        y: Exponent,
        prf: PrfKey,
    ) -> MulSecretKey {
        let h = group.exp_g(&x);
        let j = group.exp_g(&y);
        let h_fb = Arc::new(group.fixed_base(&h));
        let j_fb = Arc::new(group.fixed_base(&j));
        MulSecretKey { group, a, x, y, prf, h_fb, j_fb }
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    pub fn eval_key(&self) -> MulEvalKey {
        MulEvalKey {
            group: self.group.clone(),
            h: self.group.exp_g(&self.x),
            j: self.group.exp_g(&self.y),
        }
    }

    /// Secret exponents (a, x, y), exposed for leakage scans.
    pub fn exponents(&self) -> [&Exponent; 3] {
        [&self.a, &self.x, &self.y]
    }

    pub fn prf_key(&self) -> &PrfKey {
        &self.prf
    }
}

impl MulCiphertext {
    pub fn to_bytes(&self, group: &Group) -> Vec<u8> {
        let mut out = group.encode(&self.u);
        out.extend(group.encode(&self.v));
        out.extend(group.encode(&self.w));
        out
    }

    pub fn from_bytes(group: &Group, bytes: &[u8]) -> Result<MulCiphertext, HaseError> {
        let n = group.element_len();
        if bytes.len() != 3 * n {
            return Err(HaseError::Malformed(format!(
                "expected {} bytes, got {}",
                3 * n,
                bytes.len()
            )));
        }
        Ok(MulCiphertext {
            u: group.decode(&bytes[..n])?,
            v: group.decode(&bytes[n..2 * n])?,
            w: group.decode(&bytes[2 * n..])?,
        })
    }
}

pub fn keygen<R: RngCore + CryptoRng>(group: &Group, rng: &mut R) -> MulKeyPair {
    let a = group.random_exponent(rng);
    let x = group.random_exponent(rng);
    let y = group.random_exponent(rng);
    let prf = PrfKey::generate(rng);
    let sk = MulSecretKey::from_parts(group.clone(), a, x, y, prf);
    MulKeyPair { ek: sk.eval_key(), sk }
}

pub fn encrypt<R: RngCore + CryptoRng>(
    sk: &MulSecretKey,
    m: &Element,
    id: &str,
    rng: &mut R,
) -> Result<MulCiphertext, HaseError> {
    let g = &sk.group;
    if !g.is_member(m) {
        return Err(HaseError::PlaintextOutOfRange);
    }
    let r = g.random_exponent(rng);
    let label = g.exp_g(&prf_eval(g, &sk.prf, id));
    let u = g.exp_g(&r);
    let v = g.op(&g.exp_fixed(&sk.h_fb, &r), m);
    let auth = g.op(&g.exp(m, &sk.a), &label);
    let w = g.op(&g.exp_fixed(&sk.j_fb, &r), &auth);
    Ok(MulCiphertext { u, v, w })
}

pub fn eval(group: &Group, cs: &[MulCiphertext]) -> Result<MulCiphertext, HaseError> {
    let (first, rest) = cs.split_first().ok_or(HaseError::EmptyInput)?;
    Ok(rest.iter().fold(first.clone(), |acc, c| MulCiphertext {
        u: group.op(&acc.u, &c.u),
        v: group.op(&acc.v, &c.v),
        w: group.op(&acc.w, &c.w),
    }))
}

pub fn der(sk: &MulSecretKey, ids: &IdMultiset) -> Result<Label, HaseError> {
    derive_label(&sk.group, &sk.prf, ids)
}

pub fn decrypt(sk: &MulSecretKey, c: &MulCiphertext, l: &Label) -> Result<Element, DecryptError> {
    let g = &sk.group;
    let m = g.op(&c.v, &g.exp(&c.u, &g.exp_neg(&sk.x)));
    let t = g.op(&g.op(&g.exp(&c.u, &sk.y), &g.exp(&m, &sk.a)), l.element());
    if t == c.w {
        Ok(m)
    } else {
        Err(DecryptError::Rejected)
    }
}

/// Scheme handle over a fixed group.
#[derive(Clone, Debug)]
pub struct MulScheme {
    pub group: Group,
}

impl MulScheme {
    pub fn new(group: Group) -> MulScheme {
        MulScheme { group }
    }
}

impl HaseScheme for MulScheme {
    type Plaintext = Element;
    type Ciphertext = MulCiphertext;
    type EvalKey = MulEvalKey;
    type SecretKey = MulSecretKey;

    fn group(&self) -> &Group {
        &self.group
    }

    fn keygen<R: RngCore + CryptoRng>(
        &self,
        rng: &mut R,
    ) -> Result<(MulEvalKey, MulSecretKey), HaseError> {
        let kp = keygen(&self.group, rng);
        Ok((kp.ek, kp.sk))
    }

    fn encrypt<R: RngCore + CryptoRng>(
        &self,
        sk: &MulSecretKey,
        m: &Element,
        id: &str,
        rng: &mut R,
    ) -> Result<MulCiphertext, HaseError> {
        encrypt(sk, m, id, rng)
    }

    fn eval(&self, _ek: &MulEvalKey, cs: &[MulCiphertext]) -> Result<MulCiphertext, HaseError> {
        eval(&self.group, cs)
    }

    fn der(&self, sk: &MulSecretKey, ids: &IdMultiset) -> Result<Label, HaseError> {
        der(sk, ids)
    }

    fn decrypt(&self, sk: &MulSecretKey, c: &MulCiphertext, l: &Label) -> Result<Element, DecryptError> {
        decrypt(sk, c, l)
    }

    fn combine(&self, terms: &[(Element, i64)]) -> Element {
        let g = &self.group;
        terms.iter().fold(g.identity(), |acc, (m, k)| {
            g.op(&acc, &g.exp(m, &g.exponent_i128(*k as i128)))
        })
    }

    fn random_plaintext<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Element {
        self.group.random_element(rng)
    }

    fn elements(&self, c: &MulCiphertext) -> Vec<Element> {
        vec![c.u.clone(), c.v.clone(), c.w.clone()]
    }

    fn rebuild(&self, _ek: &MulEvalKey, elems: Vec<Element>) -> Result<MulCiphertext, HaseError> {
        let [u, v, w]: [Element; 3] = elems
            .try_into()
            .map_err(|_| HaseError::Malformed("expected three elements".into()))?;
        Ok(MulCiphertext { u, v, w })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::Profile;
    use num_bigint::BigUint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn tiny() -> (Group, MulKeyPair, ChaCha20Rng) {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let g = Group::new(Profile::TestTiny);
        let kp = keygen(&g, &mut rng);
        (g, kp, rng)
    }

    #[test]
    fn tiny_key_ranges() {
        let (g, kp, _) = tiny();
        for e in kp.sk.exponents() {
            assert!(e.value() < &BigUint::from(1031u32));
        }
        assert_eq!(kp.ek.h, g.exp_g(&kp.sk.x));
    }

    #[test]
    fn decryption_algebra_by_hand() {
        let (g, kp, mut rng) = tiny();
        let m = g.exp_g(&g.exponent_u64(5));
        let c = encrypt(&kp.sk, &m, "x", &mut rng).unwrap();
        // v * u^{-x} recomputed with plain modular arithmetic
        let p = BigUint::from(2063u32);
        let (u, v) = match (&c.u, &c.v) {
            (Element::Residue(u), Element::Residue(v)) => (u.clone(), v.clone()),
            _ => unreachable!(),
        };
        let ux = u.modpow(kp.sk.x.value(), &p);
        let recovered = (v * ux.modinv(&p).unwrap()) % &p;
        assert_eq!(Element::Residue(recovered), m);
        let l = der(&kp.sk, &IdMultiset::singleton("x")).unwrap();
        assert_eq!(decrypt(&kp.sk, &c, &l).unwrap(), m);
    }

    #[test]
    fn product_of_two() {
        let (g, kp, mut rng) = tiny();
        let m3 = g.exp_g(&g.exponent_u64(3));
        let m4 = g.exp_g(&g.exponent_u64(4));
        let c1 = encrypt(&kp.sk, &m3, "i1", &mut rng).unwrap();
        let c2 = encrypt(&kp.sk, &m4, "i2", &mut rng).unwrap();
        let c = eval(&g, &[c1, c2]).unwrap();
        let l = der(&kp.sk, &["i1", "i2"].into_iter().collect()).unwrap();
        assert_eq!(decrypt(&kp.sk, &c, &l).unwrap(), g.exp_g(&g.exponent_u64(7)));
    }

    #[test]
    fn repeated_identifier_squares_the_label() {
        let (g, kp, _) = tiny();
        let l1 = der(&kp.sk, &IdMultiset::singleton("i")).unwrap();
        let l2 = der(&kp.sk, &["i", "i"].into_iter().collect()).unwrap();
        assert_eq!(*l2.element(), g.op(l1.element(), l1.element()));
        assert!(der(&kp.sk, &IdMultiset::new()).is_err());
        assert!(matches!(eval(&g, &[]), Err(HaseError::EmptyInput)));
    }

    #[test]
    fn wrong_label_and_tampering_are_rejected() {
        let (g, kp, mut rng) = tiny();
        let m = g.exp_g(&g.exponent_u64(9));
        let c = encrypt(&kp.sk, &m, "x", &mut rng).unwrap();
        let ly = der(&kp.sk, &IdMultiset::singleton("y")).unwrap();
        let lx = der(&kp.sk, &IdMultiset::singleton("x")).unwrap();
        if ly != lx {
            assert_eq!(decrypt(&kp.sk, &c, &ly), Err(DecryptError::Rejected));
        }
        let mut bad = c.clone();
        bad.w = g.op(&bad.w, &g.generator());
        assert_eq!(decrypt(&kp.sk, &bad, &lx), Err(DecryptError::Rejected));
    }

    #[test]
    fn strong_group_round_trip_and_bytes() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let g = Group::shared(Profile::Modp1536);
        let kp = keygen(&g, &mut rng);
        let m = g.random_element(&mut rng);
        let c = encrypt(&kp.sk, &m, "id", &mut rng).unwrap();
        let bytes = c.to_bytes(&g);
        assert_eq!(bytes.len(), 3 * 192);
        let back = MulCiphertext::from_bytes(&g, &bytes).unwrap();
        assert_eq!(back, c);
        let l = der(&kp.sk, &IdMultiset::singleton("id")).unwrap();
        assert_eq!(decrypt(&kp.sk, &back, &l).unwrap(), m);
        assert!(MulCiphertext::from_bytes(&g, &bytes[1..]).is_err());
    }

    #[test]
    fn non_member_plaintext_is_refused() {
        let (_, kp, mut rng) = tiny();
        let bad = Element::Residue(BigUint::from(5u32));
        assert!(matches!(
            encrypt(&kp.sk, &bad, "x", &mut rng),
            Err(HaseError::PlaintextOutOfRange)
        ));
    }
}
