//! Homomorphic authenticated symmetric encryption.
//!
//! Each ciphertext is bound to an identifier. A combined ciphertext only
//! decrypts under the label derived from the exact multiset of identifiers
//! that went into it.

pub mod add;
pub mod mul;

use std::fmt;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dlog::DlogError;
use crate::group::{prf_eval, Element, Group, GroupError, PrfKey};
use crate::ids::IdMultiset;

pub use add::{AddCiphertext, AddEvalKey, AddKeyPair, AddScheme, AddSecretKey, CrtParams};
pub use mul::{MulCiphertext, MulEvalKey, MulKeyPair, MulScheme, MulSecretKey};

/// Which scheme a ciphertext belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Add,
    Mul,
}

impl Domain {
    pub fn code(self) -> u8 {
        match self {
            Domain::Add => 1,
            Domain::Mul => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Domain> {
        match c {
            1 => Some(Domain::Add),
            2 => Some(Domain::Mul),
            _ => None,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Add => "add",
            Domain::Mul => "mul",
        })
    }
}

/// A ciphertext of either scheme.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Ciphertext {
    Add(AddCiphertext),
    Mul(MulCiphertext),
}

impl Ciphertext {
    pub fn domain(&self) -> Domain {
        match self {
            Ciphertext::Add(_) => Domain::Add,
            Ciphertext::Mul(_) => Domain::Mul,
        }
    }

    pub fn elements(&self) -> Vec<&Element> {
        match self {
            Ciphertext::Add(c) => c.comps.iter().flat_map(|(u, v)| [u, v]).chain([&c.s, &c.w]).collect(),
            Ciphertext::Mul(c) => vec![&c.u, &c.v, &c.w],
        }
    }

    /// Serialises with the group of the matching scheme.
    pub fn to_bytes(&self, add_group: &Group, mul_group: &Group) -> Vec<u8> {
        match self {
            Ciphertext::Add(c) => c.to_bytes(add_group),
            Ciphertext::Mul(c) => c.to_bytes(mul_group),
        }
    }

    pub fn from_bytes(
        domain: Domain,
        bytes: &[u8],
        add_group: &Group,
        mul_group: &Group,
    ) -> Result<Ciphertext, HaseError> {
        Ok(match domain {
            Domain::Add => Ciphertext::Add(AddCiphertext::from_bytes(add_group, bytes)?),
            Domain::Mul => Ciphertext::Mul(MulCiphertext::from_bytes(mul_group, bytes)?),
        })
    }
}

/// Expected authenticator contribution of an identifier multiset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Label(Element);

impl Label {
    pub fn new(e: Element) -> Label {
        Label(e)
    }

    pub fn element(&self) -> &Element {
        &self.0
    }
}

#[derive(Debug, Error)]
pub enum HaseError {
    #[error("evaluation needs at least one ciphertext")]
    EmptyInput,
    #[error("label derivation needs a non-empty identifier multiset")]
    EmptyMultiset,
    #[error("ciphertexts have different shapes")]
    ShapeMismatch,
    #[error("plaintext is outside the message space")]
    PlaintextOutOfRange,
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("malformed ciphertext: {0}")]
    Malformed(String),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Dlog(#[from] DlogError),
}

/// Decryption outcomes other than a plaintext.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecryptError {
    /// The authenticator does not match the label.
    #[error("authenticator check failed")]
    Rejected,
    #[error("component {component} has no discrete log within the table")]
    DlogNotFound { component: usize },
    #[error("ciphertext does not fit the key: {0}")]
    Malformed(String),
}

/// Label for a multiset: g raised to the multiplicity-weighted PRF sum.
pub(crate) fn derive_label(group: &Group, prf: &PrfKey, ids: &IdMultiset) -> Result<Label, HaseError> {
    if ids.is_empty() {
        return Err(HaseError::EmptyMultiset);
    }
    let mut acc = group.exponent_u64(0);
    for (id, mult) in ids.iter() {
        let h = prf_eval(group, prf, id);
        let scaled = group.exp_mul(&h, &group.exponent_i128(mult as i128));
        acc = group.exp_add(&acc, &scaled);
    }
    Ok(Label(group.exp_g(&acc)))
}

/// Common interface used by the security games.
pub trait HaseScheme {
    type Plaintext: Clone + PartialEq + fmt::Debug;
    type Ciphertext: Clone + fmt::Debug;
    type EvalKey;
    type SecretKey;

    fn group(&self) -> &Group;

    fn keygen<R: RngCore + CryptoRng>(
        &self,
        rng: &mut R,
    ) -> Result<(Self::EvalKey, Self::SecretKey), HaseError>;

    fn encrypt<R: RngCore + CryptoRng>(
        &self,
        sk: &Self::SecretKey,
        m: &Self::Plaintext,
        id: &str,
        rng: &mut R,
    ) -> Result<Self::Ciphertext, HaseError>;

    fn eval(&self, ek: &Self::EvalKey, cs: &[Self::Ciphertext]) -> Result<Self::Ciphertext, HaseError>;

    fn der(&self, sk: &Self::SecretKey, ids: &IdMultiset) -> Result<Label, HaseError>;

    fn decrypt(
        &self,
        sk: &Self::SecretKey,
        c: &Self::Ciphertext,
        l: &Label,
    ) -> Result<Self::Plaintext, DecryptError>;

    /// Plaintext-group combination with signed multiplicities.
    fn combine(&self, terms: &[(Self::Plaintext, i64)]) -> Self::Plaintext;

    fn random_plaintext<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Self::Plaintext;

    fn elements(&self, c: &Self::Ciphertext) -> Vec<Element>;

    fn rebuild(
        &self,
        ek: &Self::EvalKey,
        elems: Vec<Element>,
    ) -> Result<Self::Ciphertext, HaseError>;
}
