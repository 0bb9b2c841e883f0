//! Key sets for both schemes and their on-disk format.
//!
//! Key files hold a magic tag, a kind byte and a list of length-prefixed
//! fields. Secret keys live in files ending in `.sk`; nothing else may hold them.

use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;

use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::encoding::IntegerCodec;
use crate::group::{Group, GroupError, PrfKey, Profile};
use crate::hase::add::{self, AddEvalKey, AddKeyPair, AddSecretKey, CrtParams};
use crate::hase::mul::{self, MulEvalKey, MulKeyPair, MulSecretKey};
use crate::hase::HaseError;

/// CRT components used outside the tiny profile.
pub const DEFAULT_CRT_COMPONENTS: usize = 5;
/// Bits per CRT component outside the tiny profile.
pub const DEFAULT_CRT_BITS: u32 = 10;

pub const ADD_EK_FILE: &str = "add.ek";
pub const ADD_SK_FILE: &str = "add.sk";
pub const MUL_EK_FILE: &str = "mul.ek";
pub const MUL_SK_FILE: &str = "mul.sk";

const MAGIC: &[u8; 4] = b"FSK1";

#[derive(Debug, Error)]
pub enum KeyError {
    #[error("key file {0}: {1}")]
    Format(String, String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Hase(#[from] HaseError),
    #[error(transparent)]
    Group(#[from] GroupError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
enum Kind {
    AddEval = 1,
    AddSecret = 2,
    MulEval = 3,
    MulSecret = 4,
}

/// Groups backing the (additive, multiplicative) schemes of a profile.
pub fn groups_for(profile: Profile) -> (Group, Group) {
    match profile {
        Profile::TestTiny => (Group::shared(Profile::TestTiny), Group::shared(Profile::TestTiny)),
        Profile::Modp1536 => (Group::shared(Profile::Modp1536), Group::shared(Profile::Modp1536)),
        Profile::CurveStrong => (Group::shared(Profile::CurveStrong), Group::shared(Profile::Modp1536)),
    }
}

/// Client-held keys for both schemes.
#[derive(Clone, Debug)]
pub struct KeySet {
    pub profile: Profile,
    pub add: AddKeyPair,
    pub mul: MulKeyPair,
}

/// Public evaluation keys handed to the untrusted host.
#[derive(Clone, Debug)]
pub struct EvalKeys {
    pub profile: Profile,
    pub add: AddEvalKey,
    pub mul: MulEvalKey,
}

impl KeySet {
    pub fn generate<R: RngCore + CryptoRng>(profile: Profile, rng: &mut R) -> Result<KeySet, KeyError> {
        let (ga, gm) = groups_for(profile);
        KeySet::generate_in(profile, &ga, &gm, rng)
    }

    /// Generates keys over caller-supplied group instances.
    pub fn generate_in<R: RngCore + CryptoRng>(
        profile: Profile,
        add_group: &Group,
        mul_group: &Group,
        rng: &mut R,
    ) -> Result<KeySet, KeyError> {
        let (t, bits) = match profile {
            Profile::TestTiny => (2, 5),
            _ => (DEFAULT_CRT_COMPONENTS, DEFAULT_CRT_BITS),
        };
        let add = add::keygen(add_group, t, bits, rng)?;
        let mul = mul::keygen(mul_group, rng);
        Ok(KeySet { profile, add, mul })
    }

    pub fn eval_keys(&self) -> EvalKeys {
        EvalKeys { profile: self.profile, add: self.add.ek.clone(), mul: self.mul.ek.clone() }
    }

    /// Integer embedding for the multiplicative domain, when the group is large enough.
    pub fn codec(&self) -> Option<Arc<IntegerCodec>> {
        (self.mul.sk.group().profile() == Profile::Modp1536).then(IntegerCodec::shared)
    }

    /// SHA-256 over both secret key files.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(encode_add_sk(&self.add.sk));
        h.update(encode_mul_sk(&self.mul.sk));
        h.finalize().into()
    }

    pub fn save(&self, dir: &Path) -> Result<(), KeyError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(ADD_EK_FILE), encode_add_ek(&self.add.ek))?;
        fs::write(dir.join(ADD_SK_FILE), encode_add_sk(&self.add.sk))?;
        fs::write(dir.join(MUL_EK_FILE), encode_mul_ek(&self.mul.ek))?;
        fs::write(dir.join(MUL_SK_FILE), encode_mul_sk(&self.mul.sk))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<KeySet, KeyError> {
        let add_sk = decode_add_sk(&read(dir, ADD_SK_FILE)?)?;
        let mul_sk = decode_mul_sk(&read(dir, MUL_SK_FILE)?)?;
        let profile = match (add_sk.group().profile(), mul_sk.group().profile()) {
            (Profile::TestTiny, Profile::TestTiny) => Profile::TestTiny,
            (Profile::Modp1536, Profile::Modp1536) => Profile::Modp1536,
            (Profile::CurveStrong, Profile::Modp1536) => Profile::CurveStrong,
            (a, m) => {
                return Err(KeyError::Format(dir.display().to_string(), format!("unsupported group pair {a}/{m}")))
            }
        };
        Ok(KeySet {
            profile,
            add: AddKeyPair { ek: add_sk.eval_key(), sk: add_sk },
            mul: MulKeyPair { ek: mul_sk.eval_key(), sk: mul_sk },
        })
    }
}

impl EvalKeys {
    pub fn load(dir: &Path) -> Result<EvalKeys, KeyError> {
        let add = decode_add_ek(&read(dir, ADD_EK_FILE)?)?;
        let mul = decode_mul_ek(&read(dir, MUL_EK_FILE)?)?;
        let profile = match (add.group.profile(), mul.group.profile()) {
            (Profile::CurveStrong, _) => Profile::CurveStrong,
            (p, _) => p,
        };
        Ok(EvalKeys { profile, add, mul })
    }
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>, KeyError> {
    Ok(fs::read(dir.join(name))?)
}

fn pack(kind: Kind, fields: &[Vec<u8>]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.push(kind as u8);
    out.extend((fields.len() as u32).to_be_bytes());
    for f in fields {
        out.extend((f.len() as u32).to_be_bytes());
        out.extend(f);
    }
    out
}

fn unpack(kind: Kind, bytes: &[u8]) -> Result<Vec<Vec<u8>>, KeyError> {
    let bad = |msg: &str| KeyError::Format(format!("{kind:?}"), msg.to_string());
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(bad("missing magic"));
    }
    if bytes[4] != kind as u8 {
        return Err(bad("wrong key kind"));
    }
    let count = u32::from_be_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let mut fields = Vec::with_capacity(count.min(256));
    let mut rest = &bytes[9..];
    for _ in 0..count {
        if rest.len() < 4 {
            return Err(bad("truncated field header"));
        }
        let len = u32::from_be_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
        rest = &rest[4..];
        if rest.len() < len {
            return Err(bad("truncated field"));
        }
        fields.push(rest[..len].to_vec());
        rest = &rest[len..];
    }
    if !rest.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(fields)
}

fn profile_field(f: &[u8]) -> Result<Group, KeyError> {
    let id = *f.first().ok_or_else(|| KeyError::Format("profile".into(), "empty".into()))?;
    let p = Profile::from_id(id).ok_or_else(|| KeyError::Format("profile".into(), format!("unknown id {id}")))?;
    Ok(Group::shared(p))
}

fn u64_field(f: &[u8]) -> Result<u64, KeyError> {
    let arr: [u8; 8] = f.try_into().map_err(|_| KeyError::Format("integer".into(), "expected 8 bytes".into()))?;
    Ok(u64::from_be_bytes(arr))
}

fn expect_len(kind: Kind, fields: &[Vec<u8>], n: usize) -> Result<(), KeyError> {
    if fields.len() != n {
        return Err(KeyError::Format(format!("{kind:?}"), format!("expected {n} fields, found {}", fields.len())));
    }
    Ok(())
}

pub fn encode_mul_ek(ek: &MulEvalKey) -> Vec<u8> {
    let g = &ek.group;
    pack(Kind::MulEval, &[vec![g.profile().id()], g.encode(&ek.h), g.encode(&ek.j)])
}

pub fn decode_mul_ek(bytes: &[u8]) -> Result<MulEvalKey, KeyError> {
    let f = unpack(Kind::MulEval, bytes)?;
    expect_len(Kind::MulEval, &f, 3)?;
    let group = profile_field(&f[0])?;
    Ok(MulEvalKey { h: group.decode(&f[1])?, j: group.decode(&f[2])?, group })
}

pub fn encode_mul_sk(sk: &MulSecretKey) -> Vec<u8> {
    let g = sk.group();
    pack(
        Kind::MulSecret,
        &[
            vec![g.profile().id()],
            g.encode_exponent(&sk.a),
            g.encode_exponent(&sk.x),
            g.encode_exponent(&sk.y),
            sk.prf.as_bytes().to_vec(),
        ],
    )
}

pub fn decode_mul_sk(bytes: &[u8]) -> Result<MulSecretKey, KeyError> {
    let f = unpack(Kind::MulSecret, bytes)?;
    expect_len(Kind::MulSecret, &f, 5)?;
    let g = profile_field(&f[0])?;
    let a = g.decode_exponent(&f[1])?;
    let x = g.decode_exponent(&f[2])?;
    let y = g.decode_exponent(&f[3])?;
    let prf = PrfKey::from_bytes(&f[4])?;
    Ok(MulSecretKey::from_parts(g, a, x, y, prf))
}

pub fn encode_add_ek(ek: &AddEvalKey) -> Vec<u8> {
    let g = &ek.group;
    pack(
        Kind::AddEval,
        &[
            vec![g.profile().id()],
            (ek.components as u64).to_be_bytes().to_vec(),
            g.encode(&ek.h),
            g.encode(&ek.j),
        ],
    )
}

pub fn decode_add_ek(bytes: &[u8]) -> Result<AddEvalKey, KeyError> {
    let f = unpack(Kind::AddEval, bytes)?;
    expect_len(Kind::AddEval, &f, 4)?;
    let group = profile_field(&f[0])?;
    let components = u64_field(&f[1])? as usize;
    Ok(AddEvalKey { h: group.decode(&f[2])?, j: group.decode(&f[3])?, group, components })
}

pub fn encode_add_sk(sk: &AddSecretKey) -> Vec<u8> {
    let g = sk.group();
    let mut fields = vec![
        vec![g.profile().id()],
        g.encode_exponent(&sk.x),
        g.encode_exponent(&sk.y),
        sk.prf.as_bytes().to_vec(),
        sk.table_bound().to_be_bytes().to_vec(),
    ];
    for (d, a) in sk.crt.moduli().iter().zip(&sk.a) {
        fields.push(d.to_be_bytes().to_vec());
        fields.push(g.encode_exponent(a));
    }
    pack(Kind::AddSecret, &fields)
}

pub fn decode_add_sk(bytes: &[u8]) -> Result<AddSecretKey, KeyError> {
    let f = unpack(Kind::AddSecret, bytes)?;
    if f.len() < 7 || (f.len() - 5) % 2 != 0 {
        return Err(KeyError::Format("AddSecret".into(), "bad field count".into()));
    }
    let g = profile_field(&f[0])?;
    let x = g.decode_exponent(&f[1])?;
    let y = g.decode_exponent(&f[2])?;
    let prf = PrfKey::from_bytes(&f[3])?;
    let bound = u64_field(&f[4])?;
    let mut moduli = Vec::new();
    let mut a = Vec::new();
    for pair in f[5..].chunks(2) {
        moduli.push(u64_field(&pair[0])?);
        a.push(g.decode_exponent(&pair[1])?);
    }
    let crt = CrtParams::new(moduli)?;
    Ok(AddSecretKey::from_parts(g, a, x, y, prf, crt, bound)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hase::{add, mul};
    use crate::ids::IdMultiset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn files_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let keys = KeySet::generate(Profile::TestTiny, &mut rng).unwrap();
        let dir = std::env::temp_dir().join(format!("flowseal-keys-{}", std::process::id()));
        keys.save(&dir).unwrap();
        let back = KeySet::load(&dir).unwrap();
        assert_eq!(back.profile, Profile::TestTiny);
        assert_eq!(back.fingerprint(), keys.fingerprint());
        let c = add::encrypt(&keys.add.sk, 200, "v", &mut rng).unwrap();
        let l = add::der(&back.add.sk, &IdMultiset::singleton("v")).unwrap();
        assert_eq!(add::decrypt(&back.add.sk, &c, &l).unwrap(), 200);
        let m = keys.mul.sk.group().random_element(&mut rng);
        let c = mul::encrypt(&keys.mul.sk, &m, "w", &mut rng).unwrap();
        let l = mul::der(&back.mul.sk, &IdMultiset::singleton("w")).unwrap();
        assert_eq!(mul::decrypt(&back.mul.sk, &c, &l).unwrap(), m);
        let ek = EvalKeys::load(&dir).unwrap();
        assert_eq!(ek.add.h, keys.add.ek.h);
        assert_eq!(ek.mul.j, keys.mul.ek.j);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        let keys = KeySet::generate(Profile::TestTiny, &mut rng).unwrap();
        let bytes = encode_mul_sk(&keys.mul.sk);
        assert!(decode_add_sk(&bytes).is_err());
        assert!(decode_mul_sk(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_mul_sk(&bytes).is_ok());
    }

    #[test]
    fn profile_group_pairs() {
        let (a, m) = groups_for(Profile::CurveStrong);
        assert_eq!((a.profile(), m.profile()), (Profile::CurveStrong, Profile::Modp1536));
        let (a, m) = groups_for(Profile::TestTiny);
        assert_eq!((a.profile(), m.profile()), (Profile::TestTiny, Profile::TestTiny));
    }
}
