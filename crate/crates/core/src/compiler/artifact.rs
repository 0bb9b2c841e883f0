//! Compiled artifacts and the end-to-end `compile` entry point.
//!
//! The public artifact is what the untrusted host runs: a linear instruction
//! list, encrypted constants and the input/output manifest. The secret artifact
//! holds everything the trusted module needs: labels per site, comparison
//! parameters and the labels expected on each output. Nothing in the public
//! part depends on a secret except through ciphertexts.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::compiler::labels::{assign_labels, LabelInfo, LabelledProgram, Selector, SiteSpec, Source, SpecRhs};
use crate::compiler::lang::{parse, BinOp, Relation};
use crate::compiler::ssa::{to_ssa, CmpRhs, SsaOp, SsaStmt};
use crate::compiler::types::{infer_types, insert_conversions};
use crate::compiler::{require_codec, CompileError};
use crate::encoding::Fixed;
use crate::group::Profile;
use crate::hase::{add, mul, Ciphertext, Domain, HaseError};
use crate::keys::KeySet;

pub const FORMAT_VERSION: u32 = 1;

/// One step of the ciphertext program. Conversion and comparison results are
/// named after their site.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Instr {
    Add { dst: String, a: String, b: String },
    Sub { dst: String, a: String, b: String },
    Mul { dst: String, a: String, b: String },
    ToMul { dst: String, src: String },
    ToAdd { dst: String, src: String },
    Cmp { dst: String, lhs: String, rhs: Option<String> },
    /// Falls through when `cond` holds, else jumps.
    Branch { cond: String, else_target: usize },
    Jump { target: usize },
    Phi { dst: String, cond: String, then_val: String, else_val: String },
}

impl Instr {
    pub fn dst(&self) -> Option<&str> {
        match self {
            Instr::Add { dst, .. }
            | Instr::Sub { dst, .. }
            | Instr::Mul { dst, .. }
            | Instr::ToMul { dst, .. }
            | Instr::ToAdd { dst, .. }
            | Instr::Cmp { dst, .. }
            | Instr::Phi { dst, .. } => Some(dst),
            Instr::Branch { .. } | Instr::Jump { .. } => None,
        }
    }

    /// Site served by the trusted module, if any.
    pub fn site(&self) -> Option<&str> {
        match self {
            Instr::ToMul { dst, .. } | Instr::ToAdd { dst, .. } | Instr::Cmp { dst, .. } => Some(dst),
            _ => None,
        }
    }

    /// Ciphertext operands read by the instruction.
    pub fn operands(&self) -> Vec<&str> {
        match self {
            Instr::Add { a, b, .. } | Instr::Sub { a, b, .. } | Instr::Mul { a, b, .. } => vec![a, b],
            Instr::ToMul { src, .. } | Instr::ToAdd { src, .. } => vec![src],
            Instr::Cmp { lhs, rhs, .. } => std::iter::once(lhs.as_str()).chain(rhs.as_deref()).collect(),
            Instr::Phi { then_val, else_val, .. } => vec![then_val, else_val],
            Instr::Branch { .. } | Instr::Jump { .. } => vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub name: String,
    pub domain: Domain,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub name: String,
    /// Program value holding the result.
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncryptedConst {
    pub domain: Domain,
    /// Base64 of the ciphertext bytes.
    pub ciphertext: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicArtifact {
    pub format_version: u32,
    pub profile: Profile,
    pub inputs: Vec<InputSpec>,
    pub outputs: Vec<OutputSpec>,
    pub constants: BTreeMap<String, EncryptedConst>,
    pub program: Vec<Instr>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiteKind {
    ToMul,
    ToAdd,
    Cmp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SiteRecord {
    ToMul { input: Selector<LabelInfo> },
    ToAdd { input: Selector<LabelInfo> },
    Cmp { relation: Relation, lhs: Selector<LabelInfo>, rhs: CmpParam },
}

impl SiteRecord {
    pub fn kind(&self) -> SiteKind {
        match self {
            SiteRecord::ToMul { .. } => SiteKind::ToMul,
            SiteRecord::ToAdd { .. } => SiteKind::ToAdd,
            SiteRecord::Cmp { .. } => SiteKind::Cmp,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpParam {
    Const(Fixed),
    Var(Selector<LabelInfo>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretArtifact {
    pub format_version: u32,
    pub profile: Profile,
    /// SHA-256 (hex) of the public artifact's JSON.
    pub public_digest: String,
    pub sites: BTreeMap<String, SiteRecord>,
    /// Expected result label per declared output.
    pub outputs: BTreeMap<String, Selector<LabelInfo>>,
}

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("artifact JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("artifact format version {found}, expected {FORMAT_VERSION}")]
    Version { found: u32 },
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, ArtifactError> {
    let probe: VersionProbe = serde_json::from_str(text)?;
    if probe.format_version != FORMAT_VERSION {
        return Err(ArtifactError::Version { found: probe.format_version });
    }
    Ok(serde_json::from_str(text)?)
}

impl PublicArtifact {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serialisable")
    }

    pub fn from_json(text: &str) -> Result<PublicArtifact, ArtifactError> {
        from_json(text)
    }

    /// Hex SHA-256 over the compact JSON encoding.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("serialisable")))
    }

    pub fn sites(&self) -> Vec<(&str, SiteKind)> {
        let mut seen = std::collections::BTreeSet::new();
        self.program
            .iter()
            .filter_map(|i| {
                let kind = match i {
                    Instr::ToMul { .. } => SiteKind::ToMul,
                    Instr::ToAdd { .. } => SiteKind::ToAdd,
                    Instr::Cmp { .. } => SiteKind::Cmp,
                    _ => return None,
                };
                let site = i.site()?;
                seen.insert(site).then_some((site, kind))
            })
            .collect()
    }

    pub fn constant(&self, name: &str, keys_add: &crate::group::Group, keys_mul: &crate::group::Group) -> Option<Ciphertext> {
        let c = self.constants.get(name)?;
        let bytes = B64.decode(&c.ciphertext).ok()?;
        Ciphertext::from_bytes(c.domain, &bytes, keys_add, keys_mul).ok()
    }
}

impl SecretArtifact {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serialisable")
    }

    pub fn from_json(text: &str) -> Result<SecretArtifact, ArtifactError> {
        from_json(text)
    }

    pub fn count(&self, kind: SiteKind) -> usize {
        self.sites.values().filter(|s| s.kind() == kind).count()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug)]
pub struct Compiled {
    pub public: PublicArtifact,
    pub secret: SecretArtifact,
}

fn linearize(stmts: &[SsaStmt], out: &mut Vec<Instr>) {
    for s in stmts {
        match s {
            SsaStmt::Def(d) => {
                let (dst, op) = (d.dst.clone(), &d.op);
                out.push(match op {
                    SsaOp::Input | SsaOp::Const(_) => continue,
                    SsaOp::Bin(BinOp::Add, a, b) => Instr::Add { dst, a: a.clone(), b: b.clone() },
                    SsaOp::Bin(BinOp::Sub, a, b) => Instr::Sub { dst, a: a.clone(), b: b.clone() },
                    SsaOp::Bin(BinOp::Mul, a, b) => Instr::Mul { dst, a: a.clone(), b: b.clone() },
                    SsaOp::Convert { to: Domain::Mul, src } => Instr::ToMul { dst, src: src.clone() },
                    SsaOp::Convert { to: Domain::Add, src } => Instr::ToAdd { dst, src: src.clone() },
                    SsaOp::Cmp { lhs, rhs, .. } => Instr::Cmp {
                        dst,
                        lhs: lhs.clone(),
                        rhs: match rhs {
                            CmpRhs::Var(v) => Some(v.clone()),
                            CmpRhs::Const(_) => None,
                        },
                    },
                    SsaOp::Phi { cond, then_val, else_val } => Instr::Phi {
                        dst,
                        cond: cond.clone(),
                        then_val: then_val.clone(),
                        else_val: else_val.clone(),
                    },
                });
            }
            SsaStmt::If { cond, then_body, else_body } => {
                let branch_at = out.len();
                out.push(Instr::Branch { cond: cond.clone(), else_target: 0 });
                linearize(then_body, out);
                let jump_at = (!else_body.is_empty()).then(|| {
                    out.push(Instr::Jump { target: 0 });
                    out.len() - 1
                });
                let else_start = out.len();
                linearize(else_body, out);
                let end = out.len();
                if let Instr::Branch { else_target, .. } = &mut out[branch_at] {
                    *else_target = else_start;
                }
                if let Some(j) = jump_at {
                    out[j] = Instr::Jump { target: end };
                }
            }
            SsaStmt::Output { .. } => {}
        }
    }
}

fn label_selector(sel: &Selector<Source>, keys: &KeySet) -> Result<Selector<LabelInfo>, HaseError> {
    sel.try_map(&mut |s| LabelInfo::derive(s, keys))
}

fn encrypt_constant<R: RngCore + CryptoRng>(
    name: &str,
    value: Fixed,
    domain: Domain,
    keys: &KeySet,
    rng: &mut R,
) -> Result<Ciphertext, CompileError> {
    let out_of_range =
        || CompileError::ConstantOutOfRange { name: name.to_string(), value: value.to_string(), domain };
    Ok(match domain {
        Domain::Add => {
            let m = value.normalized().ok_or_else(out_of_range)?;
            let wrapped = keys.add.sk.crt().wrap(m.mantissa).ok_or_else(out_of_range)?;
            Ciphertext::Add(add::encrypt(&keys.add.sk, wrapped, name, rng)?)
        }
        Domain::Mul => {
            let codec = require_codec(keys)?;
            let m = codec.encode(value.mantissa).map_err(|_| out_of_range())?;
            Ciphertext::Mul(mul::encrypt(&keys.mul.sk, &m, name, rng)?)
        }
    })
}

/// Encrypts every additive and multiplicative constant under its identifier.
/// Comparison constants are not emitted; they stay in the secret table.
pub fn encrypt_constants<R: RngCore + CryptoRng>(
    p: &LabelledProgram,
    keys: &KeySet,
    rng: &mut R,
) -> Result<BTreeMap<String, EncryptedConst>, CompileError> {
    let (ga, gm) = (keys.add.sk.group(), keys.mul.sk.group());
    let mut out = BTreeMap::new();
    for d in p.typed.ssa.defs() {
        if let SsaOp::Const(v) = &d.op {
            let domain = p.typed.domain_of(&d.dst).unwrap_or(Domain::Add);
            let c = encrypt_constant(&d.dst, *v, domain, keys, rng)?;
            out.insert(
                d.dst.clone(),
                EncryptedConst { domain, ciphertext: B64.encode(c.to_bytes(ga, gm)) },
            );
        }
    }
    Ok(out)
}

/// Builds both artifacts from a labelled program.
pub fn build<R: RngCore + CryptoRng>(
    p: &LabelledProgram,
    keys: &KeySet,
    rng: &mut R,
) -> Result<Compiled, CompileError> {
    let inputs: Vec<InputSpec> =
        p.typed.input_domains().into_iter().map(|(name, domain)| InputSpec { name, domain }).collect();
    if inputs.iter().any(|i| i.domain == Domain::Mul)
        || p.typed.domains.values().any(|s| s.contains(&Domain::Mul))
    {
        require_codec(keys)?;
    }
    let constants = encrypt_constants(p, keys, rng)?;
    let mut program = Vec::new();
    linearize(&p.typed.ssa.body, &mut program);
    let outputs = p
        .outputs
        .iter()
        .map(|(name, value, _)| OutputSpec { name: name.clone(), value: value.clone() })
        .collect();
    let public = PublicArtifact {
        format_version: FORMAT_VERSION,
        profile: keys.profile,
        inputs,
        outputs,
        constants,
        program,
    };
    let mut sites = BTreeMap::new();
    for (id, spec) in &p.sites {
        let rec = match spec {
            SiteSpec::Convert { to: Domain::Mul, input } => SiteRecord::ToMul { input: label_selector(input, keys)? },
            SiteSpec::Convert { to: Domain::Add, input } => SiteRecord::ToAdd { input: label_selector(input, keys)? },
            SiteSpec::Cmp { rel, lhs, rhs } => SiteRecord::Cmp {
                relation: *rel,
                lhs: label_selector(lhs, keys)?,
                rhs: match rhs {
                    SpecRhs::Const(v) => CmpParam::Const(*v),
                    SpecRhs::Var(s) => CmpParam::Var(label_selector(s, keys)?),
                },
            },
        };
        sites.insert(id.clone(), rec);
    }
    let mut outputs = BTreeMap::new();
    for (name, _, sel) in &p.outputs {
        outputs.insert(name.clone(), label_selector(sel, keys)?);
    }
    let secret = SecretArtifact {
        format_version: FORMAT_VERSION,
        profile: keys.profile,
        public_digest: public.digest(),
        sites,
        outputs,
    };
    Ok(Compiled { public, secret })
}

/// Runs the whole pipeline on source text.
pub fn compile<R: RngCore + CryptoRng>(text: &str, keys: &KeySet, rng: &mut R) -> Result<Compiled, CompileError> {
    let ast = parse(text)?;
    let labelled = assign_labels(insert_conversions(infer_types(to_ssa(&ast)?)))?;
    build(&labelled, keys, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::labels::Selector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const LISTING: &str = "input b, c, e;\na = b + c;\nd = a * e;\nif (d > 42) f = 1; else f = 0;\noutput f;";

    fn keys() -> KeySet {
        KeySet::generate(Profile::Modp1536, &mut ChaCha20Rng::seed_from_u64(7)).unwrap()
    }

    #[test]
    fn listing_artifacts() {
        let keys = keys();
        let c = compile(LISTING, &keys, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        assert_eq!(
            c.public.program,
            vec![
                Instr::Add { dst: "a".into(), a: "b".into(), b: "c".into() },
                Instr::ToMul { dst: "a1".into(), src: "a".into() },
                Instr::Mul { dst: "d".into(), a: "a1".into(), b: "e".into() },
                Instr::Cmp { dst: "d1".into(), lhs: "d".into(), rhs: None },
                Instr::Branch { cond: "d1".into(), else_target: 6 },
                Instr::Jump { target: 6 },
                Instr::Phi { dst: "f2".into(), cond: "d1".into(), then_val: "f".into(), else_val: "f1".into() },
            ]
        );
        assert_eq!(c.public.constants.keys().collect::<Vec<_>>(), vec!["f", "f1"]);
        assert_eq!(c.secret.sites.len(), 2);
        let SiteRecord::ToMul { input: Selector::Leaf(l2) } = &c.secret.sites["a1"] else { panic!() };
        let expected = add::der(&keys.add.sk, &["b", "c"].into_iter().collect()).unwrap();
        assert_eq!(l2.label_bytes().unwrap(), keys.add.sk.group().encode(expected.element()));
        let SiteRecord::Cmp { lhs: Selector::Leaf(l4), rhs: CmpParam::Const(k), .. } = &c.secret.sites["d1"] else {
            panic!()
        };
        let expected = mul::der(&keys.mul.sk, &["a1", "e"].into_iter().collect()).unwrap();
        assert_eq!(l4.label_bytes().unwrap(), keys.mul.sk.group().encode(expected.element()));
        assert_eq!(*k, Fixed::from_int(42));
        assert_eq!(c.secret.public_digest, c.public.digest());
    }

    #[test]
    fn json_round_trip_and_version_check() {
        let c = compile(LISTING, &keys(), &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        let text = c.public.to_json();
        assert_eq!(PublicArtifact::from_json(&text).unwrap(), c.public);
        let secret = SecretArtifact::from_json(&c.secret.to_json()).unwrap();
        assert_eq!(secret, c.secret);
        let bumped = text.replacen("\"format_version\": 1", "\"format_version\": 9", 1);
        assert!(matches!(PublicArtifact::from_json(&bumped), Err(ArtifactError::Version { found: 9 })));
    }

    #[test]
    fn zero_constant_encrypts_additive_identity() {
        let keys = keys();
        let c = compile("input x;\ny = x + 0;\noutput y;", &keys, &mut ChaCha20Rng::seed_from_u64(3)).unwrap();
        let ct = c.public.constant("const", keys.add.sk.group(), keys.mul.sk.group()).unwrap();
        let Ciphertext::Add(ct) = ct else { panic!() };
        let l = add::der(&keys.add.sk, &crate::ids::IdMultiset::singleton("const")).unwrap();
        assert_eq!(add::decrypt(&keys.add.sk, &ct, &l).unwrap(), 0);
    }

    #[test]
    fn multiplicative_constant_carries_the_scaled_mantissa() {
        let keys = keys();
        let c = compile("input x;\ny = x * 0.90;\noutput y;", &keys, &mut ChaCha20Rng::seed_from_u64(3)).unwrap();
        let Ciphertext::Mul(ct) = c.public.constant("const", keys.add.sk.group(), keys.mul.sk.group()).unwrap() else {
            panic!()
        };
        let l = mul::der(&keys.mul.sk, &crate::ids::IdMultiset::singleton("const")).unwrap();
        let m = mul::decrypt(&keys.mul.sk, &ct, &l).unwrap();
        assert_eq!(keys.codec().unwrap().decode(&m).unwrap(), 900_000);
    }

    #[test]
    fn oversized_constant_is_rejected() {
        let err = compile("input x;\ny = x + 99999999999;\noutput y;", &keys(), &mut ChaCha20Rng::seed_from_u64(3))
            .unwrap_err();
        assert!(matches!(err, CompileError::ConstantOutOfRange { .. }), "{err}");
    }

    #[test]
    fn tiny_profile_rejects_the_multiplicative_domain() {
        let keys = KeySet::generate(Profile::TestTiny, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        assert!(matches!(
            compile("input x, y;\nz = x * y;\noutput z;", &keys, &mut ChaCha20Rng::seed_from_u64(1)),
            Err(CompileError::MulDomainUnavailable(_))
        ));
        assert!(compile("input x, y;\nz = x + y;\noutput z;", &keys, &mut ChaCha20Rng::seed_from_u64(1)).is_ok());
    }
}
