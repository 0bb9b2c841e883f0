//! Untrusted-side execution and client-side input/output handling.
//!
//! The [`Executor`] walks the public program over ciphertexts. Homomorphic
//! operations run locally; conversions and comparisons go to the trusted
//! module. The environment holds only ciphertexts and comparison booleans.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::artifact::{Instr, PublicArtifact, SecretArtifact};
use crate::compiler::labels::LabelInfo;
use crate::encoding::Fixed;
use crate::group::Group;
use crate::hase::{add, mul, Ciphertext, Domain, Label};
use crate::keys::{EvalKeys, KeySet};
use crate::trusted::{Fault, TrustedModule, VaultOp};

/// Operations on encrypted data, split by where they run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub hom_add: u64,
    pub hom_mul: u64,
    pub to_mul: u64,
    pub to_add: u64,
    pub cmp_const: u64,
    pub cmp_var: u64,
    pub verify: u64,
}

impl OpCounters {
    pub fn untrusted(&self) -> u64 {
        self.hom_add + self.hom_mul
    }

    /// Trusted-module calls made by the program; result verification is
    /// client-side and not included.
    pub fn trusted(&self) -> u64 {
        self.to_mul + self.to_add + self.cmp_const + self.cmp_var
    }
}

/// Structured report of an aborted execution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultReport {
    pub site: String,
    pub op: VaultOp,
    pub reason: crate::trusted::FaultReason,
    /// Index of the faulting instruction.
    pub pc: usize,
    pub counters: OpCounters,
}

impl FaultReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serialisable")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuntimeError {
    #[error("execution stopped by the trusted module: {}", .0.reason_text())]
    Fault(Box<FaultReport>),
    #[error("instruction {pc}: {message}")]
    Malformed { pc: usize, message: String },
    #[error("execution exceeded {0} steps")]
    StepLimit(u64),
}

impl FaultReport {
    fn reason_text(&self) -> String {
        format!("{:?} at `{}` ({:?})", self.reason, self.site, self.op)
    }
}

#[derive(Clone, Debug)]
pub struct ExecOutcome {
    /// Result ciphertext per declared output.
    pub outputs: BTreeMap<String, Ciphertext>,
    pub counters: OpCounters,
    /// Comparison outcomes by site, the declassified part of the run.
    pub trace: BTreeMap<String, bool>,
    /// Comparison outcomes in execution order.
    pub decisions: Vec<bool>,
}

/// Steps a public program. Fields are public so attack drivers can tamper
/// with the program and environment between steps.
pub struct Executor<T: TrustedModule> {
    pub program: Vec<Instr>,
    pub env: BTreeMap<String, Ciphertext>,
    pub bools: BTreeMap<String, bool>,
    pub pc: usize,
    pub counters: OpCounters,
    pub decisions: Vec<bool>,
    pub tm: T,
    outputs: Vec<(String, String)>,
    add_group: Group,
    mul_group: Group,
    steps: u64,
}

/// Upper bound on executed instructions, a guard against tampered jumps.
pub const MAX_STEPS: u64 = 10_000_000;

impl<T: TrustedModule> Executor<T> {
    /// Loads constants and encrypted inputs into a fresh environment.
    pub fn new(
        public: &PublicArtifact,
        ek: &EvalKeys,
        inputs: BTreeMap<String, Ciphertext>,
        tm: T,
    ) -> Result<Executor<T>, RuntimeError> {
        let (add_group, mul_group) = (ek.add.group.clone(), ek.mul.group.clone());
        let mut env = inputs;
        for (name, c) in &public.constants {
            let bytes = B64
                .decode(&c.ciphertext)
                .map_err(|e| RuntimeError::Malformed { pc: 0, message: format!("constant `{name}`: {e}") })?;
            let ct = Ciphertext::from_bytes(c.domain, &bytes, &add_group, &mul_group)
                .map_err(|e| RuntimeError::Malformed { pc: 0, message: format!("constant `{name}`: {e}") })?;
            env.insert(name.clone(), ct);
        }
        Ok(Executor {
            program: public.program.clone(),
            env,
            bools: BTreeMap::new(),
            pc: 0,
            counters: OpCounters::default(),
            decisions: Vec::new(),
            tm,
            outputs: public.outputs.iter().map(|o| (o.name.clone(), o.value.clone())).collect(),
            add_group,
            mul_group,
            steps: 0,
        })
    }

    pub fn is_done(&self) -> bool {
        self.pc >= self.program.len()
    }

    fn malformed(&self, message: impl Into<String>) -> RuntimeError {
        RuntimeError::Malformed { pc: self.pc, message: message.into() }
    }

    fn get(&self, v: &str) -> Result<&Ciphertext, RuntimeError> {
        self.env.get(v).ok_or_else(|| self.malformed(format!("`{v}` is not defined")))
    }

    fn add_operand(&self, v: &str) -> Result<add::AddCiphertext, RuntimeError> {
        match self.get(v)? {
            Ciphertext::Add(c) => Ok(c.clone()),
            Ciphertext::Mul(_) => Err(self.malformed(format!("`{v}` is not additive"))),
        }
    }

    fn mul_operand(&self, v: &str) -> Result<mul::MulCiphertext, RuntimeError> {
        match self.get(v)? {
            Ciphertext::Mul(c) => Ok(c.clone()),
            Ciphertext::Add(_) => Err(self.malformed(format!("`{v}` is not multiplicative"))),
        }
    }

    fn fault(&self, f: Fault) -> RuntimeError {
        RuntimeError::Fault(Box::new(FaultReport {
            site: f.site,
            op: f.op,
            reason: f.reason,
            pc: self.pc,
            counters: self.counters,
        }))
    }

    /// Executes the instruction at `pc`.
    pub fn step(&mut self) -> Result<(), RuntimeError> {
        self.steps += 1;
        if self.steps > MAX_STEPS {
            return Err(RuntimeError::StepLimit(MAX_STEPS));
        }
        let instr = self.program.get(self.pc).cloned().ok_or_else(|| self.malformed("pc out of range"))?;
        let mut next = self.pc + 1;
        match &instr {
            Instr::Add { dst, a, b } | Instr::Sub { dst, a, b } => {
                let a = self.add_operand(a)?;
                let mut b = self.add_operand(b)?;
                if matches!(instr, Instr::Sub { .. }) {
                    b = add::negate(&self.add_group, &b);
                }
                let c = add::eval(&self.add_group, &[a, b]).map_err(|e| self.malformed(e.to_string()))?;
                self.counters.hom_add += 1;
                self.env.insert(dst.clone(), Ciphertext::Add(c));
            }
            Instr::Mul { dst, a, b } => {
                let (a, b) = (self.mul_operand(a)?, self.mul_operand(b)?);
                let c = mul::eval(&self.mul_group, &[a, b]).map_err(|e| self.malformed(e.to_string()))?;
                self.counters.hom_mul += 1;
                self.env.insert(dst.clone(), Ciphertext::Mul(c));
            }
            Instr::ToMul { dst, src } | Instr::ToAdd { dst, src } => {
                let c = self.get(src)?.clone();
                let out = if matches!(instr, Instr::ToMul { .. }) {
                    self.counters.to_mul += 1;
                    self.tm.to_mul(dst, &c)
                } else {
                    self.counters.to_add += 1;
                    self.tm.to_add(dst, &c)
                };
                let out = out.map_err(|f| self.fault(f))?;
                self.env.insert(dst.clone(), out);
            }
            Instr::Cmp { dst, lhs, rhs } => {
                let l = self.get(lhs)?.clone();
                let r = rhs.as_deref().map(|r| self.get(r).cloned()).transpose()?;
                if r.is_some() {
                    self.counters.cmp_var += 1;
                } else {
                    self.counters.cmp_const += 1;
                }
                let b = self.tm.compare(dst, &l, r.as_ref()).map_err(|f| self.fault(f))?;
                self.bools.insert(dst.clone(), b);
                self.decisions.push(b);
            }
            Instr::Branch { cond, else_target } => {
                let b = *self.bools.get(cond).ok_or_else(|| self.malformed(format!("no outcome for `{cond}`")))?;
                if !b {
                    next = *else_target;
                }
            }
            Instr::Jump { target } => next = *target,
            Instr::Phi { dst, cond, then_val, else_val } => {
                let b = *self.bools.get(cond).ok_or_else(|| self.malformed(format!("no outcome for `{cond}`")))?;
                let v = self.get(if b { then_val } else { else_val })?.clone();
                self.env.insert(dst.clone(), v);
            }
        }
        self.pc = next;
        Ok(())
    }

    /// Runs to completion and collects the declared outputs.
    pub fn run(mut self) -> Result<ExecOutcome, RuntimeError> {
        while !self.is_done() {
            self.step()?;
        }
        self.finish()
    }

    pub fn finish(self) -> Result<ExecOutcome, RuntimeError> {
        let mut outputs = BTreeMap::new();
        for (name, value) in &self.outputs {
            outputs.insert(name.clone(), self.get(value)?.clone());
        }
        Ok(ExecOutcome { outputs, counters: self.counters, trace: self.bools, decisions: self.decisions })
    }

    /// True iff every stored ciphertext consists of group members.
    pub fn audit_env(&self) -> bool {
        self.env.values().all(|c| {
            let g = match c {
                Ciphertext::Add(_) => &self.add_group,
                Ciphertext::Mul(_) => &self.mul_group,
            };
            c.elements().iter().all(|e| g.is_member(e))
        })
    }
}

/// Runs a public program to completion.
pub fn execute<T: TrustedModule>(
    public: &PublicArtifact,
    ek: &EvalKeys,
    inputs: BTreeMap<String, Ciphertext>,
    tm: T,
) -> Result<ExecOutcome, RuntimeError> {
    Executor::new(public, ek, inputs, tm)?.run()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InputError {
    #[error("missing input `{0}`")]
    Missing(String),
    #[error("unexpected input `{0}`")]
    Unexpected(String),
    #[error("input `{name}` = {value} is outside the {domain} plaintext range")]
    OutOfRange { name: String, value: String, domain: Domain },
    #[error("multiplicative inputs need the 1536-bit group")]
    NoCodec,
}

/// Encrypts plaintext inputs under their declared identifiers and domains.
pub fn encrypt_inputs<R: RngCore + CryptoRng>(
    public: &PublicArtifact,
    keys: &KeySet,
    inputs: &BTreeMap<String, Fixed>,
    rng: &mut R,
) -> Result<BTreeMap<String, Ciphertext>, InputError> {
    if let Some(extra) = inputs.keys().find(|k| !public.inputs.iter().any(|i| &i.name == *k)) {
        return Err(InputError::Unexpected(extra.clone()));
    }
    let mut out = BTreeMap::new();
    for spec in &public.inputs {
        let v = inputs.get(&spec.name).ok_or_else(|| InputError::Missing(spec.name.clone()))?;
        out.insert(spec.name.clone(), encrypt_value(keys, spec.domain, v, &spec.name, rng)?);
    }
    Ok(out)
}

/// Encrypts one scale-one value under `id`.
pub fn encrypt_value<R: RngCore + CryptoRng>(
    keys: &KeySet,
    domain: Domain,
    v: &Fixed,
    id: &str,
    rng: &mut R,
) -> Result<Ciphertext, InputError> {
    let range = || InputError::OutOfRange { name: id.to_string(), value: v.to_string(), domain };
    let v = v.normalized().ok_or_else(range)?;
    Ok(match domain {
        Domain::Add => {
            let m = keys.add.sk.crt().wrap(v.mantissa).ok_or_else(range)?;
            Ciphertext::Add(add::encrypt(&keys.add.sk, m, id, rng).map_err(|_| range())?)
        }
        Domain::Mul => {
            let codec = keys.codec().ok_or(InputError::NoCodec)?;
            let m = codec.encode(v.mantissa).map_err(|_| range())?;
            Ciphertext::Mul(mul::encrypt(&keys.mul.sk, &m, id, rng).map_err(|_| range())?)
        }
    })
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifyError {
    #[error("no result for output `{0}`")]
    MissingOutput(String),
    #[error("output `{0}` has no expected label")]
    UnknownOutput(String),
    #[error("output `{0}` depends on a comparison missing from the trace")]
    Unresolved(String),
    #[error("output `{0}` failed verification")]
    Rejected(String),
}

/// Label-checked decryption of one result under the expected label for the
/// path recorded in `trace`.
pub fn decrypt_and_verify_one(
    secret: &SecretArtifact,
    keys: &KeySet,
    name: &str,
    c: &Ciphertext,
    trace: &BTreeMap<String, bool>,
) -> Result<Fixed, VerifyError> {
    let sel = secret.outputs.get(name).ok_or_else(|| VerifyError::UnknownOutput(name.to_string()))?;
    let info: &LabelInfo =
        sel.resolve(|s| trace.get(s).copied()).ok_or_else(|| VerifyError::Unresolved(name.to_string()))?;
    let rejected = || VerifyError::Rejected(name.to_string());
    if info.domain != c.domain() {
        return Err(rejected());
    }
    let bytes = info.label_bytes().ok_or_else(rejected)?;
    let mantissa = match c {
        Ciphertext::Add(ct) => {
            let sk = &keys.add.sk;
            let l = Label::new(sk.group().decode(&bytes).map_err(|_| rejected())?);
            sk.crt().center(add::decrypt(sk, ct, &l).map_err(|_| rejected())?)
        }
        Ciphertext::Mul(ct) => {
            let sk = &keys.mul.sk;
            let l = Label::new(sk.group().decode(&bytes).map_err(|_| rejected())?);
            let m = mul::decrypt(sk, ct, &l).map_err(|_| rejected())?;
            keys.codec().ok_or_else(rejected)?.decode(&m).map_err(|_| rejected())?
        }
    };
    Ok(Fixed::new(mantissa, info.scale))
}

impl ExecOutcome {
    /// Verifies and decrypts every output; counts one verification each.
    pub fn decrypt_and_verify(
        &mut self,
        secret: &SecretArtifact,
        keys: &KeySet,
    ) -> Result<BTreeMap<String, Fixed>, VerifyError> {
        let mut out = BTreeMap::new();
        for name in secret.outputs.keys() {
            let c = self.outputs.get(name).ok_or_else(|| VerifyError::MissingOutput(name.clone()))?;
            self.counters.verify += 1;
            out.insert(name.clone(), decrypt_and_verify_one(secret, keys, name, c, &self.trace)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::compile;
    use crate::group::Profile;
    use crate::trusted::frame::FramedModule;
    use crate::trusted::Vault;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Setup {
        keys: KeySet,
        public: PublicArtifact,
        secret: SecretArtifact,
        vault: Vault,
    }

    fn setup(text: &str) -> Setup {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let keys = KeySet::generate(Profile::Modp1536, &mut rng).unwrap();
        let c = compile(text, &keys, &mut rng).unwrap();
        let vault = Vault::with_seed(8);
        vault.provision(&c.secret.to_json(), keys.clone(), b"n").unwrap();
        Setup { keys, public: c.public, secret: c.secret, vault }
    }

    fn inputs(pairs: &[(&str, &str)]) -> BTreeMap<String, Fixed> {
        pairs.iter().map(|(k, v)| (k.to_string(), Fixed::parse(v).unwrap())).collect()
    }

    fn run(s: &Setup, pairs: &[(&str, &str)]) -> Result<ExecOutcome, RuntimeError> {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let cts = encrypt_inputs(&s.public, &s.keys, &inputs(pairs), &mut rng).unwrap();
        let session = s.vault.open_session(&s.public).unwrap();
        execute(&s.public, &s.keys.eval_keys(), cts, session)
    }

    const CART3: &str = "input p0, p1, p2;\nsum = p0 + p1 + p2;\nif (sum > 500) { total = sum * 0.90; } else { if (sum > 250) { total = sum * 0.95; } else { total = sum; } }\noutput total;";

    #[test]
    fn cart_cases() {
        let s = setup(CART3);
        for (prices, expected, untrusted, trusted) in [
            (["200", "200", "200"], "540.00", 3, 2),
            (["100", "100", "100"], "285.00", 3, 3),
            (["10", "20", "70"], "100.00", 2, 2),
        ] {
            let mut out = run(&s, &[("p0", prices[0]), ("p1", prices[1]), ("p2", prices[2])]).unwrap();
            assert_eq!(out.counters.untrusted(), untrusted);
            assert_eq!(out.counters.trusted(), trusted);
            let v = out.decrypt_and_verify(&s.secret, &s.keys).unwrap();
            assert_eq!(v["total"].to_string(), expected);
            assert_eq!(out.counters.verify, 1);
        }
    }

    #[test]
    fn add_only_program_makes_no_trusted_calls() {
        let s = setup("input a, b;\nc = a + b - a;\noutput c;");
        let mut out = run(&s, &[("a", "1.5"), ("b", "-2.25")]).unwrap();
        assert_eq!(out.counters.trusted(), 0);
        assert_eq!(out.counters.hom_add, 2);
        assert_eq!(out.decrypt_and_verify(&s.secret, &s.keys).unwrap()["c"], Fixed::parse("-2.25").unwrap());
    }

    #[test]
    fn framed_transport_matches_in_process() {
        let s = setup(CART3);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let cts = encrypt_inputs(&s.public, &s.keys, &inputs(&[("p0", "99"), ("p1", "99"), ("p2", "99")]), &mut rng).unwrap();
        let mut session = s.vault.open_session(&s.public).unwrap();
        let ek = s.keys.eval_keys();
        let framed = FramedModule::new(&mut session, ek.add.group.clone(), ek.mul.group.clone());
        let mut out = execute(&s.public, &ek, cts, framed).unwrap();
        assert_eq!(out.decrypt_and_verify(&s.secret, &s.keys).unwrap()["total"].to_string(), "282.15");
        assert_eq!(session.stats().cmp, 2);
        assert_eq!(session.stats().to_mul, 1);
    }

    #[test]
    fn swapped_result_is_rejected() {
        let s = setup("input a, b;\nc = a + b;\nd = a + a;\noutput c, d;");
        let mut out = run(&s, &[("a", "1"), ("b", "2")]).unwrap();
        let (c, d) = (out.outputs["c"].clone(), out.outputs["d"].clone());
        out.outputs.insert("c".into(), d);
        out.outputs.insert("d".into(), c);
        assert_eq!(out.decrypt_and_verify(&s.secret, &s.keys), Err(VerifyError::Rejected("c".into())));
    }

    #[test]
    fn inputs_are_validated() {
        let s = setup("input a;\nb = a + 1;\noutput b;");
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert_eq!(
            encrypt_inputs(&s.public, &s.keys, &BTreeMap::new(), &mut rng),
            Err(InputError::Missing("a".into()))
        );
        assert!(matches!(
            encrypt_inputs(&s.public, &s.keys, &inputs(&[("a", "1"), ("z", "1")]), &mut rng),
            Err(InputError::Unexpected(_))
        ));
        let huge = s.keys.add.sk.crt().signed_max() / 1_000_000 + 1;
        assert!(matches!(
            encrypt_inputs(&s.public, &s.keys, &inputs(&[("a", &huge.to_string())]), &mut rng),
            Err(InputError::OutOfRange { .. })
        ));
        let ok = encrypt_inputs(&s.public, &s.keys, &inputs(&[("a", "0")]), &mut rng).unwrap();
        assert_eq!(ok.len(), 1);
    }

    #[test]
    fn fault_report_names_the_site() {
        let s = setup("input b, c, e;\na = b + c;\nd = a * e;\nif (d > 42) f = 1; else f = 0;\noutput f;");
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut cts =
            encrypt_inputs(&s.public, &s.keys, &inputs(&[("b", "1"), ("c", "2"), ("e", "30")]), &mut rng).unwrap();
        // The host feeds b twice instead of b and c.
        let b = cts["b"].clone();
        cts.insert("c".into(), b);
        let session = s.vault.open_session(&s.public).unwrap();
        let err = execute(&s.public, &s.keys.eval_keys(), cts, session).unwrap_err();
        let RuntimeError::Fault(report) = err else { panic!("{err:?}") };
        assert_eq!(report.site, "a1");
        assert_eq!(report.pc, 1);
        assert_eq!(report.counters.hom_add, 1);
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["site"], "a1");
        assert_eq!(json["op"], "to-mul");
    }

    #[test]
    fn environment_holds_only_ciphertexts() {
        let s = setup(CART3);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let cts = encrypt_inputs(&s.public, &s.keys, &inputs(&[("p0", "300"), ("p1", "1"), ("p2", "2")]), &mut rng).unwrap();
        let session = s.vault.open_session(&s.public).unwrap();
        let mut ex = Executor::new(&s.public, &s.keys.eval_keys(), cts, session).unwrap();
        while !ex.is_done() {
            assert!(ex.audit_env());
            ex.step().unwrap();
        }
        assert!(ex.audit_env());
    }
}
