//! Simulated trusted module.
//!
//! The vault holds both secret keys and the secret artifact. The untrusted
//! host talks to it through a [`Session`], one per program run, which only
//! ever returns ciphertexts, comparison booleans or a terminal [`Fault`].
//! Every decryption uses the label the compiler stored for the site; a
//! ciphertext that was produced by any other data flow is rejected.

pub mod frame;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, RwLock};

use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::compiler::artifact::{hex, CmpParam, Instr, PublicArtifact, SecretArtifact, SiteKind, SiteRecord};
use crate::compiler::labels::{LabelInfo, Selector};
use crate::encoding::{Fixed, IntegerCodec};
use crate::group::OpCount;
use crate::hase::{add, mul, Ciphertext, DecryptError, Domain, Label};
use crate::keys::KeySet;

/// Operation requested from the vault.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VaultOp {
    ToMul,
    ToAdd,
    Cmp,
    Verify,
}

impl VaultOp {
    pub fn code(self) -> u8 {
        match self {
            VaultOp::ToMul => 1,
            VaultOp::ToAdd => 2,
            VaultOp::Cmp => 3,
            VaultOp::Verify => 4,
        }
    }

    pub fn from_code(c: u8) -> Option<VaultOp> {
        Some(match c {
            1 => VaultOp::ToMul,
            2 => VaultOp::ToAdd,
            3 => VaultOp::Cmp,
            4 => VaultOp::Verify,
            _ => return None,
        })
    }

    fn site_kind(self) -> Option<SiteKind> {
        match self {
            VaultOp::ToMul => Some(SiteKind::ToMul),
            VaultOp::ToAdd => Some(SiteKind::ToAdd),
            VaultOp::Cmp => Some(SiteKind::Cmp),
            VaultOp::Verify => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultReason {
    NotProvisioned,
    UnknownSite,
    WrongKind,
    /// The site already ran in this execution.
    SiteReused,
    /// A comparison the label depends on has not run in this execution.
    UnresolvedPath,
    DomainMismatch,
    /// Label check failed.
    Rejected,
    DlogNotFound,
    Malformed,
    OutOfRange,
    /// An earlier fault stopped this execution.
    Latched,
}

/// Terminal execution fault.
#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("trusted module fault at `{site}` ({op:?}): {reason:?}")]
pub struct Fault {
    pub site: String,
    pub op: VaultOp,
    pub reason: FaultReason,
}

#[derive(Debug, Error)]
pub enum VaultError {
    #[error("vault is already provisioned")]
    AlreadyProvisioned,
    #[error("vault is not provisioned")]
    NotProvisioned,
    #[error("secret artifact: {0}")]
    Artifact(#[from] crate::compiler::artifact::ArtifactError),
    #[error("secret artifact is for profile {artifact}, keys are for {keys}")]
    ProfileMismatch { artifact: String, keys: String },
    #[error("public artifact does not match the provisioned one")]
    DigestMismatch,
    #[error("site table incomplete: {0}")]
    SiteTable(String),
}

/// Stand-in for a remote attestation report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttestationQuote {
    /// Hex SHA-256 over the nonce, the secret artifact and the key fingerprint.
    pub digest: String,
    pub nonce: String,
}

impl AttestationQuote {
    /// The quote a vault must return for this provisioning request.
    pub fn expected(secret_json: &str, keys: &KeySet, nonce: &[u8]) -> AttestationQuote {
        let mut h = Sha256::new();
        h.update(b"flowseal-attest-v1");
        h.update((nonce.len() as u32).to_be_bytes());
        h.update(nonce);
        h.update((secret_json.len() as u64).to_be_bytes());
        h.update(secret_json.as_bytes());
        h.update(keys.fingerprint());
        AttestationQuote { digest: hex(&h.finalize()), nonce: hex(nonce) }
    }
}

struct Provisioned {
    keys: KeySet,
    secret: SecretArtifact,
    codec: Option<Arc<IntegerCodec>>,
}

/// The trusted module. Read-only once provisioned; sessions carry all
/// per-execution state.
pub struct Vault {
    state: RwLock<Option<Arc<Provisioned>>>,
    rng: Mutex<StdRng>,
}

impl Default for Vault {
    fn default() -> Vault {
        Vault::new()
    }
}

impl Vault {
    pub fn new() -> Vault {
        Vault { state: RwLock::new(None), rng: Mutex::new(StdRng::from_entropy()) }
    }

    /// Vault with a reproducible randomness source, for tests.
    pub fn with_seed(seed: u64) -> Vault {
        Vault { state: RwLock::new(None), rng: Mutex::new(StdRng::seed_from_u64(seed)) }
    }

    pub fn is_provisioned(&self) -> bool {
        self.state.read().expect("vault lock").is_some()
    }

    /// Loads keys and the secret artifact. Allowed once.
    pub fn provision(&self, secret_json: &str, keys: KeySet, nonce: &[u8]) -> Result<AttestationQuote, VaultError> {
        let mut state = self.state.write().expect("vault lock");
        if state.is_some() {
            return Err(VaultError::AlreadyProvisioned);
        }
        let secret = SecretArtifact::from_json(secret_json)?;
        if secret.profile != keys.profile {
            return Err(VaultError::ProfileMismatch {
                artifact: secret.profile.to_string(),
                keys: keys.profile.to_string(),
            });
        }
        let quote = AttestationQuote::expected(secret_json, &keys, nonce);
        let codec = keys.codec();
        *state = Some(Arc::new(Provisioned { keys, secret, codec }));
        Ok(quote)
    }

    /// Checks that the public program matches the provisioned table: same
    /// digest, and every site it calls has exactly one entry of the right kind.
    pub fn check_program(&self, public: &PublicArtifact) -> Result<(), VaultError> {
        let state = self.state.read().expect("vault lock");
        let prov = state.as_ref().ok_or(VaultError::NotProvisioned)?;
        if public.digest() != prov.secret.public_digest {
            return Err(VaultError::DigestMismatch);
        }
        let called = public.sites();
        for (site, kind) in &called {
            match prov.secret.sites.get(*site) {
                Some(rec) if rec.kind() == *kind => {}
                Some(_) => return Err(VaultError::SiteTable(format!("`{site}` has the wrong kind"))),
                None => return Err(VaultError::SiteTable(format!("`{site}` has no entry"))),
            }
        }
        let called: BTreeSet<&str> = called.iter().map(|(s, _)| *s).collect();
        if let Some(extra) = prov.secret.sites.keys().find(|s| !called.contains(s.as_str())) {
            return Err(VaultError::SiteTable(format!("`{extra}` is never called")));
        }
        for o in &public.outputs {
            if !prov.secret.outputs.contains_key(&o.name) {
                return Err(VaultError::SiteTable(format!("output `{}` has no expected label", o.name)));
            }
        }
        Ok(())
    }

    /// Opens an execution context for one run of `public`.
    pub fn open_session(&self, public: &PublicArtifact) -> Result<Session, VaultError> {
        self.check_program(public)?;
        Ok(self.session_unchecked())
    }

    /// Execution context without the program cross-check. Every request is
    /// still checked against the site table.
    pub fn session_unchecked(&self) -> Session {
        let prov = self.state.read().expect("vault lock").clone();
        let mut seed = [0u8; 32];
        self.rng.lock().expect("vault rng").fill_bytes(&mut seed);
        Session {
            prov,
            rng: StdRng::from_seed(seed),
            fault: None,
            cmp_log: BTreeMap::new(),
            used: BTreeSet::new(),
            stats: SessionStats::default(),
        }
    }
}

/// Work done inside the vault during one session.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStats {
    pub to_mul: u64,
    pub to_add: u64,
    pub cmp: u64,
    pub verify: u64,
    /// Group work of the most recent request.
    #[serde(skip)]
    pub last_request: OpCount,
}

/// One execution's view of the vault. Latches on the first fault.
pub struct Session {
    prov: Option<Arc<Provisioned>>,
    rng: StdRng,
    fault: Option<Fault>,
    cmp_log: BTreeMap<String, bool>,
    used: BTreeSet<String>,
    stats: SessionStats,
}

impl Session {
    pub fn fault(&self) -> Option<&Fault> {
        self.fault.as_ref()
    }

    pub fn stats(&self) -> &SessionStats {
        &self.stats
    }

    /// Comparison outcomes released so far, by site.
    pub fn comparisons(&self) -> &BTreeMap<String, bool> {
        &self.cmp_log
    }

    pub fn to_mul(&mut self, site: &str, c: &Ciphertext) -> Result<Ciphertext, Fault> {
        self.guarded(VaultOp::ToMul, site, |s, prov, rec| s.convert(prov, rec, site, c))
    }

    pub fn to_add(&mut self, site: &str, c: &Ciphertext) -> Result<Ciphertext, Fault> {
        self.guarded(VaultOp::ToAdd, site, |s, prov, rec| s.convert(prov, rec, site, c))
    }

    pub fn compare(&mut self, site: &str, lhs: &Ciphertext, rhs: Option<&Ciphertext>) -> Result<bool, Fault> {
        let out = self.guarded(VaultOp::Cmp, site, |s, prov, rec| s.cmp(prov, rec, lhs, rhs))?;
        self.cmp_log.insert(site.to_string(), out);
        Ok(out)
    }

    /// True iff `c` carries the label expected for output `name` on the path
    /// this execution took. Does not latch.
    pub fn verify_result(&mut self, name: &str, c: &Ciphertext) -> bool {
        self.stats.verify += 1;
        let Some(prov) = self.prov.clone() else { return false };
        let Some(sel) = prov.secret.outputs.get(name) else { return false };
        self.open(&prov, sel, c).is_ok()
    }

    fn guarded<T>(
        &mut self,
        op: VaultOp,
        site: &str,
        f: impl FnOnce(&mut Session, &Provisioned, &SiteRecord) -> Result<T, FaultReason>,
    ) -> Result<T, Fault> {
        let fault = |reason| Fault { site: site.to_string(), op, reason };
        if self.fault.is_some() {
            return Err(fault(FaultReason::Latched));
        }
        let before = self.prov.as_ref().map(|p| meter_total(&p.keys));
        let result = (|| {
            let prov = self.prov.clone().ok_or(FaultReason::NotProvisioned)?;
            let rec = prov.secret.sites.get(site).ok_or(FaultReason::UnknownSite)?;
            if Some(rec.kind()) != op.site_kind() {
                return Err(FaultReason::WrongKind);
            }
            if !self.used.insert(site.to_string()) {
                return Err(FaultReason::SiteReused);
            }
            match op {
                VaultOp::ToMul => self.stats.to_mul += 1,
                VaultOp::ToAdd => self.stats.to_add += 1,
                VaultOp::Cmp => self.stats.cmp += 1,
                VaultOp::Verify => self.stats.verify += 1,
            }
            f(self, &prov, rec)
        })();
        if let (Some(before), Some(p)) = (before, self.prov.as_ref()) {
            self.stats.last_request = meter_total(&p.keys) - before;
        }
        result.map_err(|reason| {
            let f = fault(reason);
            self.fault = Some(f.clone());
            f
        })
    }

    /// Label-checked decryption to a fixed-point value.
    fn open(&self, prov: &Provisioned, sel: &Selector<LabelInfo>, c: &Ciphertext) -> Result<Fixed, FaultReason> {
        let info = sel.resolve(|s| self.cmp_log.get(s).copied()).ok_or(FaultReason::UnresolvedPath)?;
        if info.domain != c.domain() {
            return Err(FaultReason::DomainMismatch);
        }
        let bytes = info.label_bytes().ok_or(FaultReason::Malformed)?;
        let map_dec = |e: DecryptError| match e {
            DecryptError::Rejected => FaultReason::Rejected,
            DecryptError::DlogNotFound { .. } => FaultReason::DlogNotFound,
            DecryptError::Malformed(_) => FaultReason::Malformed,
        };
        let mantissa = match c {
            Ciphertext::Add(ct) => {
                let sk = &prov.keys.add.sk;
                let label = Label::new(sk.group().decode(&bytes).map_err(|_| FaultReason::Malformed)?);
                sk.crt().center(add::decrypt(sk, ct, &label).map_err(map_dec)?)
            }
            Ciphertext::Mul(ct) => {
                let sk = &prov.keys.mul.sk;
                let label = Label::new(sk.group().decode(&bytes).map_err(|_| FaultReason::Malformed)?);
                let m = mul::decrypt(sk, ct, &label).map_err(map_dec)?;
                let codec = prov.codec.as_ref().ok_or(FaultReason::OutOfRange)?;
                codec.decode(&m).map_err(|_| FaultReason::OutOfRange)?
            }
        };
        Ok(Fixed::new(mantissa, info.scale))
    }

    fn convert(&mut self, prov: &Provisioned, rec: &SiteRecord, site: &str, c: &Ciphertext) -> Result<Ciphertext, FaultReason> {
        let (input, to) = match rec {
            SiteRecord::ToMul { input } => (input, Domain::Mul),
            SiteRecord::ToAdd { input } => (input, Domain::Add),
            SiteRecord::Cmp { .. } => return Err(FaultReason::WrongKind),
        };
        let v = self.open(prov, input, c)?;
        Ok(match to {
            Domain::Add => {
                let v = v.normalized().ok_or(FaultReason::OutOfRange)?;
                let sk = &prov.keys.add.sk;
                let m = sk.crt().wrap(v.mantissa).ok_or(FaultReason::OutOfRange)?;
                Ciphertext::Add(add::encrypt(sk, m, site, &mut self.rng).map_err(|_| FaultReason::OutOfRange)?)
            }
            Domain::Mul => {
                let codec = prov.codec.as_ref().ok_or(FaultReason::OutOfRange)?;
                let m = codec.encode(v.mantissa).map_err(|_| FaultReason::OutOfRange)?;
                Ciphertext::Mul(
                    mul::encrypt(&prov.keys.mul.sk, &m, site, &mut self.rng).map_err(|_| FaultReason::OutOfRange)?,
                )
            }
        })
    }

    fn cmp(
        &mut self,
        prov: &Provisioned,
        rec: &SiteRecord,
        lhs: &Ciphertext,
        rhs: Option<&Ciphertext>,
    ) -> Result<bool, FaultReason> {
        let SiteRecord::Cmp { relation, lhs: lsel, rhs: param } = rec else {
            return Err(FaultReason::WrongKind);
        };
        let l = self.open(prov, lsel, lhs)?;
        let r = match (param, rhs) {
            (CmpParam::Const(k), None) => *k,
            (CmpParam::Var(rsel), Some(c)) => self.open(prov, rsel, c)?,
            _ => return Err(FaultReason::Malformed),
        };
        Ok(relation.holds(l.cmp(&r)))
    }
}

fn meter_total(keys: &KeySet) -> OpCount {
    let a = keys.add.sk.group().meter().snapshot();
    let m = keys.mul.sk.group().meter().snapshot();
    OpCount { exps: a.exps + m.exps, mults: a.mults + m.mults, lookups: a.lookups + m.lookups }
}

/// Interface the untrusted runtime uses to reach the trusted module.
pub trait TrustedModule {
    fn to_mul(&mut self, site: &str, c: &Ciphertext) -> Result<Ciphertext, Fault>;
    fn to_add(&mut self, site: &str, c: &Ciphertext) -> Result<Ciphertext, Fault>;
    fn compare(&mut self, site: &str, lhs: &Ciphertext, rhs: Option<&Ciphertext>) -> Result<bool, Fault>;
}

impl TrustedModule for Session {
    fn to_mul(&mut self, site: &str, c: &Ciphertext) -> Result<Ciphertext, Fault> {
        Session::to_mul(self, site, c)
    }

    fn to_add(&mut self, site: &str, c: &Ciphertext) -> Result<Ciphertext, Fault> {
        Session::to_add(self, site, c)
    }

    fn compare(&mut self, site: &str, lhs: &Ciphertext, rhs: Option<&Ciphertext>) -> Result<bool, Fault> {
        Session::compare(self, site, lhs, rhs)
    }
}

/// Sites and kinds a program calls, for reports.
pub fn program_sites(program: &[Instr]) -> BTreeMap<String, SiteKind> {
    program
        .iter()
        .filter_map(|i| {
            let kind = match i {
                Instr::ToMul { .. } => SiteKind::ToMul,
                Instr::ToAdd { .. } => SiteKind::ToAdd,
                Instr::Cmp { .. } => SiteKind::Cmp,
                _ => return None,
            };
            Some((i.site()?.to_string(), kind))
        })
        .collect()
}
