//! Data-flow tampering against compiled programs.
//!
//! The host is the adversary: it may rewrite the public program and the
//! ciphertext environment between instructions. It has no labels and no
//! secret key, but may obtain fresh encryptions under identifiers of its own
//! choosing, as in the chosen-plaintext games. Tampering is applied at
//! instruction granularity.

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::compiler::artifact::{Instr, PublicArtifact, SecretArtifact};
use crate::encoding::Fixed;
use crate::hase::{add, mul, Ciphertext, Domain};
use crate::keys::KeySet;
use crate::runtime::{decrypt_and_verify_one, encrypt_inputs, encrypt_value, Executor, RuntimeError};
use crate::trusted::{FaultReason, Session, Vault};

/// One tampering step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum Action {
    /// After instruction `after` runs, its result is combined with `operand`
    /// by the domain's homomorphic operation.
    InjectOp { after: usize, operand: String },
    /// Operand `slot` of instruction `at` is renamed to `with`.
    SwapOperand { at: usize, slot: usize, with: String },
    /// Just before the trusted call at `at`, its input variable is
    /// overwritten with the ciphertext currently held by `from`.
    ReplayCiphertext { at: usize, from: String },
    /// The ciphertext of constant `name` is replaced by that of `with` just
    /// before its first use.
    SubstituteConstant { name: String, with: String },
    /// The comparison at `at` is issued a second time.
    RerunBranch { at: usize },
    /// The operands of the commutative instruction at `at` are swapped.
    /// Not a data-flow change.
    ReorderOperands { at: usize },
}

impl Action {
    pub fn kind(&self) -> &'static str {
        match self {
            Action::InjectOp { .. } => "inject-op",
            Action::SwapOperand { .. } => "swap-operand",
            Action::ReplayCiphertext { .. } => "replay-ciphertext",
            Action::SubstituteConstant { .. } => "substitute-constant",
            Action::RerunBranch { .. } => "re-run-branch",
            Action::ReorderOperands { .. } => "reorder-operands",
        }
    }

    /// False only for tampering that leaves every data flow intact.
    pub fn changes_data_flow(&self) -> bool {
        !matches!(self, Action::ReorderOperands { .. })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackScript {
    pub actions: Vec<Action>,
}

/// A deployed program: client keys, both artifacts and a provisioned vault.
pub struct Target<'a> {
    pub keys: &'a KeySet,
    pub public: &'a PublicArtifact,
    pub secret: &'a SecretArtifact,
    pub vault: &'a Vault,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// The trusted module stopped the run.
    Fault,
    /// The run completed but a result failed verification.
    Rejected,
    /// Completed and verified with the honest results.
    Unchanged,
    /// Completed and verified with different results.
    Escaped,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub verdict: Verdict,
    pub fault_site: Option<String>,
    pub fault_reason: Option<FaultReason>,
    /// Comparison outcomes that an honest run on the same inputs also yields.
    pub intended_bits: u32,
    /// Comparison outcomes an honest run does not yield.
    pub unintended_bits: u32,
}

impl TrialOutcome {
    /// The tampering gained something: extra comparison bits, or a verified
    /// result an honest run does not produce.
    pub fn is_win(&self) -> bool {
        self.unintended_bits > 0 || self.verdict == Verdict::Escaped
    }
}

/// Honest reference run on fixed input ciphertexts.
pub struct HonestRun {
    pub inputs: BTreeMap<String, Ciphertext>,
    /// Executed instruction indices, in order.
    pub path: Vec<usize>,
    /// Final environment, one entry per defined variable.
    pub env: BTreeMap<String, Ciphertext>,
    pub trace: BTreeMap<String, bool>,
    pub results: BTreeMap<String, Fixed>,
}

fn session(target: &Target<'_>) -> Session {
    target.vault.open_session(target.public).expect("program passes the vault check")
}

/// Runs the program honestly, recording the executed path.
pub fn honest_run(target: &Target<'_>, inputs: BTreeMap<String, Ciphertext>) -> Result<HonestRun, RuntimeError> {
    let ek = target.keys.eval_keys();
    let mut ex = Executor::new(target.public, &ek, inputs.clone(), session(target))?;
    let mut path = Vec::new();
    while !ex.is_done() {
        path.push(ex.pc);
        ex.step()?;
    }
    let trace = ex.tm.comparisons().clone();
    let env = ex.env.clone();
    let out = ex.finish()?;
    let mut results = BTreeMap::new();
    for (name, c) in &out.outputs {
        let v = decrypt_and_verify_one(target.secret, target.keys, name, c, &trace)
            .map_err(|e| RuntimeError::Malformed { pc: 0, message: e.to_string() })?;
        results.insert(name.clone(), v);
    }
    Ok(HonestRun { inputs, path, env, trace, results })
}

fn combine(ek_add: &crate::group::Group, ek_mul: &crate::group::Group, a: &Ciphertext, b: &Ciphertext) -> Option<Ciphertext> {
    match (a, b) {
        (Ciphertext::Add(x), Ciphertext::Add(y)) => add::eval(ek_add, &[x.clone(), y.clone()]).ok().map(Ciphertext::Add),
        (Ciphertext::Mul(x), Ciphertext::Mul(y)) => mul::eval(ek_mul, &[x.clone(), y.clone()]).ok().map(Ciphertext::Mul),
        _ => None,
    }
}

fn operand_mut(instr: &mut Instr, slot: usize) -> Option<&mut String> {
    match (instr, slot) {
        (Instr::Add { a, .. } | Instr::Sub { a, .. } | Instr::Mul { a, .. }, 0) => Some(a),
        (Instr::Add { b, .. } | Instr::Sub { b, .. } | Instr::Mul { b, .. }, 1) => Some(b),
        (Instr::ToMul { src, .. } | Instr::ToAdd { src, .. }, 0) => Some(src),
        (Instr::Cmp { lhs, .. }, 0) => Some(lhs),
        (Instr::Cmp { rhs: Some(r), .. }, 1) => Some(r),
        (Instr::Phi { then_val, .. }, 0) => Some(then_val),
        (Instr::Phi { else_val, .. }, 1) => Some(else_val),
        _ => None,
    }
}

/// Executes the program under `script` on the given input ciphertexts and
/// classifies the result against `honest`.
pub fn run_script(target: &Target<'_>, honest: &HonestRun, script: &AttackScript) -> TrialOutcome {
    let ek = target.keys.eval_keys();
    let (ga, gm) = (ek.add.group.clone(), ek.mul.group.clone());
    let mut ex = match Executor::new(target.public, &ek, honest.inputs.clone(), session(target)) {
        Ok(ex) => ex,
        Err(_) => return classify_error(honest, None),
    };
    let mut fired = vec![false; script.actions.len()];
    while !ex.is_done() {
        let pc = ex.pc;
        for (i, a) in script.actions.iter().enumerate() {
            if fired[i] {
                continue;
            }
            match a {
                Action::SwapOperand { at, slot, with } if *at == pc => {
                    if let Some(op) = operand_mut(&mut ex.program[pc], *slot) {
                        *op = with.clone();
                    }
                    fired[i] = true;
                }
                Action::ReplayCiphertext { at, from } if *at == pc => {
                    let src = ex.program[pc].operands().first().map(|s| s.to_string());
                    if let (Some(src), Some(c)) = (src, ex.env.get(from).cloned()) {
                        ex.env.insert(src, c);
                    }
                    fired[i] = true;
                }
                Action::SubstituteConstant { name, with } if ex.program[pc].operands().contains(&name.as_str()) => {
                    if let Some(c) = ex.env.get(with).cloned() {
                        ex.env.insert(name.clone(), c);
                    }
                    fired[i] = true;
                }
                Action::ReorderOperands { at } if *at == pc => {
                    if let Instr::Add { a, b, .. } | Instr::Mul { a, b, .. } = &mut ex.program[pc] {
                        std::mem::swap(a, b);
                    }
                    fired[i] = true;
                }
                _ => {}
            }
        }
        if let Err(e) = ex.step() {
            return classify_error(honest, Some((e, ex.tm.comparisons())));
        }
        for (i, a) in script.actions.iter().enumerate() {
            if fired[i] {
                continue;
            }
            match a {
                Action::InjectOp { after, operand } if *after == pc => {
                    let dst = ex.program[pc].dst().map(str::to_string);
                    if let Some(dst) = dst {
                        let mixed = ex.env.get(&dst).zip(ex.env.get(operand)).and_then(|(x, y)| combine(&ga, &gm, x, y));
                        if let Some(c) = mixed {
                            match c {
                                Ciphertext::Add(_) => ex.counters.hom_add += 1,
                                Ciphertext::Mul(_) => ex.counters.hom_mul += 1,
                            }
                            ex.env.insert(dst, c);
                        }
                    }
                    fired[i] = true;
                }
                Action::RerunBranch { at } if *at == pc => {
                    ex.pc = pc;
                    fired[i] = true;
                }
                _ => {}
            }
        }
    }
    let trace = ex.tm.comparisons().clone();
    let (intended_bits, unintended_bits) = leak_bits(honest, &trace);
    let outcome = |verdict| TrialOutcome { verdict, fault_site: None, fault_reason: None, intended_bits, unintended_bits };
    let out = match ex.finish() {
        Ok(out) => out,
        Err(_) => return outcome(Verdict::Rejected),
    };
    let mut results = BTreeMap::new();
    for name in target.secret.outputs.keys() {
        let Some(c) = out.outputs.get(name) else {
            return outcome(Verdict::Rejected);
        };
        match decrypt_and_verify_one(target.secret, target.keys, name, c, &trace) {
            Ok(v) => results.insert(name.clone(), v),
            Err(_) => return outcome(Verdict::Rejected),
        };
    }
    outcome(if results == honest.results { Verdict::Unchanged } else { Verdict::Escaped })
}

fn leak_bits(honest: &HonestRun, trace: &BTreeMap<String, bool>) -> (u32, u32) {
    let mut intended = 0;
    let mut unintended = 0;
    for (site, b) in trace {
        if honest.trace.get(site) == Some(b) {
            intended += 1;
        } else {
            unintended += 1;
        }
    }
    (intended, unintended)
}

fn classify_error(honest: &HonestRun, err: Option<(RuntimeError, &BTreeMap<String, bool>)>) -> TrialOutcome {
    let (intended_bits, unintended_bits) = err.as_ref().map(|(_, t)| leak_bits(honest, t)).unwrap_or((0, 0));
    match err {
        Some((RuntimeError::Fault(report), _)) => TrialOutcome {
            verdict: Verdict::Fault,
            fault_site: Some(report.site.clone()),
            fault_reason: Some(report.reason),
            intended_bits,
            unintended_bits,
        },
        // The host's own interpreter gave up, e.g. on a dangling name; no
        // result reaches the client.
        _ => TrialOutcome { verdict: Verdict::Rejected, fault_site: None, fault_reason: None, intended_bits, unintended_bits },
    }
}

fn domain_of(honest: &HonestRun, name: &str) -> Option<Domain> {
    honest.env.get(name).map(Ciphertext::domain)
}

/// Draws one data-flow-changing action that targets the honest path.
///
/// Candidates are restricted so that the action is guaranteed to alter the
/// data reaching a trusted call or an output: injected results must be live,
/// and substituted ciphertexts must differ from the originals.
pub fn random_action(public: &PublicArtifact, honest: &HonestRun, rng: &mut StdRng) -> Option<Action> {
    let program = &public.program;
    let path = &honest.path;
    // Variables available before each executed position.
    let mut defined: BTreeSet<String> = honest.inputs.keys().cloned().collect();
    defined.extend(public.constants.keys().cloned());
    let mut before: Vec<BTreeSet<String>> = Vec::with_capacity(path.len());
    for &pc in path {
        before.push(defined.clone());
        if let Some(d) = program[pc].dst() {
            if !matches!(program[pc], Instr::Cmp { .. }) {
                defined.insert(d.to_string());
            }
        }
    }
    let outputs: BTreeSet<&str> = public.outputs.iter().map(|o| o.value.as_str()).collect();
    let live_after = |k: usize, name: &str| {
        outputs.contains(name) || path[k + 1..].iter().any(|&pc| program[pc].operands().contains(&name))
    };
    let differing = |k: usize, orig: &str| -> Vec<String> {
        let Some(dom) = domain_of(honest, orig) else { return Vec::new() };
        before[k]
            .iter()
            .filter(|n| n.as_str() != orig && domain_of(honest, n) == Some(dom) && honest.env.get(*n) != honest.env.get(orig))
            .cloned()
            .collect()
    };
    let used_constants: Vec<&String> = public
        .constants
        .keys()
        .filter(|c| path.iter().any(|&pc| program[pc].operands().contains(&c.as_str())))
        .collect();

    if path.is_empty() {
        return None;
    }
    for _ in 0..64 {
        let k = rng.gen_range(0..path.len());
        let pc = path[k];
        let instr = &program[pc];
        let action = match rng.gen_range(0..5) {
            0 => {
                let Some(dst) = instr.dst() else { continue };
                if matches!(instr, Instr::Cmp { .. }) || !live_after(k, dst) {
                    continue;
                }
                let dom = domain_of(honest, dst);
                let pool: Vec<&String> = before[k].iter().filter(|n| domain_of(honest, n) == dom).collect();
                let Some(op) = pool.choose(rng) else { continue };
                Action::InjectOp { after: pc, operand: (*op).clone() }
            }
            1 => {
                if matches!(instr, Instr::Phi { .. }) {
                    continue;
                }
                let ops = instr.operands();
                if ops.is_empty() {
                    continue;
                }
                let slot = rng.gen_range(0..ops.len());
                let Some(with) = differing(k, ops[slot]).choose(rng).cloned() else { continue };
                Action::SwapOperand { at: pc, slot, with }
            }
            2 => {
                if instr.site().is_none() {
                    continue;
                }
                let Some(with) = differing(k, instr.operands()[0]).choose(rng).cloned() else { continue };
                Action::ReplayCiphertext { at: pc, from: with }
            }
            3 => {
                let Some(name) = used_constants.choose(rng) else { continue };
                let first_use = path.iter().position(|&pc| program[pc].operands().contains(&name.as_str())).unwrap_or(0);
                let Some(with) = differing(first_use, name).choose(rng).cloned() else { continue };
                Action::SubstituteConstant { name: (*name).clone(), with }
            }
            _ => {
                if !matches!(instr, Instr::Cmp { .. }) {
                    continue;
                }
                Action::RerunBranch { at: pc }
            }
        };
        return Some(action);
    }
    None
}

/// Aggregate over many tampered executions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarnessReport {
    pub trials: u64,
    /// Trials where tampering gained anything; must be zero.
    pub wins: u64,
    pub faults: u64,
    pub rejections: u64,
    /// Completed runs whose results matched the honest run.
    pub unchanged: u64,
    /// Comparison bits beyond those of an honest run, summed.
    pub leak_bits: u64,
    pub intended_bits: u64,
    pub per_site: BTreeMap<String, u64>,
    pub per_action: BTreeMap<String, u64>,
    /// Trials for which no applicable action was found.
    pub skipped: u64,
}

impl HarnessReport {
    pub fn record(&mut self, action: &str, o: &TrialOutcome) {
        self.trials += 1;
        *self.per_action.entry(action.to_string()).or_default() += 1;
        match o.verdict {
            Verdict::Fault => self.faults += 1,
            Verdict::Rejected => self.rejections += 1,
            Verdict::Unchanged => self.unchanged += 1,
            Verdict::Escaped => {}
        }
        if let Some(site) = &o.fault_site {
            *self.per_site.entry(site.clone()).or_default() += 1;
        }
        self.wins += o.is_win() as u64;
        self.leak_bits += o.unintended_bits as u64;
        self.intended_bits += o.intended_bits as u64;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serialisable")
    }
}

/// Applies `trials` random single-action scripts, each to a fresh execution
/// on fresh inputs drawn by `inputs`.
pub fn perturbation_property<F>(target: &Target<'_>, mut inputs: F, trials: u64, seed: u64) -> HarnessReport
where
    F: FnMut(&mut StdRng) -> BTreeMap<String, Fixed>,
{
    let mut rng = StdRng::seed_from_u64(seed);
    let mut report = HarnessReport::default();
    for _ in 0..trials {
        let plain = inputs(&mut rng);
        let Ok(cts) = encrypt_inputs(target.public, target.keys, &plain, &mut rng) else {
            report.skipped += 1;
            continue;
        };
        let Ok(honest) = honest_run(target, cts) else {
            report.skipped += 1;
            continue;
        };
        let Some(action) = random_action(target.public, &honest, &mut rng) else {
            report.skipped += 1;
            continue;
        };
        let kind = action.kind();
        let outcome = run_script(target, &honest, &AttackScript { actions: vec![action] });
        report.record(kind, &outcome);
    }
    report
}

/// Result of the adaptive binary search against one comparison site.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinarySearchOutcome {
    pub site: String,
    /// Perturbed comparisons attempted before the run stopped.
    pub attempts: u32,
    /// 1-based attempt at which the vault faulted.
    pub faulted_at: Option<u32>,
    pub fault_reason: Option<FaultReason>,
    /// Comparison answers obtained for perturbed values.
    pub leaked_bits: u32,
    /// Honest comparisons answered before the attack began.
    pub prefix_bits: u32,
}

/// Runs the program honestly up to its first comparison, then repeatedly
/// adds attacker-encrypted powers of two to the compared value and asks the
/// vault to compare at that site, halving the step as in a binary search.
/// A multiplicative operand is scaled by the power of two instead.
pub fn binary_search_attack(
    target: &Target<'_>,
    inputs: BTreeMap<String, Ciphertext>,
    bits: u32,
    rng: &mut StdRng,
) -> Result<BinarySearchOutcome, RuntimeError> {
    let ek = target.keys.eval_keys();
    let (ga, gm) = (ek.add.group.clone(), ek.mul.group.clone());
    let mut ex = Executor::new(target.public, &ek, inputs, session(target))?;
    while !ex.is_done() && !matches!(ex.program[ex.pc], Instr::Cmp { .. }) {
        ex.step()?;
    }
    let Some(Instr::Cmp { dst: site, lhs, rhs }) = ex.program.get(ex.pc).cloned() else {
        return Err(RuntimeError::Malformed { pc: ex.pc, message: "program has no comparison".into() });
    };
    let prefix_bits = ex.tm.comparisons().len() as u32;
    let mut g = ex.env[&lhs].clone();
    let rhs_ct = rhs.as_ref().map(|r| ex.env[r].clone());
    let mut out = BinarySearchOutcome { site: site.clone(), attempts: 0, faulted_at: None, fault_reason: None, leaked_bits: 0, prefix_bits };
    for i in (1..=bits).rev() {
        let step = Fixed::from_int(1i64 << i.min(40));
        let delta = encrypt_value(target.keys, g.domain(), &step, &format!("atk_plus_{i}"), rng)
            .map_err(|e| RuntimeError::Malformed { pc: ex.pc, message: e.to_string() })?;
        let d = combine(&ga, &gm, &g, &delta).expect("same domain");
        out.attempts += 1;
        match ex.tm.compare(&site, &d, rhs_ct.as_ref()) {
            Err(f) => {
                out.faulted_at = Some(out.attempts);
                out.fault_reason = Some(f.reason);
                break;
            }
            // Keep the step when still below the threshold.
            Ok(above) => {
                out.leaked_bits += 1;
                if !above && g.domain() == Domain::Add {
                    g = d;
                }
            }
        }
    }
    Ok(out)
}
