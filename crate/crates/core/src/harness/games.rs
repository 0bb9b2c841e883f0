//! Chosen-plaintext indistinguishability and unforgeability experiments.
//!
//! Adversaries see the evaluation key and an encryption oracle that refuses
//! any identifier it has already used. Each trial draws fresh keys.

use std::collections::BTreeSet;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::group::Element;
use crate::hase::HaseScheme;
use crate::ids::IdMultiset;

/// Pairs the oracle has encrypted, in query order.
#[derive(Clone, Debug)]
pub struct OracleState<P> {
    pub entries: Vec<(P, String)>,
    used: BTreeSet<String>,
    /// Queries refused for reusing an identifier.
    pub refused: u64,
}

impl<P> Default for OracleState<P> {
    fn default() -> Self {
        OracleState { entries: Vec::new(), used: BTreeSet::new(), refused: 0 }
    }
}

impl<P: Clone> OracleState<P> {
    pub fn is_used(&self, id: &str) -> bool {
        self.used.contains(id)
    }

    fn record(&mut self, m: P, id: &str) {
        self.used.insert(id.to_string());
        self.entries.push((m, id.to_string()));
    }
}

/// Encryption oracle E_sk(m, i).
pub struct Oracle<'a, S: HaseScheme> {
    scheme: &'a S,
    sk: &'a S::SecretKey,
    rng: &'a mut StdRng,
    pub state: OracleState<S::Plaintext>,
}

impl<S: HaseScheme> Oracle<'_, S> {
    /// None when `id` was used before.
    pub fn encrypt(&mut self, m: &S::Plaintext, id: &str) -> Option<S::Ciphertext> {
        if self.state.is_used(id) {
            self.state.refused += 1;
            return None;
        }
        let c = self.scheme.encrypt(self.sk, m, id, self.rng).ok()?;
        self.state.record(m.clone(), id);
        Some(c)
    }
}

/// The adversary broke the rules of the experiment; the trial is voided.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation(pub String);

pub struct Challenge<P, St> {
    pub m0: P,
    pub m1: P,
    pub id: String,
    pub state: St,
}

pub trait IndCpaAdversary<S: HaseScheme> {
    type State;

    fn choose(
        &mut self,
        scheme: &S,
        ek: &S::EvalKey,
        oracle: &mut Oracle<'_, S>,
        rng: &mut StdRng,
    ) -> Result<Challenge<S::Plaintext, Self::State>, Violation>;

    fn guess(
        &mut self,
        scheme: &S,
        c: &S::Ciphertext,
        state: Self::State,
        oracle: &mut Oracle<'_, S>,
        rng: &mut StdRng,
    ) -> bool;
}

pub trait UfCpaAdversary<S: HaseScheme> {
    /// A candidate forgery and the identifier multiset it claims.
    fn forge(
        &mut self,
        scheme: &S,
        ek: &S::EvalKey,
        oracle: &mut Oracle<'_, S>,
        rng: &mut StdRng,
    ) -> Result<(S::Ciphertext, IdMultiset), Violation>;
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GameReport {
    pub trials: u64,
    pub wins: u64,
    pub voided: u64,
    /// Submissions that decrypted at all (UF-CPA only).
    pub accepted: u64,
    /// Oracle queries refused for identifier reuse.
    pub refused_queries: u64,
}

impl GameReport {
    pub fn played(&self) -> u64 {
        self.trials - self.voided
    }

    pub fn win_rate(&self) -> f64 {
        if self.played() == 0 {
            0.0
        } else {
            self.wins as f64 / self.played() as f64
        }
    }

    /// |win rate - 1/2|, meaningful for IND-CPA.
    pub fn advantage(&self) -> f64 {
        (self.win_rate() - 0.5).abs()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.played() == 0 {
            0.0
        } else {
            self.accepted as f64 / self.played() as f64
        }
    }
}

/// Plays the indistinguishability experiment `trials` times.
pub fn run_ind_cpa<S: HaseScheme, A: IndCpaAdversary<S>>(scheme: &S, adv: &mut A, trials: u64, seed: u64) -> GameReport {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut report = GameReport { trials, ..GameReport::default() };
    for _ in 0..trials {
        let Ok((ek, sk)) = scheme.keygen(&mut rng) else {
            report.voided += 1;
            continue;
        };
        let mut oracle_rng = StdRng::from_rng(&mut rng).expect("seeded");
        let mut oracle = Oracle { scheme, sk: &sk, rng: &mut oracle_rng, state: OracleState::default() };
        let ch = match adv.choose(scheme, &ek, &mut oracle, &mut rng) {
            Ok(ch) => ch,
            Err(_) => {
                report.voided += 1;
                report.refused_queries += oracle.state.refused;
                continue;
            }
        };
        // A reused challenge identifier loses by rule.
        if oracle.state.is_used(&ch.id) {
            report.refused_queries += oracle.state.refused;
            continue;
        }
        let b = rng.gen_bool(0.5);
        let mb = if b { ch.m1 } else { ch.m0 };
        let Some(c) = oracle.encrypt(&mb, &ch.id) else {
            report.voided += 1;
            continue;
        };
        let guess = adv.guess(scheme, &c, ch.state, &mut oracle, &mut rng);
        report.refused_queries += oracle.state.refused;
        if guess == b {
            report.wins += 1;
        }
    }
    report
}

/// Plays the unforgeability experiment `trials` times. A win is a submission
/// that decrypts to something other than the combination of the queried
/// plaintexts its multiset names.
pub fn run_uf_cpa<S: HaseScheme, A: UfCpaAdversary<S>>(scheme: &S, adv: &mut A, trials: u64, seed: u64) -> GameReport {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut report = GameReport { trials, ..GameReport::default() };
    for _ in 0..trials {
        let Ok((ek, sk)) = scheme.keygen(&mut rng) else {
            report.voided += 1;
            continue;
        };
        let mut oracle_rng = StdRng::from_rng(&mut rng).expect("seeded");
        let mut oracle = Oracle { scheme, sk: &sk, rng: &mut oracle_rng, state: OracleState::default() };
        let forged = adv.forge(scheme, &ek, &mut oracle, &mut rng);
        report.refused_queries += oracle.state.refused;
        let Ok((c, ids)) = forged else {
            report.voided += 1;
            continue;
        };
        let Ok(label) = scheme.der(&sk, &ids) else {
            report.voided += 1;
            continue;
        };
        if let Ok(m) = scheme.decrypt(&sk, &c, &label) {
            report.accepted += 1;
            let terms: Vec<(S::Plaintext, i64)> = oracle
                .state
                .entries
                .iter()
                .filter(|(_, id)| ids.multiplicity(id) != 0)
                .map(|(m, id)| (m.clone(), ids.multiplicity(id)))
                .collect();
            if m != scheme.combine(&terms) {
                report.wins += 1;
            }
        }
    }
    report
}

/// Guesses uniformly at random.
pub struct RandomGuess;

impl<S: HaseScheme> IndCpaAdversary<S> for RandomGuess {
    type State = ();

    fn choose(&mut self, scheme: &S, _: &S::EvalKey, _: &mut Oracle<'_, S>, rng: &mut StdRng) -> Result<Challenge<S::Plaintext, ()>, Violation> {
        Ok(Challenge { m0: scheme.random_plaintext(rng), m1: scheme.random_plaintext(rng), id: "challenge".into(), state: () })
    }

    fn guess(&mut self, _: &S, _: &S::Ciphertext, _: (), _: &mut Oracle<'_, S>, rng: &mut StdRng) -> bool {
        rng.gen_bool(0.5)
    }
}

/// Encrypts under an identifier, then asks for the challenge under the same
/// identifier. The experiment must return 0 every time.
pub struct ReuseChallengeId;

impl<S: HaseScheme> IndCpaAdversary<S> for ReuseChallengeId {
    type State = ();

    fn choose(&mut self, scheme: &S, _: &S::EvalKey, oracle: &mut Oracle<'_, S>, rng: &mut StdRng) -> Result<Challenge<S::Plaintext, ()>, Violation> {
        let m0 = scheme.random_plaintext(rng);
        oracle.encrypt(&m0, "x").ok_or_else(|| Violation("oracle refused a fresh identifier".into()))?;
        // A second query under "x" must be refused.
        if oracle.encrypt(&m0, "x").is_some() {
            return Err(Violation("oracle accepted a reused identifier".into()));
        }
        Ok(Challenge { m0: m0.clone(), m1: scheme.random_plaintext(rng), id: "x".into(), state: () })
    }

    fn guess(&mut self, _: &S, _: &S::Ciphertext, _: (), _: &mut Oracle<'_, S>, _: &mut StdRng) -> bool {
        // With the ciphertext in hand this would be trivial; it never arrives.
        true
    }
}

/// Encrypts m0 under a fresh identifier and guesses 0 iff the challenge's
/// first element equals the reference's.
pub struct CompareComponents;

impl<S: HaseScheme> IndCpaAdversary<S> for CompareComponents {
    type State = (S::Plaintext, Element);

    fn choose(&mut self, scheme: &S, _: &S::EvalKey, oracle: &mut Oracle<'_, S>, rng: &mut StdRng) -> Result<Challenge<S::Plaintext, Self::State>, Violation> {
        let m0 = scheme.random_plaintext(rng);
        let r = oracle.encrypt(&m0, "reference").ok_or_else(|| Violation("refused".into()))?;
        let first = scheme.elements(&r).swap_remove(0);
        Ok(Challenge { m0: m0.clone(), m1: scheme.random_plaintext(rng), id: "challenge".into(), state: (m0, first) })
    }

    fn guess(&mut self, scheme: &S, c: &S::Ciphertext, state: Self::State, _: &mut Oracle<'_, S>, rng: &mut StdRng) -> bool {
        if scheme.elements(c)[0] == state.1 {
            false
        } else {
            rng.gen_bool(0.5)
        }
    }
}

/// Evaluates `k` oracle ciphertexts and claims exactly their identifiers.
pub struct HonestEval {
    pub k: usize,
}

impl<S: HaseScheme> UfCpaAdversary<S> for HonestEval {
    fn forge(&mut self, scheme: &S, ek: &S::EvalKey, oracle: &mut Oracle<'_, S>, rng: &mut StdRng) -> Result<(S::Ciphertext, IdMultiset), Violation> {
        let (cs, ids) = encrypt_batch(scheme, oracle, self.k, rng)?;
        let c = scheme.eval(ek, &cs).map_err(|e| Violation(e.to_string()))?;
        Ok((c, ids))
    }
}

/// Replaces one element of an honest evaluation with a different random
/// group element.
pub struct TamperElement {
    pub k: usize,
}

impl<S: HaseScheme> UfCpaAdversary<S> for TamperElement {
    fn forge(&mut self, scheme: &S, ek: &S::EvalKey, oracle: &mut Oracle<'_, S>, rng: &mut StdRng) -> Result<(S::Ciphertext, IdMultiset), Violation> {
        let (cs, ids) = encrypt_batch(scheme, oracle, self.k, rng)?;
        let c = scheme.eval(ek, &cs).map_err(|e| Violation(e.to_string()))?;
        let mut elems = scheme.elements(&c);
        let i = rng.gen_range(0..elems.len());
        let g = scheme.group();
        let replacement = loop {
            let e = g.random_element(rng);
            if e != elems[i] {
                break e;
            }
        };
        elems[i] = replacement;
        let forged = scheme.rebuild(ek, elems).map_err(|e| Violation(e.to_string()))?;
        Ok((forged, ids))
    }
}

/// Submits an honest evaluation with a multiset that differs from the one
/// actually used: one identifier dropped, added, or substituted.
pub struct MismatchLabel {
    pub k: usize,
}

impl<S: HaseScheme> UfCpaAdversary<S> for MismatchLabel {
    fn forge(&mut self, scheme: &S, ek: &S::EvalKey, oracle: &mut Oracle<'_, S>, rng: &mut StdRng) -> Result<(S::Ciphertext, IdMultiset), Violation> {
        let (cs, ids) = encrypt_batch(scheme, oracle, self.k, rng)?;
        let c = scheme.eval(ek, &cs).map_err(|e| Violation(e.to_string()))?;
        let extra = scheme.random_plaintext(rng);
        oracle.encrypt(&extra, "extra").ok_or_else(|| Violation("refused".into()))?;
        let mut claimed = ids.clone();
        let victim = format!("id{}", rng.gen_range(0..self.k));
        match rng.gen_range(0..3) {
            0 if self.k > 1 => claimed.add(&victim, -1),
            1 => claimed.add("extra", 1),
            _ => {
                claimed.add(&victim, -1);
                claimed.add("extra", 1);
            }
        }
        if claimed.is_empty() {
            claimed.add("extra", 1);
        }
        Ok((c, claimed))
    }
}

fn encrypt_batch<S: HaseScheme>(
    scheme: &S,
    oracle: &mut Oracle<'_, S>,
    k: usize,
    rng: &mut StdRng,
) -> Result<(Vec<S::Ciphertext>, IdMultiset), Violation> {
    let mut cs = Vec::with_capacity(k);
    let mut ids = IdMultiset::new();
    for i in 0..k {
        let id = format!("id{i}");
        let m = scheme.random_plaintext(rng);
        cs.push(oracle.encrypt(&m, &id).ok_or_else(|| Violation("refused".into()))?);
        ids.add(&id, 1);
    }
    Ok((cs, ids))
}
