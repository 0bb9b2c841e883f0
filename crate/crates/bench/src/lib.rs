//! Shared fixtures for the benchmarks: a provisioned deployment of a program
//! and one encrypted run of it.

use std::collections::BTreeMap;

use flowseal_core::compiler::{compile, Compiled};
use flowseal_core::runtime::{encrypt_inputs, execute, OpCounters};
use flowseal_core::trusted::Vault;
use flowseal_core::{Fixed, KeySet, Profile};
use rand::rngs::StdRng;
use rand::SeedableRng;

pub struct Deployment {
    pub keys: KeySet,
    pub compiled: Compiled,
    pub vault: Vault,
    pub rng: StdRng,
}

impl Deployment {
    pub fn new(text: &str, profile: Profile, seed: u64) -> Deployment {
        let mut rng = StdRng::seed_from_u64(seed);
        let keys = KeySet::generate(profile, &mut rng).expect("key generation");
        let compiled = compile(text, &keys, &mut rng).expect("program compiles");
        let vault = Vault::with_seed(seed);
        vault.provision(&compiled.secret.to_json(), keys.clone(), b"bench").expect("provisioning");
        Deployment { keys, compiled, vault, rng }
    }

    /// Encrypts, executes and verifies once; panics if anything is rejected.
    pub fn run(&mut self, inputs: &BTreeMap<String, Fixed>) -> OpCounters {
        let cts = encrypt_inputs(&self.compiled.public, &self.keys, inputs, &mut self.rng).expect("inputs in range");
        let session = self.vault.open_session(&self.compiled.public).expect("session");
        let mut out = execute(&self.compiled.public, &self.keys.eval_keys(), cts, session).expect("honest run");
        out.decrypt_and_verify(&self.compiled.secret, &self.keys).expect("results verify");
        out.counters
    }
}
