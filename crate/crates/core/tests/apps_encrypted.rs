//! Encrypted runs of the sample applications against the plaintext oracles.

use std::collections::BTreeMap;

use flowseal_core::apps::{cart_program, feature_inputs, nn_program, synthetic_dataset, Activation, CartRule, CartSpec, NetworkSpec, DEFAULT_TOPOLOGY, WIDE_TOPOLOGY};
use flowseal_core::compiler::{compile, lang::parse, SiteKind};
use flowseal_core::reference::evaluate;
use flowseal_core::runtime::{encrypt_inputs, execute, OpCounters};
use flowseal_core::trusted::Vault;
use flowseal_core::{Fixed, KeySet, Profile};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

struct Deployed {
    keys: KeySet,
    compiled: flowseal_core::compiler::Compiled,
    vault: Vault,
}

fn deploy(text: &str, rng: &mut ChaCha20Rng) -> Deployed {
    let keys = KeySet::generate(Profile::CurveStrong, rng).unwrap();
    let compiled = compile(text, &keys, rng).unwrap();
    let vault = Vault::with_seed(1);
    vault.provision(&compiled.secret.to_json(), keys.clone(), b"nonce").unwrap();
    Deployed { keys, compiled, vault }
}

fn run(d: &Deployed, inputs: &BTreeMap<String, Fixed>, rng: &mut ChaCha20Rng) -> (BTreeMap<String, Fixed>, OpCounters) {
    let cts = encrypt_inputs(&d.compiled.public, &d.keys, inputs, rng).unwrap();
    let session = d.vault.open_session(&d.compiled.public).unwrap();
    let mut out = execute(&d.compiled.public, &d.keys.eval_keys(), cts, session).unwrap();
    let values = out.decrypt_and_verify(&d.compiled.secret, &d.keys).unwrap();
    (values, out.counters)
}

#[test]
fn cart_sizes_match_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    for n in [1usize, 10, 50] {
        let text = cart_program(n, &CartRule::default());
        let d = deploy(&text, &mut rng);
        let sites = d.compiled.public.sites();
        assert_eq!(sites.iter().filter(|(_, k)| *k == SiteKind::Cmp).count(), 2);
        let program = parse(&text).unwrap();
        for _ in 0..5 {
            let cart = CartSpec::random(n, &mut rng);
            let expected = evaluate(&program, &cart.inputs()).unwrap().outputs;
            let (got, c) = run(&d, &cart.inputs(), &mut rng);
            assert_eq!(got, expected);
            assert_eq!(c.hom_add as usize, n - 1);
        }
    }
}

#[test]
fn network_counts_follow_topology() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for (topology, evals) in [(DEFAULT_TOPOLOGY.to_vec(), 3), (WIDE_TOPOLOGY.to_vec(), 1)] {
        network_counts(topology, evals, &mut rng);
    }
}

fn network_counts(topology: Vec<usize>, evals: usize, rng: &mut ChaCha20Rng) {
    let spec = NetworkSpec::random(topology, Activation::Relu, rng).unwrap();
    let d = deploy(&nn_program(&spec), rng);
    for (x, _) in synthetic_dataset(evals, rng) {
        let (got, c) = run(&d, &feature_inputs(&x), rng);
        assert_eq!(got.values().copied().collect::<Vec<_>>(), spec.forward(&x).unwrap());
        let edges = spec.edges() as u64;
        let neurons = spec.neurons() as u64;
        assert_eq!((c.hom_mul, c.hom_add, c.to_add), (edges, edges, edges));
        assert_eq!((c.cmp_const, c.to_mul), (neurons, neurons));
    }
}

#[test]
fn xor_step_network() {
    // h0 = x0 OR x1, h1 = x0 AND x1, y0 = h0 AND NOT h1
    let w = |v: &str| Fixed::parse(v).unwrap();
    let spec = NetworkSpec::new(
        vec![2, 2, 1],
        Activation::Step,
        vec![w("1"), w("1"), w("-0.5"), w("1"), w("1"), w("-1.5"), w("1"), w("-2"), w("-0.5")],
    )
    .unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let d = deploy(&nn_program(&spec), &mut rng);
    for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let x = [Fixed::from_int(a), Fixed::from_int(b)];
        let (got, c) = run(&d, &feature_inputs(&x), &mut rng);
        assert_eq!(got["y0"], Fixed::from_int(a ^ b));
        assert_eq!(got["y0"], spec.forward(&x).unwrap()[0]);
        assert_eq!(c.to_mul, 0);
    }
}
