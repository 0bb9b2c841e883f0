//! Property tests over encodings, CRT packing, identifier multisets, the
//! schemes, and encrypted execution of random small programs.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use flowseal_core::compiler::{compile, lang::parse, CompileError};
use flowseal_core::encoding::{round_div, IntegerCodec};
use flowseal_core::hase::add::CrtParams;
use flowseal_core::hase::{AddScheme, HaseScheme, MulScheme};
use flowseal_core::reference::evaluate;
use flowseal_core::runtime::{encrypt_inputs, execute};
use flowseal_core::trusted::Vault;
use flowseal_core::{Fixed, Group, IdMultiset, KeySet, Profile};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn cents(c: i64) -> Fixed {
    let sign = if c < 0 { "-" } else { "" };
    Fixed::parse(&format!("{sign}{}.{:02}", c.unsigned_abs() / 100, c.unsigned_abs() % 100)).unwrap()
}

proptest! {
    #[test]
    fn fixed_display_round_trips(c in -10_000_000i64..10_000_000) {
        let x = cents(c);
        prop_assert_eq!(Fixed::parse(&x.to_string()).unwrap(), x);
    }

    #[test]
    fn rescaling_up_then_down_is_identity(m in -1_000_000_000_000i128..1_000_000_000_000, up in 2u32..=4) {
        let x = Fixed::new(m, 1);
        prop_assert_eq!(x.rescale(up).unwrap().rescale(1).unwrap().mantissa, m);
    }

    #[test]
    fn round_div_rounds_half_away_from_zero(n in -1_000_000i128..1_000_000, d in 1i128..1000) {
        let q = round_div(n, d);
        // |n - q d| <= d/2, with ties resolved away from zero.
        let r = n - q * d;
        prop_assert!(2 * r.abs() <= d);
        if 2 * r.abs() == d {
            prop_assert_eq!(q.signum(), n.signum());
        }
    }

    #[test]
    fn ordering_agrees_with_floats(a in -1_000_000i64..1_000_000, b in -1_000_000i64..1_000_000) {
        let (x, y) = (cents(a), cents(b));
        prop_assert_eq!(x.cmp(&y), a.cmp(&b));
        let p = x.checked_mul(&y).unwrap();
        prop_assert_eq!(p, Fixed::new(a as i128 * b as i128 * 10i128.pow(8), 2));
    }

    #[test]
    fn crt_split_combine_inverse(m in 0u128..(521u128 * 523 * 541 * 547 * 557)) {
        let crt = CrtParams::new(vec![521, 523, 541, 547, 557]).unwrap();
        let parts = crt.split(m);
        prop_assert!(parts.iter().zip(crt.moduli()).all(|(r, d)| r < d));
        prop_assert_eq!(crt.combine(&parts), m);
    }

    #[test]
    fn crt_signed_wrap_center(v in -60_000_000_000i128..60_000_000_000) {
        let crt = CrtParams::new(vec![521, 523, 541, 547, 557]).unwrap();
        prop_assume!(v.abs() <= crt.signed_max());
        prop_assert_eq!(crt.center(crt.wrap(v).unwrap()), v);
    }

    #[test]
    fn multiset_difference_undoes_sum(
        a in prop::collection::btree_map("[a-d]", -3i64..4, 0..4),
        b in prop::collection::btree_map("[a-d]", -3i64..4, 0..4),
    ) {
        let build = |m: &BTreeMap<String, i64>| {
            let mut s = IdMultiset::new();
            m.iter().for_each(|(k, v)| s.add(k, *v));
            s
        };
        let (x, y) = (build(&a), build(&b));
        prop_assert_eq!(x.sum(&y).difference(&y), x.clone());
        prop_assert_eq!(x.difference(&x), IdMultiset::new());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tiny_mul_eval_is_order_independent(seed in any::<u64>(), k in 1usize..6) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let s = MulScheme::new(Group::new(Profile::TestTiny));
        let (ek, sk) = s.keygen(&mut rng).unwrap();
        let ms: Vec<_> = (0..k).map(|_| s.random_plaintext(&mut rng)).collect();
        let mut ids = IdMultiset::new();
        let mut cs = Vec::new();
        for (i, m) in ms.iter().enumerate() {
            cs.push(s.encrypt(&sk, m, &format!("i{i}"), &mut rng).unwrap());
            ids.add(&format!("i{i}"), 1);
        }
        let l = s.der(&sk, &ids).unwrap();
        let forward = s.decrypt(&sk, &s.eval(&ek, &cs).unwrap(), &l).unwrap();
        cs.reverse();
        let backward = s.decrypt(&sk, &s.eval(&ek, &cs).unwrap(), &l).unwrap();
        prop_assert_eq!(&forward, &backward);
        prop_assert_eq!(forward, s.combine(&ms.iter().map(|m| (m.clone(), 1)).collect::<Vec<_>>()));
    }

    #[test]
    fn tiny_add_repeated_ciphertexts_need_repeated_ids(seed in any::<u64>(), m in 0u128..105, times in 2i64..5) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let s = AddScheme::with_moduli(Group::new(Profile::TestTiny), vec![3, 5, 7]).unwrap();
        let (ek, sk) = s.keygen(&mut rng).unwrap();
        let c = s.encrypt(&sk, &m, "x", &mut rng).unwrap();
        let sum = s.eval(&ek, &vec![c; times as usize]).unwrap();
        let mut ids = IdMultiset::new();
        ids.add("x", times);
        prop_assert_eq!(s.decrypt(&sk, &sum, &s.der(&sk, &ids).unwrap()).unwrap(), (m * times as u128) % 105);
        let single = s.der(&sk, &IdMultiset::singleton("x")).unwrap();
        prop_assert!(s.decrypt(&sk, &sum, &single).is_err());
    }
}

fn codec() -> &'static IntegerCodec {
    static CODEC: OnceLock<IntegerCodec> = OnceLock::new();
    CODEC.get_or_init(|| IntegerCodec::new(Group::new(Profile::Modp1536)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn integer_codec_is_multiplicative(a in -1_000_000_000i128..1_000_000_000, b in -1_000_000_000i128..1_000_000_000) {
        let c = codec();
        let g = c.group();
        let prod = g.op(&c.encode(a).unwrap(), &c.encode(b).unwrap());
        prop_assert_eq!(c.decode(&prod).unwrap(), a * b);
    }
}

fn keys() -> &'static KeySet {
    static KEYS: OnceLock<KeySet> = OnceLock::new();
    KEYS.get_or_init(|| KeySet::generate(Profile::CurveStrong, &mut ChaCha20Rng::seed_from_u64(99)).unwrap())
}

/// Operand: an input, an earlier temporary, or a literal.
fn operand(defined: usize) -> impl Strategy<Value = String> {
    prop_oneof![
        prop::sample::select(vec!["a", "b", "c"]).prop_map(str::to_string),
        (0..defined.max(1)).prop_map(move |i| if defined == 0 { "a".to_string() } else { format!("t{i}") }),
        (-300i64..300).prop_map(|c| format!("({})", cents(c))),
    ]
}

/// Straight-line arithmetic, then one branch on a temporary.
fn program() -> impl Strategy<Value = String> {
    let ops = prop::sample::select(vec!["+", "-", "*"]);
    (
        operand(0),
        operand(0),
        ops.clone(),
        operand(1),
        operand(1),
        prop::sample::select(vec!["+", "-"]),
        prop::sample::select(vec![">", ">=", "<", "<=", "==", "!="]),
        prop_oneof![(-500i64..500).prop_map(|c| format!("({})", cents(c))), Just("b".to_string())],
        operand(2),
        operand(2),
    )
        .prop_map(|(x0, y0, op0, x1, y1, op1, rel, rhs, then, otherwise)| {
            format!(
                "input a, b, c;\nt0 = {x0} {op0} {y0};\nt1 = {x1} {op1} {y1};\n\
                 if (t1 {rel} {rhs}) {{ r = {then} + t0; }} else {{ r = {otherwise} - c; }}\noutput r, t1;\n"
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn encrypted_execution_matches_reference(text in program(), a in -500i64..500, b in -500i64..500, c in -500i64..500, seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let inputs: BTreeMap<String, Fixed> = [("a", a), ("b", b), ("c", c)].iter().map(|(k, v)| (k.to_string(), cents(*v))).collect();
        let Ok(expected) = evaluate(&parse(&text).unwrap(), &inputs) else {
            return Err(TestCaseError::reject("reference rejects the inputs"));
        };
        let keys = keys();
        let compiled = match compile(&text, keys, &mut rng) {
            Ok(c) => c,
            // `x - x` and the like have no label; refusing them is by design.
            Err(CompileError::DegenerateLabel { .. }) => return Err(TestCaseError::reject("degenerate label")),
            Err(e) => return Err(TestCaseError::fail(format!("{text}\n{e}"))),
        };
        let vault = Vault::with_seed(seed);
        vault.provision(&compiled.secret.to_json(), keys.clone(), b"p").unwrap();
        let cts = encrypt_inputs(&compiled.public, keys, &inputs, &mut rng).unwrap();
        let session = vault.open_session(&compiled.public).unwrap();
        let mut out = execute(&compiled.public, &keys.eval_keys(), cts, session).map_err(|e| TestCaseError::fail(format!("{text}\n{e}")))?;
        let got = out.decrypt_and_verify(&compiled.secret, keys).map_err(|e| TestCaseError::fail(format!("{text}\n{e}")))?;
        prop_assert_eq!(got, expected.outputs, "{}", text);
    }
}
