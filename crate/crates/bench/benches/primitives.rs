use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use flowseal_bench::Deployment;
use flowseal_core::apps::{cart_program, feature_inputs, nn_program, synthetic_dataset, Activation, CartRule, CartSpec, NetworkSpec, DEFAULT_TOPOLOGY};
use flowseal_core::hase::{AddScheme, HaseScheme, MulScheme};
use flowseal_core::{Group, IdMultiset, Profile};
use rand::rngs::StdRng;
use rand::SeedableRng;

fn groups(c: &mut Criterion) {
    let mut rng = StdRng::seed_from_u64(1);
    for profile in [Profile::Modp1536, Profile::CurveStrong] {
        let g = Group::new(profile);
        let base = g.random_element(&mut rng);
        let e = g.random_exponent(&mut rng);
        c.bench_function(&format!("{}/exp", profile.name()), |b| b.iter(|| g.exp(black_box(&base), black_box(&e))));
        c.bench_function(&format!("{}/exp_g", profile.name()), |b| b.iter(|| g.exp_g(black_box(&e))));
    }
}

fn scheme_round_trip<S: HaseScheme>(c: &mut Criterion, name: &str, s: &S, k: usize) {
    let mut rng = StdRng::seed_from_u64(2);
    let (ek, sk) = s.keygen(&mut rng).unwrap();
    let ms: Vec<_> = (0..k).map(|_| s.random_plaintext(&mut rng)).collect();
    let mut ids = IdMultiset::new();
    let cs: Vec<_> = ms
        .iter()
        .enumerate()
        .map(|(i, m)| {
            ids.add(&format!("i{i}"), 1);
            s.encrypt(&sk, m, &format!("i{i}"), &mut rng).unwrap()
        })
        .collect();
    let sum = s.eval(&ek, &cs).unwrap();
    let label = s.der(&sk, &ids).unwrap();
    c.bench_function(&format!("{name}/encrypt"), |b| b.iter(|| s.encrypt(&sk, &ms[0], "x", &mut rng).unwrap()));
    c.bench_function(&format!("{name}/eval{k}"), |b| b.iter(|| s.eval(&ek, black_box(&cs)).unwrap()));
    c.bench_function(&format!("{name}/der"), |b| b.iter(|| s.der(&sk, black_box(&ids)).unwrap()));
    c.bench_function(&format!("{name}/decrypt"), |b| b.iter(|| s.decrypt(&sk, black_box(&sum), &label).unwrap()));
}

fn schemes(c: &mut Criterion) {
    scheme_round_trip(c, "mul-modp-1536", &MulScheme::new(Group::new(Profile::Modp1536)), 4);
    scheme_round_trip(c, "add-curve-strong", &AddScheme::with_primes(Group::new(Profile::CurveStrong), 5, 10), 4);
}

fn apps(c: &mut Criterion) {
    let mut group = c.benchmark_group("apps");
    group.sample_size(10);
    for n in [10usize, 100] {
        let mut d = Deployment::new(&cart_program(n, &CartRule::default()), Profile::CurveStrong, 3);
        let mut rng = StdRng::seed_from_u64(4);
        group.bench_function(format!("cart-{n}"), |b| {
            b.iter_batched(|| CartSpec::random(n, &mut rng).inputs(), |inputs| d.run(&inputs), BatchSize::SmallInput)
        });
    }
    let mut rng = StdRng::seed_from_u64(5);
    let spec = NetworkSpec::random(DEFAULT_TOPOLOGY.to_vec(), Activation::Relu, &mut rng).unwrap();
    let mut d = Deployment::new(&nn_program(&spec), Profile::CurveStrong, 6);
    group.bench_function("network-9-6-2", |b| {
        b.iter_batched(|| feature_inputs(&synthetic_dataset(1, &mut rng)[0].0), |inputs| d.run(&inputs), BatchSize::SmallInput)
    });
    group.finish();
}

criterion_group!(benches, groups, schemes, apps);
criterion_main!(benches);
