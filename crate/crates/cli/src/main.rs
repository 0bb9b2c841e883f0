//! `flowseal`: key generation, compilation, provisioning, encrypted runs,
//! tampering experiments and benchmarks.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};
use serde_json::{json, Value};

use flowseal_core::apps::{cart_program, feature_inputs, nn_program, synthetic_dataset, Activation, CartRule, CartSpec, NetworkSpec, DEFAULT_TOPOLOGY};
use flowseal_core::compiler::{compile, PublicArtifact, SecretArtifact};
use flowseal_core::harness::games::{
    CompareComponents, HonestEval, MismatchLabel, RandomGuess, ReuseChallengeId, TamperElement,
};
use flowseal_core::harness::{
    binary_search_attack, honest_run, perturbation_property, run_ind_cpa, run_uf_cpa, run_script, AttackScript, Target,
};
use flowseal_core::hase::{AddScheme, MulScheme};
use flowseal_core::keys::{ADD_SK_FILE, MUL_SK_FILE};
use flowseal_core::runtime::{encrypt_inputs, execute, OpCounters};
use flowseal_core::trusted::frame::FramedModule;
use flowseal_core::trusted::{AttestationQuote, Vault};
use flowseal_core::{Fixed, Group, KeySet, Profile};

const PUBLIC_FILE: &str = "program.json";
/// The secret artifact carries labels, so it follows the `.sk` convention.
const SECRET_FILE: &str = "labels.sk";
const ATTESTATION_FILE: &str = "attestation.json";
const CSV_HEADER: &str = "run-id,wall-ms,untrusted-ops,trusted-ops,faulted";

#[derive(Parser)]
#[command(name = "flowseal", version, about = "Encrypted program execution with data-flow authentication")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum App {
    Cart,
    Nn,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a key set.
    Keygen {
        #[arg(long, default_value = "curve-strong")]
        profile: Profile,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compile a source program into public and secret artifacts.
    Compile {
        source: PathBuf,
        #[arg(long)]
        keys: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Provision a vault with the secret artifact and check its attestation.
    Provision {
        build: PathBuf,
        #[arg(long)]
        keys: PathBuf,
        /// Hex nonce; random when omitted.
        #[arg(long)]
        nonce: Option<String>,
    },
    /// Encrypt inputs, run the program and verify the results.
    Run {
        build: PathBuf,
        #[arg(long)]
        keys: PathBuf,
        /// JSON list of values in input order, or an object keyed by name.
        #[arg(long)]
        inputs: PathBuf,
        /// Append the counters row to this CSV file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Tamper with an execution and report what the vault let through.
    Attack {
        build: PathBuf,
        #[arg(long)]
        keys: PathBuf,
        #[arg(long)]
        inputs: PathBuf,
        /// `binary-search`, `random`, or a JSON attack script file.
        #[arg(long, default_value = "binary-search")]
        script: String,
        #[arg(long, default_value_t = 100)]
        trials: u64,
        /// Search width for `binary-search`; must stay inside the plaintext range.
        #[arg(long, default_value_t = 20)]
        bits: u32,
    },
    /// Play the chosen-plaintext security games.
    Games {
        #[arg(long, default_value = "test-tiny")]
        profile: Profile,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
    },
    /// Time repeated encrypted runs of a sample application.
    Bench {
        #[arg(long, value_enum, default_value = "cart")]
        app: App,
        /// Cart size; ignored for the network.
        #[arg(long, default_value_t = 10)]
        size: usize,
        #[arg(long, default_value_t = 20)]
        runs: u64,
        #[arg(long, default_value = "curve-strong")]
        profile: Profile,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() {
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Keygen { profile, out } => keygen(profile, &out),
        Command::Compile { source, keys, out } => compile_cmd(&source, &keys, &out),
        Command::Provision { build, keys, nonce } => provision_cmd(&build, &keys, nonce.as_deref()),
        Command::Run { build, keys, inputs, csv } => run_cmd(&build, &keys, &inputs, csv.as_deref()),
        Command::Attack { build, keys, inputs, script, trials, bits } => attack_cmd(&build, &keys, &inputs, &script, trials, bits),
        Command::Games { profile, trials } => games_cmd(profile, trials),
        Command::Bench { app, size, runs, profile, csv } => bench_cmd(app, size, runs, profile, csv.as_deref()),
    }
}

fn rng() -> StdRng {
    StdRng::from_entropy()
}

fn is_secret(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "sk")
}

/// Secret material is only read from `.sk` files.
fn read_secret(p: &Path) -> Result<String> {
    if !is_secret(p) {
        bail!("refusing to read secret material from {}: not a .sk file", p.display());
    }
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

/// Public files never carry the `.sk` suffix.
fn write_public(p: &Path, text: &str) -> Result<()> {
    if is_secret(p) {
        bail!("refusing to write public data to {}", p.display());
    }
    fs::write(p, text).with_context(|| format!("writing {}", p.display()))
}

fn load_keys(dir: &Path) -> Result<KeySet> {
    for f in [ADD_SK_FILE, MUL_SK_FILE] {
        if !is_secret(&dir.join(f)) {
            bail!("secret key file {f} does not follow the .sk convention");
        }
    }
    KeySet::load(dir).with_context(|| format!("loading keys from {}", dir.display()))
}

fn keygen(profile: Profile, out: &Path) -> Result<()> {
    let keys = KeySet::generate(profile, &mut rng())?;
    keys.save(out)?;
    println!("{}", json!({ "profile": profile.name(), "dir": out.display().to_string() }));
    Ok(())
}

fn compile_cmd(source: &Path, keys: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(source).with_context(|| format!("reading {}", source.display()))?;
    let keys = load_keys(keys)?;
    let compiled = compile(&text, &keys, &mut rng()).map_err(|e| anyhow!("{}: {e}", source.display()))?;
    fs::create_dir_all(out)?;
    write_public(&out.join(PUBLIC_FILE), &compiled.public.to_json())?;
    fs::write(out.join(SECRET_FILE), compiled.secret.to_json())?;
    let sites = compiled.public.sites();
    println!(
        "{}",
        json!({
            "public": out.join(PUBLIC_FILE).display().to_string(),
            "secret": out.join(SECRET_FILE).display().to_string(),
            "digest": compiled.public.digest(),
            "instructions": compiled.public.program.len(),
            "sites": sites.len(),
        })
    );
    Ok(())
}

struct Build {
    keys: KeySet,
    public: PublicArtifact,
    secret: SecretArtifact,
    secret_json: String,
}

fn load_build(build: &Path, keys: &Path) -> Result<Build> {
    let keys = load_keys(keys)?;
    let public_text = fs::read_to_string(build.join(PUBLIC_FILE)).with_context(|| format!("reading {}", build.join(PUBLIC_FILE).display()))?;
    let public = PublicArtifact::from_json(&public_text)?;
    let secret_json = read_secret(&build.join(SECRET_FILE))?;
    let secret = SecretArtifact::from_json(&secret_json)?;
    if public.profile != keys.profile {
        bail!("artifact was compiled for {}, keys are {}", public.profile, keys.profile);
    }
    Ok(Build { keys, public, secret, secret_json })
}

/// Provisions a fresh vault and checks the returned quote client-side.
fn provision(b: &Build, nonce: &[u8]) -> Result<(Vault, AttestationQuote)> {
    let vault = Vault::new();
    let quote = vault.provision(&b.secret_json, b.keys.clone(), nonce)?;
    if quote != AttestationQuote::expected(&b.secret_json, &b.keys, nonce) {
        bail!("attestation quote does not match the provisioned artifact");
    }
    vault.check_program(&b.public)?;
    Ok((vault, quote))
}

fn decode_hex(s: &str) -> Result<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        bail!("hex nonce has odd length");
    }
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(|e| anyhow!("hex nonce: {e}"))).collect()
}

fn fresh_nonce() -> Vec<u8> {
    let mut n = vec![0u8; 16];
    rng().fill_bytes(&mut n);
    n
}

fn provision_cmd(build: &Path, keys: &Path, nonce: Option<&str>) -> Result<()> {
    let b = load_build(build, keys)?;
    let nonce = match nonce {
        Some(h) => decode_hex(h)?,
        None => fresh_nonce(),
    };
    let (_, quote) = provision(&b, &nonce)?;
    let report = json!({ "digest": quote.digest, "nonce": quote.nonce, "verified": true, "program": b.public.digest() });
    write_public(&build.join(ATTESTATION_FILE), &serde_json::to_string_pretty(&report)?)?;
    println!("{report}");
    Ok(())
}

fn parse_value(v: &Value) -> Result<Fixed> {
    match v {
        Value::String(s) => Ok(Fixed::parse(s)?),
        Value::Number(n) => Ok(Fixed::parse(&n.to_string())?),
        other => bail!("input value {other} is neither a number nor a string"),
    }
}

/// Reads a JSON list (in declared input order) or an object keyed by name.
fn read_inputs(path: &Path, public: &PublicArtifact) -> Result<BTreeMap<String, Fixed>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    match v {
        Value::Array(items) => {
            if items.len() != public.inputs.len() {
                bail!("{} values given, program declares {} inputs", items.len(), public.inputs.len());
            }
            public.inputs.iter().zip(&items).map(|(spec, v)| Ok((spec.name.clone(), parse_value(v)?))).collect()
        }
        Value::Object(map) => map.iter().map(|(k, v)| Ok((k.clone(), parse_value(v)?))).collect(),
        _ => bail!("{}: expected a JSON list or object", path.display()),
    }
}

fn csv_row(run_id: &str, wall_ms: f64, c: &OpCounters, faulted: bool) -> String {
    format!("{run_id},{wall_ms:.3},{},{},{}", c.untrusted(), c.trusted(), faulted)
}

fn append_csv(path: &Path, rows: &[String]) -> Result<()> {
    let fresh = !path.exists() || fs::metadata(path)?.len() == 0;
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{CSV_HEADER}")?;
    }
    for r in rows {
        writeln!(f, "{r}")?;
    }
    Ok(())
}

fn run_cmd(build: &Path, keys: &Path, inputs: &Path, csv: Option<&Path>) -> Result<()> {
    let b = load_build(build, keys)?;
    let plain = read_inputs(inputs, &b.public)?;
    let (vault, _) = provision(&b, &fresh_nonce())?;
    let mut rng = rng();
    let cts = encrypt_inputs(&b.public, &b.keys, &plain, &mut rng)?;
    let ek = b.keys.eval_keys();
    let mut session = vault.open_session(&b.public)?;
    let started = Instant::now();
    let framed = FramedModule::new(&mut session, ek.add.group.clone(), ek.mul.group.clone());
    let result = execute(&b.public, &ek, cts, framed);
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    let row;
    match result {
        Ok(mut out) => {
            let values = out.decrypt_and_verify(&b.secret, &b.keys)?;
            row = csv_row("run-0", wall_ms, &out.counters, false);
            let shown: BTreeMap<&String, String> = values.iter().map(|(k, v)| (k, v.to_string())).collect();
            println!("{}", json!({ "outputs": shown, "counters": out.counters }));
        }
        Err(flowseal_core::runtime::RuntimeError::Fault(report)) => {
            row = csv_row("run-0", wall_ms, &report.counters, true);
            println!("{}", report.to_json());
        }
        Err(e) => return Err(e.into()),
    }
    println!("{CSV_HEADER}\n{row}");
    if let Some(p) = csv {
        append_csv(p, &[row])?;
    }
    Ok(())
}

fn attack_cmd(build: &Path, keys: &Path, inputs: &Path, script: &str, trials: u64, bits: u32) -> Result<()> {
    let b = load_build(build, keys)?;
    let plain = read_inputs(inputs, &b.public)?;
    let (vault, _) = provision(&b, &fresh_nonce())?;
    let target = Target { keys: &b.keys, public: &b.public, secret: &b.secret, vault: &vault };
    let mut rng = rng();
    let report = match script {
        "binary-search" => {
            let cts = encrypt_inputs(&b.public, &b.keys, &plain, &mut rng)?;
            let out = binary_search_attack(&target, cts, bits, &mut rng)?;
            let unintended = out.leaked_bits;
            json!({ "script": "binary-search", "outcome": out, "unintended_bits": unintended })
        }
        "random" => {
            let r = perturbation_property(&target, |_| plain.clone(), trials, rng.next_u64());
            serde_json::to_value(r)?
        }
        file => {
            let text = fs::read_to_string(file).with_context(|| format!("reading script {file}"))?;
            let script: AttackScript = serde_json::from_str(&text).with_context(|| format!("parsing script {file}"))?;
            let cts = encrypt_inputs(&b.public, &b.keys, &plain, &mut rng)?;
            let honest = honest_run(&target, cts)?;
            serde_json::to_value(run_script(&target, &honest, &script))?
        }
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn games_cmd(profile: Profile, trials: u64) -> Result<()> {
    let group = Group::new(profile);
    let mul = MulScheme::new(Group::new(match profile {
        Profile::CurveStrong => Profile::Modp1536,
        p => p,
    }));
    let add = match profile {
        Profile::TestTiny => AddScheme::with_moduli(group, vec![3, 5, 7])?,
        _ => AddScheme::with_primes(group, 5, 10),
    };
    let seed = rng().next_u64();
    let report = json!({
        "profile": profile.name(),
        "mul": {
            "ind_cpa_random_guess": run_ind_cpa(&mul, &mut RandomGuess, trials, seed),
            "ind_cpa_compare_components": run_ind_cpa(&mul, &mut CompareComponents, trials, seed + 1),
            "ind_cpa_reuse_challenge_id": run_ind_cpa(&mul, &mut ReuseChallengeId, trials, seed + 2),
            "uf_cpa_honest_eval": run_uf_cpa(&mul, &mut HonestEval { k: 3 }, trials, seed + 3),
            "uf_cpa_tamper": run_uf_cpa(&mul, &mut TamperElement { k: 2 }, trials, seed + 4),
            "uf_cpa_label_mismatch": run_uf_cpa(&mul, &mut MismatchLabel { k: 2 }, trials, seed + 5),
        },
        "add": {
            "ind_cpa_random_guess": run_ind_cpa(&add, &mut RandomGuess, trials, seed + 6),
            "ind_cpa_compare_components": run_ind_cpa(&add, &mut CompareComponents, trials, seed + 7),
            "ind_cpa_reuse_challenge_id": run_ind_cpa(&add, &mut ReuseChallengeId, trials, seed + 8),
            "uf_cpa_honest_eval": run_uf_cpa(&add, &mut HonestEval { k: 3 }, trials, seed + 9),
            "uf_cpa_tamper": run_uf_cpa(&add, &mut TamperElement { k: 2 }, trials, seed + 10),
            "uf_cpa_label_mismatch": run_uf_cpa(&add, &mut MismatchLabel { k: 2 }, trials, seed + 11),
        },
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn bench_cmd(app: App, size: usize, runs: u64, profile: Profile, csv: Option<&Path>) -> Result<()> {
    let mut rng = rng();
    let keys = KeySet::generate(profile, &mut rng)?;
    let network = NetworkSpec::random(DEFAULT_TOPOLOGY.to_vec(), Activation::Relu, &mut rng)?;
    let text = match app {
        App::Cart => cart_program(size, &CartRule::default()),
        App::Nn => nn_program(&network),
    };
    let compiled = compile(&text, &keys, &mut rng)?;
    let vault = Vault::new();
    vault.provision(&compiled.secret.to_json(), keys.clone(), &fresh_nonce())?;
    let ek = keys.eval_keys();
    let mut rows = Vec::new();
    println!("{CSV_HEADER}");
    for run in 0..runs {
        let plain = match app {
            App::Cart => CartSpec::random(size, &mut rng).inputs(),
            App::Nn => feature_inputs(&synthetic_dataset(1, &mut rng)[0].0),
        };
        let cts = encrypt_inputs(&compiled.public, &keys, &plain, &mut rng)?;
        let session = vault.open_session(&compiled.public)?;
        let started = Instant::now();
        let result = execute(&compiled.public, &ek, cts, session);
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        let row = match result {
            Ok(mut out) => {
                let ok = out.decrypt_and_verify(&compiled.secret, &keys).is_ok();
                csv_row(&format!("run-{run}"), wall_ms, &out.counters, !ok)
            }
            Err(flowseal_core::runtime::RuntimeError::Fault(r)) => csv_row(&format!("run-{run}"), wall_ms, &r.counters, true),
            Err(e) => return Err(e.into()),
        };
        println!("{row}");
        rows.push(row);
    }
    if let Some(p) = csv {
        append_csv(p, &rows)?;
    }
    Ok(())
}
