//! Security experiments for the encryption schemes and tampering experiments
//! for compiled programs.

pub mod attack;
pub mod games;

pub use attack::{
    binary_search_attack, honest_run, perturbation_property, random_action, run_script, Action, AttackScript,
    BinarySearchOutcome, HarnessReport, HonestRun, Target, TrialOutcome, Verdict,
};
pub use games::{run_ind_cpa, run_uf_cpa, GameReport, Oracle, OracleState};
