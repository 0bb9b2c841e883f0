//! Homomorphic authenticated encryption with trusted-module data-flow checks.
//!
//! Programs written in a small imperative language are compiled so that an
//! untrusted host evaluates them over ciphertexts. Whenever a value must move
//! between the additive and multiplicative encodings, or be compared, the host
//! asks a trusted module. The module only answers if the ciphertext carries the
//! label of the data flow the compiler expected at that site.

pub mod dlog;
pub mod encoding;
pub mod group;
pub mod harness;
pub mod hase;
pub mod ids;
pub mod apps;
pub mod compiler;
pub mod keys;
pub mod reference;
pub mod runtime;
pub mod trusted;

pub use group::{make_group, Element, Exponent, Group, Profile};
pub use encoding::Fixed;
pub use ids::IdMultiset;
pub use keys::{EvalKeys, KeySet};
