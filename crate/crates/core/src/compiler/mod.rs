//! Source-to-ciphertext-program compiler.
//!
//! Pipeline: [`lang::parse`], [`ssa::to_ssa`], [`types::infer_types`],
//! [`types::insert_conversions`], [`labels::assign_labels`], then
//! [`artifact::build`] which encrypts constants and splits the result into a
//! public program and a secret conversion table.

pub mod artifact;
pub mod labels;
pub mod lang;
pub mod ssa;
pub mod types;

use thiserror::Error;

use crate::encoding::CodecError;
use crate::hase::HaseError;
use crate::keys::KeySet;
use lang::{ParseError, Span};

pub use artifact::{
    compile, CmpParam, Compiled, Instr, PublicArtifact, SecretArtifact, SiteKind, SiteRecord, FORMAT_VERSION,
};
pub use labels::{LabelInfo, Selector, Source};

/// Largest fixed-point scale a multiplicative value may reach.
pub const MAX_SCALE: u32 = 4;

#[derive(Debug, Error)]
pub enum CompileError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{span}: `{name}` is used before it is assigned")]
    Undefined { name: String, span: Span },
    #[error("{span}: `{name}` is declared twice")]
    Redeclared { name: String, span: Span },
    #[error("{span}: {message}")]
    Unsupported { span: Span, message: String },
    #[error("{span}: value of `{name}` cancels every identifier and has no label")]
    DegenerateLabel { name: String, span: Span },
    #[error("{span}: product `{name}` exceeds the fixed-point scale limit of {MAX_SCALE}")]
    ScaleOverflow { name: String, span: Span },
    #[error("constant `{name}` = {value} does not fit the {domain} plaintext space")]
    ConstantOutOfRange { name: String, value: String, domain: crate::hase::Domain },
    #[error("the multiplicative domain needs the 1536-bit group: {0}")]
    MulDomainUnavailable(#[from] CodecError),
    #[error(transparent)]
    Hase(#[from] HaseError),
}

/// Keys plus the integer embedding the compiler and trusted module need.
pub(crate) fn require_codec(keys: &KeySet) -> Result<std::sync::Arc<crate::encoding::IntegerCodec>, CompileError> {
    keys.codec()
        .ok_or(CompileError::MulDomainUnavailable(CodecError::GroupTooSmall(keys.profile)))
}
