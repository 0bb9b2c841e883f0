//! Compile-time label derivation.
//!
//! Each ciphertext value is described by the identifier multiset of the
//! homomorphic computation that produced it, back to the nearest inputs,
//! constants and conversion outputs. Values merged by a phi are described by a
//! [`Selector`], a decision tree over the comparison sites that picked the
//! path; the trusted module resolves it with the comparison outcomes it has
//! itself produced during the run.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::compiler::lang::{BinOp, Relation, Span};
use crate::compiler::ssa::{CmpRhs, SsaOp};
use crate::compiler::types::TypedProgram;
use crate::compiler::{CompileError, MAX_SCALE};
use crate::encoding::Fixed;
use crate::hase::{add, mul, Domain, HaseError};
use crate::ids::IdMultiset;
use crate::keys::KeySet;

/// Decision tree over comparison outcomes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector<T> {
    Leaf(T),
    Branch { site: String, then: Box<Selector<T>>, otherwise: Box<Selector<T>> },
}

impl<T> Selector<T> {
    /// Leaf chosen by the recorded outcomes; `None` if a needed outcome is missing.
    pub fn resolve(&self, outcome: impl Fn(&str) -> Option<bool>) -> Option<&T> {
        let mut cur = self;
        loop {
            match cur {
                Selector::Leaf(t) => return Some(t),
                Selector::Branch { site, then, otherwise } => {
                    cur = if outcome(site)? { then } else { otherwise };
                }
            }
        }
    }

    pub fn leaves(&self) -> Vec<&T> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(s) = stack.pop() {
            match s {
                Selector::Leaf(t) => out.push(t),
                Selector::Branch { then, otherwise, .. } => {
                    stack.push(otherwise);
                    stack.push(then);
                }
            }
        }
        out
    }

    /// Comparison sites the tree branches on.
    pub fn sites(&self) -> Vec<&str> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(s) = stack.pop() {
            if let Selector::Branch { site, then, otherwise } = s {
                out.push(site.as_str());
                stack.push(otherwise);
                stack.push(then);
            }
        }
        out
    }

    pub fn try_map<U: PartialEq, E>(&self, f: &mut impl FnMut(&T) -> Result<U, E>) -> Result<Selector<U>, E> {
        Ok(match self {
            Selector::Leaf(t) => Selector::Leaf(f(t)?),
            Selector::Branch { site, then, otherwise } => {
                branch(site.clone(), then.try_map(f)?, otherwise.try_map(f)?)
            }
        })
    }
}

impl<T: Clone> Selector<T> {
    /// The tree with every branch on `site` replaced by the `taken` side.
    fn restrict(&self, site: &str, taken: bool) -> Selector<T> {
        match self {
            Selector::Leaf(_) => self.clone(),
            Selector::Branch { site: s, then, otherwise } if s == site => {
                if taken { then.restrict(site, taken) } else { otherwise.restrict(site, taken) }
            }
            Selector::Branch { site: s, then, otherwise } => Selector::Branch {
                site: s.clone(),
                then: Box::new(then.restrict(site, taken)),
                otherwise: Box::new(otherwise.restrict(site, taken)),
            },
        }
    }
}

fn branch<T: PartialEq>(site: String, then: Selector<T>, otherwise: Selector<T>) -> Selector<T> {
    if then == otherwise {
        then
    } else {
        Selector::Branch { site, then: Box::new(then), otherwise: Box::new(otherwise) }
    }
}

/// Pointwise combination, pairing only leaves that lie on a consistent path.
pub fn zip_with<A, B: Clone, C: PartialEq, E>(
    a: &Selector<A>,
    b: &Selector<B>,
    f: &mut impl FnMut(&A, &B) -> Result<C, E>,
) -> Result<Selector<C>, E> {
    match a {
        Selector::Leaf(x) => b.try_map(&mut |y| f(x, y)),
        Selector::Branch { site, then, otherwise } => Ok(branch(
            site.clone(),
            zip_with(then, &b.restrict(site, true), f)?,
            zip_with(otherwise, &b.restrict(site, false), f)?,
        )),
    }
}

/// How a ciphertext was produced, as far as its label is concerned.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    pub domain: Domain,
    /// Fixed-point scale of the plaintext mantissa.
    pub scale: u32,
    pub ids: IdMultiset,
}

impl Source {
    fn single(domain: Domain, scale: u32, id: &str) -> Source {
        Source { domain, scale, ids: IdMultiset::singleton(id) }
    }
}

/// A derived label together with what it certifies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelInfo {
    pub domain: Domain,
    pub scale: u32,
    /// Base64 of the label's canonical element encoding.
    pub label: String,
    pub ids: IdMultiset,
}

impl LabelInfo {
    pub fn derive(source: &Source, keys: &KeySet) -> Result<LabelInfo, HaseError> {
        let (label, group) = match source.domain {
            Domain::Add => (add::der(&keys.add.sk, &source.ids)?, keys.add.sk.group()),
            Domain::Mul => (mul::der(&keys.mul.sk, &source.ids)?, keys.mul.sk.group()),
        };
        Ok(LabelInfo {
            domain: source.domain,
            scale: source.scale,
            label: B64.encode(group.encode(label.element())),
            ids: source.ids.clone(),
        })
    }

    pub fn label_bytes(&self) -> Option<Vec<u8>> {
        B64.decode(&self.label).ok()
    }
}

/// What the trusted module does at a site.
#[derive(Clone, Debug, PartialEq)]
pub enum SiteSpec {
    Convert { to: Domain, input: Selector<Source> },
    Cmp { rel: Relation, lhs: Selector<Source>, rhs: SpecRhs },
}

#[derive(Clone, Debug, PartialEq)]
pub enum SpecRhs {
    Const(Fixed),
    Var(Selector<Source>),
}

#[derive(Clone, Debug)]
pub struct LabelledProgram {
    pub typed: TypedProgram,
    pub values: BTreeMap<String, Selector<Source>>,
    pub sites: BTreeMap<String, SiteSpec>,
    /// (output name, value, selector)
    pub outputs: Vec<(String, String, Selector<Source>)>,
}

fn degenerate(name: &str, span: Span) -> CompileError {
    CompileError::DegenerateLabel { name: name.to_string(), span }
}

/// Computes the identifier multiset behind every value and conversion site.
pub fn assign_labels(typed: TypedProgram) -> Result<LabelledProgram, CompileError> {
    let mut values: BTreeMap<String, Selector<Source>> = BTreeMap::new();
    let mut sites: BTreeMap<String, SiteSpec> = BTreeMap::new();
    let lookup = |values: &BTreeMap<String, Selector<Source>>, v: &str| -> Selector<Source> {
        values.get(v).cloned().unwrap_or_else(|| panic!("`{v}` used before definition"))
    };
    for d in typed.ssa.defs() {
        let domain = || typed.domain_of(&d.dst).unwrap_or(Domain::Add);
        let sel = match &d.op {
            SsaOp::Input => Selector::Leaf(Source::single(domain(), 1, &d.dst)),
            SsaOp::Const(v) => Selector::Leaf(Source::single(domain(), v.scale, &d.dst)),
            SsaOp::Bin(op, a, b) => {
                let (sa, sb) = (lookup(&values, a), lookup(&values, b));
                zip_with(&sa, &sb, &mut |x: &Source, y: &Source| {
                    let (domain, scale, ids) = match op {
                        BinOp::Add => (Domain::Add, x.scale.max(y.scale), x.ids.sum(&y.ids)),
                        BinOp::Sub => (Domain::Add, x.scale.max(y.scale), x.ids.difference(&y.ids)),
                        BinOp::Mul => (Domain::Mul, x.scale + y.scale, x.ids.sum(&y.ids)),
                    };
                    debug_assert!(x.domain == domain && y.domain == domain, "operand not converted");
                    if ids.is_empty() {
                        return Err(degenerate(&d.dst, d.span));
                    }
                    if scale > MAX_SCALE {
                        return Err(CompileError::ScaleOverflow { name: d.dst.clone(), span: d.span });
                    }
                    Ok(Source { domain, scale, ids })
                })?
            }
            SsaOp::Convert { to, src } => {
                let input = lookup(&values, src);
                let out = input.try_map(&mut |s: &Source| {
                    let scale = if *to == Domain::Add { 1 } else { s.scale };
                    Ok::<_, CompileError>(Source::single(*to, scale, &d.dst))
                })?;
                let spec = SiteSpec::Convert { to: *to, input };
                match sites.get(&d.dst) {
                    Some(prev) if *prev != spec => {
                        return Err(CompileError::Unsupported {
                            span: d.span,
                            message: format!("conversion site `{}` has diverging inputs", d.dst),
                        })
                    }
                    _ => {
                        sites.insert(d.dst.clone(), spec);
                    }
                }
                out
            }
            SsaOp::Phi { cond, then_val, else_val } => {
                branch(cond.clone(), lookup(&values, then_val), lookup(&values, else_val))
            }
            SsaOp::Cmp { rel, lhs, rhs } => {
                let rhs = match rhs {
                    CmpRhs::Const(v) => SpecRhs::Const(*v),
                    CmpRhs::Var(r) => SpecRhs::Var(lookup(&values, r)),
                };
                sites.insert(d.dst.clone(), SiteSpec::Cmp { rel: *rel, lhs: lookup(&values, lhs), rhs });
                continue;
            }
        };
        values.insert(d.dst.clone(), sel);
    }
    let outputs = typed
        .ssa
        .outputs()
        .into_iter()
        .map(|(name, value, _)| {
            let sel = lookup(&values, &value);
            (name, value, sel)
        })
        .collect();
    Ok(LabelledProgram { typed, values, sites, outputs })
}
