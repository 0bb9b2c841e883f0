//! Plaintext interpreter used as the oracle for encrypted runs.
//!
//! Operates on the source tree, not on compiler output, with the same
//! fixed-point rules the encrypted pipeline follows: `+` and `-` bring both
//! operands to scale one (rounding half away from zero), `*` is exact and adds
//! scales, comparisons are exact.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::compiler::lang::{BinOp, Expr, SourceProgram, Stmt};
use crate::encoding::Fixed;
use crate::hase::Domain;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RefError {
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("unexpected input `{0}`")]
    UnexpectedInput(String),
    #[error("`{0}` is used before it is assigned")]
    Undefined(String),
    #[error("arithmetic overflow")]
    Overflow,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Evaluation {
    pub outputs: BTreeMap<String, Fixed>,
    /// Branch decisions in execution order.
    pub decisions: Vec<bool>,
}

struct Interp<'a> {
    env: BTreeMap<String, Fixed>,
    inputs: &'a BTreeMap<String, Fixed>,
    outputs: BTreeMap<String, Fixed>,
    decisions: Vec<bool>,
}

fn add_like(op: BinOp, a: Fixed, b: Fixed) -> Result<Fixed, RefError> {
    let a = a.normalized().ok_or(RefError::Overflow)?;
    let b = b.normalized().ok_or(RefError::Overflow)?;
    let m = match op {
        BinOp::Add => a.mantissa.checked_add(b.mantissa),
        _ => a.mantissa.checked_sub(b.mantissa),
    };
    Ok(Fixed::new(m.ok_or(RefError::Overflow)?, 1))
}

impl Interp<'_> {
    fn expr(&self, e: &Expr) -> Result<Fixed, RefError> {
        if let Some(v) = e.literal() {
            return Ok(v);
        }
        match e {
            Expr::Num(v, _) => Ok(*v),
            Expr::Var(n, _) => self.env.get(n).copied().ok_or_else(|| RefError::Undefined(n.clone())),
            Expr::Neg(inner, _) => add_like(BinOp::Sub, Fixed::ZERO, self.expr(inner)?),
            Expr::Bin(BinOp::Mul, a, b, _) => {
                self.expr(a)?.checked_mul(&self.expr(b)?).ok_or(RefError::Overflow)
            }
            Expr::Bin(op, a, b, _) => add_like(*op, self.expr(a)?, self.expr(b)?),
        }
    }

    fn block(&mut self, stmts: &[Stmt]) -> Result<(), RefError> {
        for s in stmts {
            match s {
                Stmt::Input { names, .. } => {
                    for (n, _) in names {
                        let v = self.inputs.get(n).ok_or_else(|| RefError::MissingInput(n.clone()))?;
                        self.env.insert(n.clone(), *v);
                    }
                }
                Stmt::Output { items, .. } => {
                    for item in items {
                        let mut v =
                            self.env.get(&item.name).copied().ok_or_else(|| RefError::Undefined(item.name.clone()))?;
                        if item.domain == Some(Domain::Add) {
                            v = v.normalized().ok_or(RefError::Overflow)?;
                        }
                        self.outputs.insert(item.name.clone(), v);
                    }
                }
                Stmt::Assign { target, expr, .. } => {
                    let v = self.expr(expr)?;
                    self.env.insert(target.clone(), v);
                }
                Stmt::If { cond, then_body, else_body, .. } => {
                    let (l, r) = (self.expr(&cond.lhs)?, self.expr(&cond.rhs)?);
                    let taken = cond.rel.holds(l.cmp(&r));
                    self.decisions.push(taken);
                    // Variables first assigned inside a branch do not escape it.
                    let before: Vec<String> = self.env.keys().cloned().collect();
                    if taken {
                        self.block(then_body)?;
                    } else if let Some(e) = else_body {
                        self.block(e)?;
                    }
                    let (then_defs, else_defs) = (assigned(then_body), else_body.as_deref().map(assigned).unwrap_or_default());
                    self.env.retain(|k, _| {
                        before.contains(k) || (then_defs.contains(k) && else_defs.contains(k))
                    });
                }
                Stmt::Repeat { count, body, .. } => {
                    for _ in 0..*count {
                        self.block(body)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn assigned(stmts: &[Stmt]) -> Vec<String> {
    let mut out = Vec::new();
    for s in stmts {
        match s {
            Stmt::Assign { target, .. } => out.push(target.clone()),
            Stmt::If { then_body, else_body, .. } => {
                let t = assigned(then_body);
                let e = else_body.as_deref().map(assigned).unwrap_or_default();
                out.extend(t.into_iter().filter(|v| e.contains(v)));
            }
            Stmt::Repeat { count, body, .. } if *count > 0 => out.extend(assigned(body)),
            _ => {}
        }
    }
    out
}

/// Runs the program on plaintext inputs.
pub fn evaluate(program: &SourceProgram, inputs: &BTreeMap<String, Fixed>) -> Result<Evaluation, RefError> {
    let declared = program.inputs();
    if let Some(extra) = inputs.keys().find(|k| !declared.contains(k)) {
        return Err(RefError::UnexpectedInput(extra.clone()));
    }
    let mut it = Interp { env: BTreeMap::new(), inputs, outputs: BTreeMap::new(), decisions: Vec::new() };
    it.block(&program.stmts)?;
    Ok(Evaluation { outputs: it.outputs, decisions: it.decisions })
}
