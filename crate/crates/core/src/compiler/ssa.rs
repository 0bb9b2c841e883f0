//! Static single assignment form with structured control flow.
//!
//! Every definition gets a fresh identifier, `repeat` bodies are unrolled and
//! each `if` is followed by phi definitions for variables assigned on both
//! paths. Identifiers double as HASE identifiers, so they are unique per program.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::compiler::lang::{BinOp, Cond, Expr, Relation, SourceProgram, Span, Stmt};
use crate::compiler::CompileError;
use crate::encoding::Fixed;
use crate::hase::Domain;

/// Upper bound on definitions after unrolling.
pub const MAX_DEFS: usize = 200_000;

#[derive(Clone, Debug, PartialEq)]
pub enum CmpRhs {
    Var(String),
    Const(Fixed),
}

#[derive(Clone, Debug, PartialEq)]
pub enum SsaOp {
    Input,
    Const(Fixed),
    Bin(BinOp, String, String),
    Cmp { rel: Relation, lhs: String, rhs: CmpRhs },
    Convert { to: Domain, src: String },
    Phi { cond: String, then_val: String, else_val: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Def {
    pub dst: String,
    pub op: SsaOp,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SsaStmt {
    Def(Def),
    If { cond: String, then_body: Vec<SsaStmt>, else_body: Vec<SsaStmt> },
    Output { name: String, value: String, domain: Option<Domain>, span: Span },
}

/// Allocates identifiers. User variable names are reserved up front so that
/// temporaries never take them.
#[derive(Clone, Debug, Default)]
pub struct NameGen {
    used: HashSet<String>,
    reserved: HashSet<String>,
}

impl NameGen {
    fn claim(&mut self, name: &str) -> bool {
        self.used.insert(name.to_string())
    }

    /// `base` if free, else `base1`, `base2`, ... (`base_1` when base ends in a digit).
    pub fn fresh(&mut self, base: &str) -> String {
        if !self.used.contains(base) && !self.reserved.contains(base) {
            self.used.insert(base.to_string());
            return base.to_string();
        }
        let sep = if base.ends_with(|c: char| c.is_ascii_digit()) { "_" } else { "" };
        (1..)
            .map(|k| format!("{base}{sep}{k}"))
            .find(|c| !self.used.contains(c) && !self.reserved.contains(c))
            .inspect(|c| {
                self.used.insert(c.clone());
            })
            .expect("unbounded search")
    }
}

#[derive(Clone, Debug)]
pub struct SsaProgram {
    pub body: Vec<SsaStmt>,
    pub inputs: Vec<String>,
    pub names: NameGen,
}

impl SsaProgram {
    /// All definitions in program order, then-branch before else-branch.
    pub fn defs(&self) -> Vec<&Def> {
        fn walk<'a>(stmts: &'a [SsaStmt], out: &mut Vec<&'a Def>) {
            for s in stmts {
                match s {
                    SsaStmt::Def(d) => out.push(d),
                    SsaStmt::If { then_body, else_body, .. } => {
                        walk(then_body, out);
                        walk(else_body, out);
                    }
                    SsaStmt::Output { .. } => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.body, &mut out);
        out
    }

    pub fn outputs(&self) -> Vec<(String, String, Option<Domain>)> {
        self.body
            .iter()
            .filter_map(|s| match s {
                SsaStmt::Output { name, value, domain, .. } => Some((name.clone(), value.clone(), *domain)),
                _ => None,
            })
            .collect()
    }
}

struct Builder {
    names: NameGen,
    env: HashMap<String, String>,
    inputs: Vec<String>,
    outputs: HashSet<String>,
    defs: usize,
}

fn collect_names(stmts: &[Stmt], out: &mut HashSet<String>) {
    fn expr_names(e: &Expr, out: &mut HashSet<String>) {
        match e {
            Expr::Var(n, _) => {
                out.insert(n.clone());
            }
            Expr::Neg(e, _) => expr_names(e, out),
            Expr::Bin(_, a, b, _) => {
                expr_names(a, out);
                expr_names(b, out);
            }
            Expr::Num(..) => {}
        }
    }
    for s in stmts {
        match s {
            Stmt::Input { names, .. } => out.extend(names.iter().map(|(n, _)| n.clone())),
            Stmt::Output { items, .. } => out.extend(items.iter().map(|i| i.name.clone())),
            Stmt::Assign { target, expr, .. } => {
                out.insert(target.clone());
                expr_names(expr, out);
            }
            Stmt::If { cond, then_body, else_body, .. } => {
                expr_names(&cond.lhs, out);
                expr_names(&cond.rhs, out);
                collect_names(then_body, out);
                if let Some(e) = else_body {
                    collect_names(e, out);
                }
            }
            Stmt::Repeat { body, .. } => collect_names(body, out),
        }
    }
}

impl Builder {
    fn push_def(&mut self, out: &mut Vec<SsaStmt>, dst: String, op: SsaOp, span: Span) -> Result<String, CompileError> {
        self.defs += 1;
        if self.defs > MAX_DEFS {
            return Err(CompileError::Unsupported {
                span,
                message: format!("program exceeds {MAX_DEFS} definitions after unrolling"),
            });
        }
        out.push(SsaStmt::Def(Def { dst: dst.clone(), op, span }));
        Ok(dst)
    }

    fn version(&mut self, var: &str) -> String {
        if !self.names.used.contains(var) && self.names.claim(var) {
            var.to_string()
        } else {
            self.names.fresh(var)
        }
    }

    fn lookup(&self, name: &str, span: Span) -> Result<String, CompileError> {
        self.env
            .get(name)
            .cloned()
            .ok_or_else(|| CompileError::Undefined { name: name.to_string(), span })
    }

    /// Lowers an expression; `target` names the definition of the outermost node.
    fn expr(&mut self, e: &Expr, target: Option<&str>, out: &mut Vec<SsaStmt>) -> Result<String, CompileError> {
        if let Some(v) = e.literal() {
            let dst = match target {
                Some(t) => self.version(t),
                None => self.names.fresh("const"),
            };
            return self.push_def(out, dst, SsaOp::Const(v), e.span());
        }
        match e {
            Expr::Var(n, span) => self.lookup(n, *span),
            Expr::Num(..) => unreachable!("literals handled above"),
            Expr::Neg(inner, span) => {
                let zero = self.names.fresh("const");
                let zero = self.push_def(out, zero, SsaOp::Const(Fixed::ZERO), *span)?;
                let v = self.expr(inner, None, out)?;
                let dst = self.dst(target);
                self.push_def(out, dst, SsaOp::Bin(BinOp::Sub, zero, v), *span)
            }
            Expr::Bin(op, a, b, span) => {
                let a = self.expr(a, None, out)?;
                let b = self.expr(b, None, out)?;
                let dst = self.dst(target);
                self.push_def(out, dst, SsaOp::Bin(*op, a, b), *span)
            }
        }
    }

    fn dst(&mut self, target: Option<&str>) -> String {
        match target {
            Some(t) => self.version(t),
            None => self.names.fresh("tmp"),
        }
    }

    fn cond(&mut self, c: &Cond, out: &mut Vec<SsaStmt>) -> Result<String, CompileError> {
        let (lhs, rel, rhs) = match (c.lhs.literal(), c.rhs.literal()) {
            (Some(_), Some(_)) => {
                return Err(CompileError::Unsupported {
                    span: c.span,
                    message: "comparison between two constants".into(),
                })
            }
            (Some(_), None) => (&c.rhs, c.rel.flipped(), &c.lhs),
            _ => (&c.lhs, c.rel, &c.rhs),
        };
        let l = self.expr(lhs, None, out)?;
        let r = match rhs.literal() {
            Some(v) => CmpRhs::Const(v),
            None => CmpRhs::Var(self.expr(rhs, None, out)?),
        };
        let base = match lhs {
            Expr::Var(n, _) => n.clone(),
            _ => "cond".to_string(),
        };
        let dst = self.names.fresh(&base);
        self.push_def(out, dst, SsaOp::Cmp { rel, lhs: l, rhs: r }, c.span)
    }

    fn block(&mut self, stmts: &[Stmt], out: &mut Vec<SsaStmt>) -> Result<(), CompileError> {
        for s in stmts {
            self.stmt(s, out)?;
        }
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt, out: &mut Vec<SsaStmt>) -> Result<(), CompileError> {
        match s {
            Stmt::Input { names, .. } => {
                for (n, span) in names {
                    if self.names.used.contains(n) || !self.names.claim(n) {
                        return Err(CompileError::Redeclared { name: n.clone(), span: *span });
                    }
                    self.push_def(out, n.clone(), SsaOp::Input, *span)?;
                    self.env.insert(n.clone(), n.clone());
                    self.inputs.push(n.clone());
                }
            }
            Stmt::Output { items, .. } => {
                for item in items {
                    if !self.outputs.insert(item.name.clone()) {
                        return Err(CompileError::Redeclared { name: item.name.clone(), span: item.span });
                    }
                    let value = self.lookup(&item.name, item.span)?;
                    out.push(SsaStmt::Output {
                        name: item.name.clone(),
                        value,
                        domain: item.domain,
                        span: item.span,
                    });
                }
            }
            Stmt::Assign { target, expr, .. } => {
                let v = match expr {
                    Expr::Var(n, span) => self.lookup(n, *span)?,
                    e => self.expr(e, Some(target), out)?,
                };
                self.env.insert(target.clone(), v);
            }
            Stmt::If { cond, then_body, else_body, span } => {
                let c = self.cond(cond, out)?;
                let before = self.env.clone();
                let mut then_out = Vec::new();
                self.block(then_body, &mut then_out)?;
                let after_then = std::mem::replace(&mut self.env, before.clone());
                let mut else_out = Vec::new();
                if let Some(e) = else_body {
                    self.block(e, &mut else_out)?;
                }
                let after_else = std::mem::take(&mut self.env);
                out.push(SsaStmt::If { cond: c.clone(), then_body: then_out, else_body: else_out });
                let vars: BTreeSet<&String> = after_then.keys().chain(after_else.keys()).collect();
                let mut merged = BTreeMap::new();
                for var in vars {
                    match (after_then.get(var), after_else.get(var)) {
                        (Some(t), Some(e)) if t == e => {
                            merged.insert(var.clone(), t.clone());
                        }
                        (Some(t), Some(e)) => {
                            let dst = self.version(var);
                            let op = SsaOp::Phi { cond: c.clone(), then_val: t.clone(), else_val: e.clone() };
                            self.push_def(out, dst.clone(), op, *span)?;
                            merged.insert(var.clone(), dst);
                        }
                        _ => {}
                    }
                }
                self.env = merged.into_iter().collect();
            }
            Stmt::Repeat { count, body, .. } => {
                for _ in 0..*count {
                    self.block(body, out)?;
                }
            }
        }
        Ok(())
    }
}

/// Converts a parsed program to SSA.
pub fn to_ssa(program: &SourceProgram) -> Result<SsaProgram, CompileError> {
    let mut reserved = HashSet::new();
    collect_names(&program.stmts, &mut reserved);
    let mut b = Builder {
        names: NameGen { used: HashSet::new(), reserved },
        env: HashMap::new(),
        inputs: Vec::new(),
        outputs: HashSet::new(),
        defs: 0,
    };
    let mut body = Vec::new();
    b.block(&program.stmts, &mut body)?;
    Ok(SsaProgram { body, inputs: b.inputs, names: b.names })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::lang::parse;

    fn ssa(text: &str) -> SsaProgram {
        to_ssa(&parse(text).unwrap()).unwrap()
    }

    fn find<'a>(p: &'a SsaProgram, dst: &str) -> &'a SsaOp {
        &p.defs().into_iter().find(|d| d.dst == dst).unwrap_or_else(|| panic!("no def {dst}")).op
    }

    #[test]
    fn listing_conversion_to_ssa() {
        let p = ssa("input b, c, e;\na = b + c;\nd = a * e;\nif (d > 42) f = 1; else f = 0;\noutput f;");
        assert_eq!(*find(&p, "a"), SsaOp::Bin(BinOp::Add, "b".into(), "c".into()));
        assert_eq!(*find(&p, "d"), SsaOp::Bin(BinOp::Mul, "a".into(), "e".into()));
        assert_eq!(
            *find(&p, "d1"),
            SsaOp::Cmp { rel: Relation::Gt, lhs: "d".into(), rhs: CmpRhs::Const(Fixed::from_int(42)) }
        );
        assert_eq!(*find(&p, "f"), SsaOp::Const(Fixed::from_int(1)));
        assert_eq!(*find(&p, "f1"), SsaOp::Const(Fixed::from_int(0)));
        assert_eq!(
            *find(&p, "f2"),
            SsaOp::Phi { cond: "d1".into(), then_val: "f".into(), else_val: "f1".into() }
        );
        assert_eq!(p.outputs(), vec![("f".to_string(), "f2".to_string(), None)]);
    }

    #[test]
    fn single_definition_per_identifier() {
        let p = ssa("input x;\ns = x;\nrepeat 3 { s = s + x; }\nif (s > 1) { s = s * x; }\noutput s;");
        let defs = p.defs();
        let unique: HashSet<_> = defs.iter().map(|d| &d.dst).collect();
        assert_eq!(unique.len(), defs.len());
    }

    #[test]
    fn repeat_unrolls_into_a_chain() {
        let p = ssa("input x;\ns = 0;\nrepeat 3 { s = s + x; }\noutput s;");
        assert_eq!(*find(&p, "s1"), SsaOp::Bin(BinOp::Add, "s".into(), "x".into()));
        assert_eq!(*find(&p, "s2"), SsaOp::Bin(BinOp::Add, "s1".into(), "x".into()));
        assert_eq!(*find(&p, "s3"), SsaOp::Bin(BinOp::Add, "s2".into(), "x".into()));
        assert_eq!(p.outputs()[0].1, "s3");
    }

    #[test]
    fn nested_expressions_get_temporaries() {
        let p = ssa("input a, b, c;\nx = a + b * c;\noutput x;");
        assert_eq!(*find(&p, "tmp"), SsaOp::Bin(BinOp::Mul, "b".into(), "c".into()));
        assert_eq!(*find(&p, "x"), SsaOp::Bin(BinOp::Add, "a".into(), "tmp".into()));
    }

    #[test]
    fn temporaries_avoid_user_names() {
        let p = ssa("input a, b;\nx = (a + b) * a;\ntmp = x;\noutput tmp;");
        assert_eq!(*find(&p, "tmp1"), SsaOp::Bin(BinOp::Add, "a".into(), "b".into()));
    }

    #[test]
    fn literal_on_the_left_flips_the_relation() {
        let p = ssa("input x;\nif (5 < x) y = 1; else y = 2;\noutput y;");
        let cmp = p.defs().into_iter().find(|d| matches!(d.op, SsaOp::Cmp { .. })).unwrap();
        assert!(matches!(&cmp.op, SsaOp::Cmp { rel: Relation::Gt, rhs: CmpRhs::Const(v), .. } if *v == Fixed::from_int(5)));
    }

    #[test]
    fn branch_only_variables_do_not_escape() {
        let err = to_ssa(&parse("input x;\nif (x > 1) { y = x; }\noutput y;").unwrap()).unwrap_err();
        assert!(matches!(err, CompileError::Undefined { ref name, .. } if name == "y"));
    }

    #[test]
    fn one_sided_assignment_merges_with_previous_value() {
        let p = ssa("input x;\ny = x;\nif (x > 1) { y = x + x; }\noutput y;");
        let phi = p.defs().into_iter().find(|d| matches!(d.op, SsaOp::Phi { .. })).unwrap();
        assert!(matches!(&phi.op, SsaOp::Phi { else_val, .. } if else_val == "x"));
    }

    #[test]
    fn errors_carry_positions() {
        let err = to_ssa(&parse("input x;\ny = z + x;").unwrap()).unwrap_err();
        assert!(matches!(err, CompileError::Undefined { span: Span { line: 2, col: 5 }, .. }), "{err:?}");
        assert!(matches!(
            to_ssa(&parse("input x, x;").unwrap()),
            Err(CompileError::Redeclared { .. })
        ));
        assert!(matches!(
            to_ssa(&parse("x = 1;\ninput x;").unwrap()),
            Err(CompileError::Redeclared { .. })
        ));
        assert!(matches!(
            to_ssa(&parse("if (1 > 2) x = 1;").unwrap()),
            Err(CompileError::Unsupported { .. })
        ));
    }

    #[test]
    fn negation_of_a_variable_subtracts_from_zero() {
        let p = ssa("input x;\ny = -x;\nz = -2.5;\noutput y, z;");
        assert!(matches!(find(&p, "y"), SsaOp::Bin(BinOp::Sub, _, r) if r == "x"));
        assert_eq!(*find(&p, "z"), SsaOp::Const(Fixed::parse("-2.5").unwrap()));
    }
}
