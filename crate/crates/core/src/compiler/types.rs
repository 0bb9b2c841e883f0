//! Encryption-type inference and conversion insertion.
//!
//! Arithmetic fixes the domain of its result: `+` and `-` produce additive
//! values, `*` multiplicative ones. Inputs and constants take the domain of
//! their first arithmetic use. A phi merges whatever its operands carry, so a
//! value may be additive on one path and multiplicative on another; such
//! values are only ever consumed by conversions, comparisons and outputs.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::compiler::lang::{BinOp, Span};
use crate::compiler::ssa::{CmpRhs, Def, SsaOp, SsaProgram, SsaStmt};
use crate::hase::Domain;

pub type DomainSet = BTreeSet<Domain>;

#[derive(Clone, Debug)]
pub struct TypedProgram {
    pub ssa: SsaProgram,
    /// Domains a value may carry at run time. Comparison results are absent.
    pub domains: BTreeMap<String, DomainSet>,
}

impl TypedProgram {
    pub fn domain_of(&self, v: &str) -> Option<Domain> {
        let set = self.domains.get(v)?;
        (set.len() == 1).then(|| *set.iter().next().expect("one element"))
    }

    pub fn input_domains(&self) -> Vec<(String, Domain)> {
        self.ssa
            .inputs
            .iter()
            .map(|i| (i.clone(), self.domain_of(i).unwrap_or(Domain::Add)))
            .collect()
    }
}

pub fn op_domain(op: BinOp) -> Domain {
    match op {
        BinOp::Add | BinOp::Sub => Domain::Add,
        BinOp::Mul => Domain::Mul,
    }
}

#[derive(Clone, Debug)]
enum Use {
    Arith(BinOp),
    Phi { phi: String, other: String },
    Output(Option<Domain>),
    Cmp,
}

struct Inference<'a> {
    defs: HashMap<&'a str, &'a SsaOp>,
    uses: HashMap<String, Vec<Use>>,
}

impl Inference<'_> {
    /// Domain of a value whose type does not depend on its uses.
    fn known(&self, v: &str) -> Option<Domain> {
        match self.defs.get(v)? {
            SsaOp::Bin(op, ..) => Some(op_domain(*op)),
            SsaOp::Convert { to, .. } => Some(*to),
            SsaOp::Phi { then_val, else_val, .. } => {
                let (t, e) = (self.known(then_val)?, self.known(else_val)?);
                (t == e).then_some(t)
            }
            _ => None,
        }
    }

    /// First domain demanded by the uses of `v`, in program order.
    fn demanded(&self, v: &str) -> Option<Domain> {
        self.uses.get(v)?.iter().find_map(|u| match u {
            Use::Arith(op) => Some(op_domain(*op)),
            Use::Output(d) => *d,
            Use::Cmp => None,
            Use::Phi { phi, other } => self.known(other).or_else(|| self.demanded(phi)),
        })
    }
}

fn record_uses(body: &[SsaStmt], uses: &mut HashMap<String, Vec<Use>>) {
    let mut push = |v: &str, u: Use| uses.entry(v.to_string()).or_default().push(u);
    fn walk(stmts: &[SsaStmt], push: &mut dyn FnMut(&str, Use)) {
        for s in stmts {
            match s {
                SsaStmt::Def(d) => match &d.op {
                    SsaOp::Bin(op, a, b) => {
                        push(a, Use::Arith(*op));
                        push(b, Use::Arith(*op));
                    }
                    SsaOp::Cmp { lhs, rhs, .. } => {
                        push(lhs, Use::Cmp);
                        if let CmpRhs::Var(r) = rhs {
                            push(r, Use::Cmp);
                        }
                    }
                    SsaOp::Phi { then_val, else_val, .. } => {
                        push(then_val, Use::Phi { phi: d.dst.clone(), other: else_val.clone() });
                        push(else_val, Use::Phi { phi: d.dst.clone(), other: then_val.clone() });
                    }
                    SsaOp::Convert { src, .. } => push(src, Use::Cmp),
                    SsaOp::Input | SsaOp::Const(_) => {}
                },
                SsaStmt::If { then_body, else_body, .. } => {
                    walk(then_body, push);
                    walk(else_body, push);
                }
                SsaStmt::Output { value, domain, .. } => push(value, Use::Output(*domain)),
            }
        }
    }
    walk(body, &mut push);
}

/// Assigns each value the set of domains it may carry.
pub fn infer_types(ssa: SsaProgram) -> TypedProgram {
    let mut uses = HashMap::new();
    record_uses(&ssa.body, &mut uses);
    let defs_list = ssa.defs();
    let inf = Inference { defs: defs_list.iter().map(|d| (d.dst.as_str(), &d.op)).collect(), uses };
    let mut domains: BTreeMap<String, DomainSet> = BTreeMap::new();
    for d in &defs_list {
        let set = match &d.op {
            SsaOp::Input | SsaOp::Const(_) => {
                DomainSet::from([inf.demanded(&d.dst).unwrap_or(Domain::Add)])
            }
            SsaOp::Bin(op, ..) => DomainSet::from([op_domain(*op)]),
            SsaOp::Convert { to, .. } => DomainSet::from([*to]),
            SsaOp::Phi { then_val, else_val, .. } => {
                let mut s = domains.get(then_val).cloned().unwrap_or_default();
                s.extend(domains.get(else_val).cloned().unwrap_or_default());
                s
            }
            SsaOp::Cmp { .. } => continue,
        };
        domains.insert(d.dst.clone(), set);
    }
    drop(defs_list);
    TypedProgram { ssa, domains }
}

type Path = Vec<(usize, bool)>;

fn exclusive(a: &Path, b: &Path) -> bool {
    a.iter().any(|(i, s)| b.iter().any(|(j, t)| i == j && s != t))
}

/// Site name with the branch paths that use it.
type SiteUses = Vec<(String, Vec<Path>)>;

struct Inserter {
    domains: BTreeMap<String, DomainSet>,
    names: crate::compiler::ssa::NameGen,
    /// Conversion sites by (source, target), with the branch paths using them.
    sites: HashMap<(String, Domain), SiteUses>,
    next_if: usize,
}

impl Inserter {
    fn needs(&self, v: &str, to: Domain) -> bool {
        self.domains.get(v).map(|s| s.len() != 1 || !s.contains(&to)).unwrap_or(false)
    }

    fn convert(
        &mut self,
        v: &str,
        to: Domain,
        span: Span,
        path: &Path,
        cache: &mut HashMap<(String, Domain), String>,
        out: &mut Vec<SsaStmt>,
    ) -> String {
        if !self.needs(v, to) {
            return v.to_string();
        }
        let key = (v.to_string(), to);
        if let Some(dst) = cache.get(&key) {
            return dst.clone();
        }
        let entries = self.sites.entry(key.clone()).or_default();
        let dst = match entries.iter_mut().find(|(_, paths)| paths.iter().all(|p| exclusive(p, path))) {
            Some((name, paths)) => {
                paths.push(path.clone());
                name.clone()
            }
            None => {
                let name = self.names.fresh(v);
                entries.push((name.clone(), vec![path.clone()]));
                name
            }
        };
        self.domains.insert(dst.clone(), DomainSet::from([to]));
        out.push(SsaStmt::Def(Def { dst: dst.clone(), op: SsaOp::Convert { to, src: v.to_string() }, span }));
        cache.insert(key, dst.clone());
        dst
    }

    fn block(
        &mut self,
        stmts: Vec<SsaStmt>,
        path: &Path,
        mut cache: HashMap<(String, Domain), String>,
    ) -> Vec<SsaStmt> {
        let mut out = Vec::with_capacity(stmts.len());
        for s in stmts {
            match s {
                SsaStmt::Def(Def { dst, op: SsaOp::Bin(op, a, b), span }) => {
                    let to = op_domain(op);
                    let a = self.convert(&a, to, span, path, &mut cache, &mut out);
                    let b = self.convert(&b, to, span, path, &mut cache, &mut out);
                    out.push(SsaStmt::Def(Def { dst, op: SsaOp::Bin(op, a, b), span }));
                }
                SsaStmt::Output { name, value, domain: Some(d), span } => {
                    let value = self.convert(&value, d, span, path, &mut cache, &mut out);
                    out.push(SsaStmt::Output { name, value, domain: Some(d), span });
                }
                SsaStmt::If { cond, then_body, else_body } => {
                    let id = self.next_if;
                    self.next_if += 1;
                    let mut tp = path.clone();
                    tp.push((id, true));
                    let mut ep = path.clone();
                    ep.push((id, false));
                    let then_body = self.block(then_body, &tp, cache.clone());
                    let else_body = self.block(else_body, &ep, cache.clone());
                    out.push(SsaStmt::If { cond, then_body, else_body });
                }
                other => out.push(other),
            }
        }
        out
    }
}

/// Inserts a conversion wherever an operand's domain differs from what its
/// consumer needs.
///
/// Within a block a conversion is reused by later consumers it dominates.
/// Conversions of the same value on mutually exclusive branches share one
/// site identifier, since at most one of them runs.
pub fn insert_conversions(p: TypedProgram) -> TypedProgram {
    let TypedProgram { mut ssa, domains } = p;
    let mut ins = Inserter { domains, names: ssa.names.clone(), sites: HashMap::new(), next_if: 0 };
    let body = std::mem::take(&mut ssa.body);
    ssa.body = ins.block(body, &Vec::new(), HashMap::new());
    ssa.names = ins.names;
    TypedProgram { ssa, domains: ins.domains }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::lang::parse;
    use crate::compiler::ssa::to_ssa;

    fn typed(text: &str) -> TypedProgram {
        insert_conversions(infer_types(to_ssa(&parse(text).unwrap()).unwrap()))
    }

    fn conversions(p: &TypedProgram) -> Vec<(String, Domain, String)> {
        p.ssa
            .defs()
            .into_iter()
            .filter_map(|d| match &d.op {
                SsaOp::Convert { to, src } => Some((d.dst.clone(), *to, src.clone())),
                _ => None,
            })
            .collect()
    }

    const LISTING: &str = "input b, c, e;\na = b + c;\nd = a * e;\nif (d > 42) f = 1; else f = 0;\noutput f;";

    #[test]
    fn listing_types() {
        let p = infer_types(to_ssa(&parse(LISTING).unwrap()).unwrap());
        for v in ["a", "b", "c"] {
            assert_eq!(p.domain_of(v), Some(Domain::Add), "{v}");
        }
        assert_eq!(p.domain_of("d"), Some(Domain::Mul));
        assert_eq!(p.domain_of("e"), Some(Domain::Mul));
        assert!(!p.domains.contains_key("d1"), "comparison result is not a ciphertext");
    }

    #[test]
    fn listing_gets_one_conversion_to_mul() {
        let p = typed(LISTING);
        assert_eq!(conversions(&p), vec![("a1".to_string(), Domain::Mul, "a".to_string())]);
        let d = p.ssa.defs().into_iter().find(|d| d.dst == "d").unwrap();
        assert_eq!(d.op, SsaOp::Bin(BinOp::Mul, "a1".into(), "e".into()));
    }

    #[test]
    fn single_domain_program_needs_no_conversion() {
        assert!(conversions(&typed("input x, y;\nz = x + y - x;\noutput z;")).is_empty());
        assert!(conversions(&typed("input x, y;\nz = x * y * 3;\noutput z;")).is_empty());
    }

    #[test]
    fn mixed_use_creates_one_conversion_per_boundary() {
        let p = typed("input x;\ny = x + x;\nz = x * x;\nw = x * 2;\noutput y, z, w;");
        assert_eq!(conversions(&p), vec![("x1".to_string(), Domain::Mul, "x".to_string())]);
    }

    #[test]
    fn constants_take_their_first_use() {
        let p = typed("input x;\ny = x * 0.9;\nz = y + 1;\noutput z;");
        let consts: Vec<_> = p
            .ssa
            .defs()
            .into_iter()
            .filter(|d| matches!(d.op, SsaOp::Const(_)))
            .map(|d| p.domain_of(&d.dst).unwrap())
            .collect();
        assert_eq!(consts, vec![Domain::Mul, Domain::Add]);
    }

    #[test]
    fn phi_keeps_both_domains_without_conversion() {
        let p = typed("input s, r;\nu = s + r;\nif (u > 5) { t = u * 0.5; } else { t = u; }\noutput t;");
        assert_eq!(p.domains["t1"], DomainSet::from([Domain::Add, Domain::Mul]));
        // Only the multiplication needs a conversion; the phi does not.
        assert_eq!(conversions(&p).len(), 1);
    }

    #[test]
    fn exclusive_branches_share_a_conversion_site() {
        let p = typed(
            "input a, b;\ns = a + b;\nif (s > 500) { t = s * 0.9; } else { if (s > 250) { t = s * 0.95; } else { t = s; } }\noutput t;",
        );
        let conv = conversions(&p);
        assert_eq!(conv.len(), 2);
        assert_eq!(conv[0].0, conv[1].0);
    }

    #[test]
    fn annotated_output_is_converted() {
        let p = typed("input x, y;\nz = x + y;\noutput z : mul;");
        assert_eq!(conversions(&p).len(), 1);
        assert_eq!(p.ssa.outputs()[0].1, "z1");
    }

    #[test]
    fn relu_constant_follows_the_other_phi_operand() {
        let p = typed("input x;\nz = x + 1;\nif (z > 0) { a = z; } else { a = 0; }\ny = a * 2;\noutput y;");
        let zero = p.ssa.defs().into_iter().find(|d| d.op == SsaOp::Const(crate::encoding::Fixed::ZERO)).unwrap().dst.clone();
        assert_eq!(p.domain_of(&zero), Some(Domain::Add));
        assert_eq!(conversions(&p).len(), 1);
    }
}
