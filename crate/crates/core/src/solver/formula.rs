//! Quantifier-free formulas over boolean and bounded-integer symbols.

use std::collections::BTreeSet;
use std::fmt::{self, Write};
use std::sync::Arc;

use crate::relational::CmpOp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BoolVar(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IntVar(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IntTerm {
    Const(i64),
    Var(IntVar),
}

#[derive(Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Const(bool),
    Var(BoolVar),
    Not(Formula),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Cmp(CmpOp, IntTerm, IntTerm),
}

/// Shared, immutable formula. Constructors fold constants, so a formula
/// built from constants only is always `Const`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Formula(Arc<Node>);

impl Formula {
    pub fn node(&self) -> &Node {
        &self.0
    }

    /// Identity of the shared node, used to memoize translations.
    pub(crate) fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    pub fn constant(b: bool) -> Self {
        Formula(Arc::new(Node::Const(b)))
    }

    pub fn tt() -> Self {
        Formula::constant(true)
    }

    pub fn ff() -> Self {
        Formula::constant(false)
    }

    pub fn var(v: BoolVar) -> Self {
        Formula(Arc::new(Node::Var(v)))
    }

    pub fn as_const(&self) -> Option<bool> {
        match *self.0 {
            Node::Const(b) => Some(b),
            _ => None,
        }
    }

    pub fn is_true(&self) -> bool {
        self.as_const() == Some(true)
    }

    pub fn is_false(&self) -> bool {
        self.as_const() == Some(false)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(&self) -> Self {
        match &*self.0 {
            Node::Const(b) => Formula::constant(!b),
            Node::Not(inner) => inner.clone(),
            _ => Formula(Arc::new(Node::Not(self.clone()))),
        }
    }

    pub fn and_all(parts: impl IntoIterator<Item = Formula>) -> Self {
        let mut out = Vec::new();
        for p in parts {
            match &*p.0 {
                Node::Const(true) => {}
                Node::Const(false) => return Formula::ff(),
                Node::And(inner) => out.extend(inner.iter().cloned()),
                _ => out.push(p),
            }
        }
        match out.len() {
            0 => Formula::tt(),
            1 => out.pop().unwrap(),
            _ => Formula(Arc::new(Node::And(out))),
        }
    }

    pub fn or_all(parts: impl IntoIterator<Item = Formula>) -> Self {
        let mut out = Vec::new();
        for p in parts {
            match &*p.0 {
                Node::Const(false) => {}
                Node::Const(true) => return Formula::tt(),
                Node::Or(inner) => out.extend(inner.iter().cloned()),
                _ => out.push(p),
            }
        }
        match out.len() {
            0 => Formula::ff(),
            1 => out.pop().unwrap(),
            _ => Formula(Arc::new(Node::Or(out))),
        }
    }

    pub fn and(&self, other: &Formula) -> Self {
        Formula::and_all([self.clone(), other.clone()])
    }

    pub fn or(&self, other: &Formula) -> Self {
        Formula::or_all([self.clone(), other.clone()])
    }

    pub fn implies(&self, other: &Formula) -> Self {
        self.not().or(other)
    }

    pub fn iff(&self, other: &Formula) -> Self {
        self.implies(other).and(&other.implies(self))
    }

    pub fn cmp(op: CmpOp, a: IntTerm, b: IntTerm) -> Self {
        match (a, b) {
            (IntTerm::Const(x), IntTerm::Const(y)) => Formula::constant(op.holds(x.cmp(&y))),
            (IntTerm::Var(x), IntTerm::Var(y)) if x == y => {
                Formula::constant(matches!(op, CmpOp::Eq | CmpOp::Le | CmpOp::Ge))
            }
            _ => Formula(Arc::new(Node::Cmp(op, a, b))),
        }
    }

    pub fn int_eq(a: IntTerm, b: IntTerm) -> Self {
        Formula::cmp(CmpOp::Eq, a, b)
    }

    pub fn eval(&self, m: &Model) -> bool {
        match &*self.0 {
            Node::Const(b) => *b,
            Node::Var(v) => m.bool(*v),
            Node::Not(f) => !f.eval(m),
            Node::And(fs) => fs.iter().all(|f| f.eval(m)),
            Node::Or(fs) => fs.iter().any(|f| f.eval(m)),
            Node::Cmp(op, a, b) => op.holds(m.int(*a).cmp(&m.int(*b))),
        }
    }

    fn collect_vars(&self, bools: &mut BTreeSet<BoolVar>, ints: &mut BTreeSet<IntVar>) {
        match &*self.0 {
            Node::Const(_) => {}
            Node::Var(v) => {
                bools.insert(*v);
            }
            Node::Not(f) => f.collect_vars(bools, ints),
            Node::And(fs) | Node::Or(fs) => fs.iter().for_each(|f| f.collect_vars(bools, ints)),
            Node::Cmp(_, a, b) => {
                for t in [a, b] {
                    if let IntTerm::Var(v) = t {
                        ints.insert(*v);
                    }
                }
            }
        }
    }
}

/// Declared symbols and the integer range they range over.
#[derive(Clone, Debug)]
pub struct Vocab {
    pub bool_names: Vec<String>,
    pub int_names: Vec<String>,
    pub range: (i64, i64),
}

impl Vocab {
    pub fn new(range: (i64, i64)) -> Self {
        assert!(range.0 <= range.1, "empty value range");
        Vocab {
            bool_names: Vec::new(),
            int_names: Vec::new(),
            range,
        }
    }

    pub fn new_bool(&mut self, name: impl Into<String>) -> BoolVar {
        self.bool_names.push(name.into());
        BoolVar(self.bool_names.len() as u32 - 1)
    }

    pub fn new_int(&mut self, name: impl Into<String>) -> IntVar {
        self.int_names.push(name.into());
        IntVar(self.int_names.len() as u32 - 1)
    }

    pub fn bool_name(&self, v: BoolVar) -> &str {
        &self.bool_names[v.0 as usize]
    }

    pub fn int_name(&self, v: IntVar) -> &str {
        &self.int_names[v.0 as usize]
    }

    /// SMT-LIB2 text asserting `formulas`, for inspection with an external
    /// solver.
    pub fn smtlib(&self, formulas: &[Formula]) -> String {
        let mut bools = BTreeSet::new();
        let mut ints = BTreeSet::new();
        for f in formulas {
            f.collect_vars(&mut bools, &mut ints);
        }
        let mut out = String::from("(set-logic QF_LIA)\n");
        for b in &bools {
            writeln!(out, "(declare-const |{}| Bool)", self.bool_name(*b)).unwrap();
        }
        for i in &ints {
            let n = self.int_name(*i);
            writeln!(out, "(declare-const |{n}| Int)").unwrap();
            writeln!(
                out,
                "(assert (and (<= {} |{n}|) (<= |{n}| {})))",
                smt_int(self.range.0),
                smt_int(self.range.1)
            )
            .unwrap();
        }
        for f in formulas {
            out.push_str("(assert ");
            self.write_smt(&mut out, f).unwrap();
            out.push_str(")\n");
        }
        out.push_str("(check-sat)\n");
        out
    }

    fn write_smt(&self, out: &mut String, f: &Formula) -> fmt::Result {
        match f.node() {
            Node::Const(b) => write!(out, "{b}"),
            Node::Var(v) => write!(out, "|{}|", self.bool_name(*v)),
            Node::Not(g) => {
                out.push_str("(not ");
                self.write_smt(out, g)?;
                out.push(')');
                Ok(())
            }
            Node::And(fs) | Node::Or(fs) => {
                out.push_str(if matches!(f.node(), Node::And(_)) {
                    "(and"
                } else {
                    "(or"
                });
                for g in fs {
                    out.push(' ');
                    self.write_smt(out, g)?;
                }
                out.push(')');
                Ok(())
            }
            Node::Cmp(op, a, b) => {
                let term = |t: &IntTerm| match t {
                    IntTerm::Const(c) => smt_int(*c),
                    IntTerm::Var(v) => format!("|{}|", self.int_name(*v)),
                };
                match op {
                    CmpOp::Ne => write!(out, "(not (= {} {}))", term(a), term(b)),
                    _ => write!(out, "({} {} {})", op.symbol(), term(a), term(b)),
                }
            }
        }
    }
}

fn smt_int(v: i64) -> String {
    if v < 0 {
        format!("(- {})", v.unsigned_abs())
    } else {
        v.to_string()
    }
}

/// A full assignment of the declared symbols.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Model {
    pub bools: Vec<bool>,
    pub ints: Vec<i64>,
}

impl Model {
    pub fn bool(&self, v: BoolVar) -> bool {
        self.bools[v.0 as usize]
    }

    pub fn int(&self, t: IntTerm) -> i64 {
        match t {
            IntTerm::Const(c) => c,
            IntTerm::Var(v) => self.ints[v.0 as usize],
        }
    }
}

/// A possibly-null integer: `null` says whether it is NULL, `val` is its
/// value otherwise.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SymValue {
    pub null: Formula,
    pub val: IntTerm,
}

impl SymValue {
    pub fn constant(v: Option<i64>) -> Self {
        match v {
            Some(v) => SymValue {
                null: Formula::ff(),
                val: IntTerm::Const(v),
            },
            None => SymValue::null(),
        }
    }

    pub fn null() -> Self {
        SymValue {
            null: Formula::tt(),
            val: IntTerm::Const(0),
        }
    }

    pub fn not_null(val: IntTerm) -> Self {
        SymValue {
            null: Formula::ff(),
            val,
        }
    }

    /// SQL comparison: false when either side is NULL.
    pub fn sql_cmp(op: CmpOp, a: &SymValue, b: &SymValue) -> Formula {
        Formula::and_all([a.null.not(), b.null.not(), Formula::cmp(op, a.val, b.val)])
    }

    pub fn sql_eq(a: &SymValue, b: &SymValue) -> Formula {
        SymValue::sql_cmp(CmpOp::Eq, a, b)
    }

    /// Tuple-identity: both NULL, or both non-null and equal.
    pub fn same(a: &SymValue, b: &SymValue) -> Formula {
        let both_null = a.null.and(&b.null);
        if both_null.is_true() {
            return both_null;
        }
        both_null.or(&SymValue::sql_eq(a, b))
    }

    pub fn same_tuple(a: &[SymValue], b: &[SymValue]) -> Formula {
        Formula::and_all(a.iter().zip(b).map(|(x, y)| SymValue::same(x, y)))
    }

    pub fn truthy(&self) -> Formula {
        self.null
            .not()
            .and(&Formula::cmp(CmpOp::Ne, self.val, IntTerm::Const(0)))
    }

    pub fn is_null(&self) -> Formula {
        self.null.clone()
    }

    pub fn eval(&self, m: &Model) -> Option<i64> {
        if self.null.eval(m) {
            None
        } else {
            Some(m.int(self.val))
        }
    }
}
