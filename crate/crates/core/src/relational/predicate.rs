use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::scalar::{Scalar, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "<>",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    /// Operator with its operands swapped: `a op b` iff `b op.flip() a`.
    pub fn flip(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
            op => op,
        }
    }

    pub fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        }
    }
}

/// Column type for predicates that may not mention columns (branch
/// conditions in transcripts).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NoColumn {}

impl fmt::Display for NoColumn {
    fn fmt(&self, _: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {}
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term<C> {
    Col(C),
    Scalar(Scalar),
}

impl<C> Term<C> {
    pub fn map_col<D>(self, f: &mut impl FnMut(C) -> Term<D>) -> Term<D> {
        match self {
            Term::Col(c) => f(c),
            Term::Scalar(s) => Term::Scalar(s),
        }
    }
}

/// Filter predicate over columns of type `C` and scalars.
///
/// Comparisons involving `NULL` are false and `Not` is plain boolean
/// complement, so every predicate is two-valued. `And` holds a flat
/// conjunct list (the left-deep form used when unparsing).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate<C> {
    True,
    Cmp(CmpOp, Term<C>, Term<C>),
    IsNull(Term<C>),
    /// Non-null and non-zero (SQL `WHERE flag`).
    Truthy(Term<C>),
    Not(Box<Predicate<C>>),
    And(Vec<Predicate<C>>),
}

impl<C> Default for Predicate<C> {
    fn default() -> Self {
        Predicate::True
    }
}

impl<C> Predicate<C> {
    pub fn eq(a: Term<C>, b: Term<C>) -> Self {
        Predicate::Cmp(CmpOp::Eq, a, b)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Self {
        match self {
            Predicate::Not(inner) => *inner,
            p => Predicate::Not(Box::new(p)),
        }
    }

    /// Conjunction, flattening nested `And`s and dropping `True`.
    pub fn and(self, other: Predicate<C>) -> Self {
        let mut parts = self.into_conjuncts();
        parts.extend(other.into_conjuncts());
        Predicate::from_conjuncts(parts)
    }

    pub fn from_conjuncts(parts: Vec<Predicate<C>>) -> Self {
        let mut flat = Vec::with_capacity(parts.len());
        for p in parts {
            flat.extend(p.into_conjuncts());
        }
        match flat.len() {
            0 => Predicate::True,
            1 => flat.pop().unwrap(),
            _ => Predicate::And(flat),
        }
    }

    pub fn into_conjuncts(self) -> Vec<Predicate<C>> {
        match self {
            Predicate::True => Vec::new(),
            Predicate::And(parts) => parts.into_iter().flat_map(|p| p.into_conjuncts()).collect(),
            p => vec![p],
        }
    }

    pub fn conjuncts(&self) -> Vec<&Predicate<C>> {
        match self {
            Predicate::True => Vec::new(),
            Predicate::And(parts) => parts.iter().flat_map(|p| p.conjuncts()).collect(),
            p => vec![p],
        }
    }

    /// Replaces every column reference through `f`.
    pub fn map_terms<D>(self, f: &mut impl FnMut(C) -> Term<D>) -> Predicate<D> {
        match self {
            Predicate::True => Predicate::True,
            Predicate::Cmp(op, a, b) => Predicate::Cmp(op, a.map_col(f), b.map_col(f)),
            Predicate::IsNull(t) => Predicate::IsNull(t.map_col(f)),
            Predicate::Truthy(t) => Predicate::Truthy(t.map_col(f)),
            Predicate::Not(p) => Predicate::Not(Box::new(p.map_terms(f))),
            Predicate::And(ps) => Predicate::And(ps.into_iter().map(|p| p.map_terms(f)).collect()),
        }
    }

    pub fn map_cols<D>(self, f: &mut impl FnMut(C) -> D) -> Predicate<D> {
        self.map_terms(&mut |c| Term::Col(f(c)))
    }

    /// Rewrites every scalar operand through `f`.
    pub fn map_scalars(self, f: &mut impl FnMut(Scalar) -> Term<C>) -> Predicate<C> {
        let mut term = |t: Term<C>| match t {
            Term::Scalar(s) => f(s),
            t => t,
        };
        self.map_all_terms(&mut term)
    }

    fn map_all_terms(self, f: &mut impl FnMut(Term<C>) -> Term<C>) -> Predicate<C> {
        match self {
            Predicate::True => Predicate::True,
            Predicate::Cmp(op, a, b) => Predicate::Cmp(op, f(a), f(b)),
            Predicate::IsNull(t) => Predicate::IsNull(f(t)),
            Predicate::Truthy(t) => Predicate::Truthy(f(t)),
            Predicate::Not(p) => Predicate::Not(Box::new(p.map_all_terms(f))),
            Predicate::And(ps) => {
                Predicate::And(ps.into_iter().map(|p| p.map_all_terms(f)).collect())
            }
        }
    }

    pub fn for_each_term(&self, f: &mut impl FnMut(&Term<C>)) {
        match self {
            Predicate::True => {}
            Predicate::Cmp(_, a, b) => {
                f(a);
                f(b);
            }
            Predicate::IsNull(t) | Predicate::Truthy(t) => f(t),
            Predicate::Not(p) => p.for_each_term(f),
            Predicate::And(ps) => ps.iter().for_each(|p| p.for_each_term(f)),
        }
    }

    pub fn scalars(&self) -> Vec<&Scalar> {
        let mut refs = Vec::new();
        self.collect_scalars(&mut refs);
        refs
    }

    fn collect_scalars<'a>(&'a self, out: &mut Vec<&'a Scalar>) {
        let mut push = |t: &'a Term<C>| {
            if let Term::Scalar(s) = t {
                out.push(s);
            }
        };
        match self {
            Predicate::True => {}
            Predicate::Cmp(_, a, b) => {
                push(a);
                push(b);
            }
            Predicate::IsNull(t) | Predicate::Truthy(t) => push(t),
            Predicate::Not(p) => p.collect_scalars(out),
            Predicate::And(ps) => ps.iter().for_each(|p| p.collect_scalars(out)),
        }
    }

    pub fn columns(&self) -> Vec<&C> {
        let mut out = Vec::new();
        self.collect_columns(&mut out);
        out
    }

    fn collect_columns<'a>(&'a self, out: &mut Vec<&'a C>) {
        let mut push = |t: &'a Term<C>| {
            if let Term::Col(c) = t {
                out.push(c);
            }
        };
        match self {
            Predicate::True => {}
            Predicate::Cmp(_, a, b) => {
                push(a);
                push(b);
            }
            Predicate::IsNull(t) | Predicate::Truthy(t) => push(t),
            Predicate::Not(p) => p.collect_columns(out),
            Predicate::And(ps) => ps.iter().for_each(|p| p.collect_columns(out)),
        }
    }

    /// Two-valued evaluation.
    pub fn eval(&self, col: &impl Fn(&C) -> Value, scalar: &impl Fn(&Scalar) -> Value) -> bool {
        let term = |t: &Term<C>| match t {
            Term::Col(c) => col(c),
            Term::Scalar(s) => scalar(s),
        };
        match self {
            Predicate::True => true,
            Predicate::Cmp(op, a, b) => match (term(a), term(b)) {
                (Some(x), Some(y)) => op.holds(x.cmp(&y)),
                _ => false,
            },
            Predicate::IsNull(t) => term(t).is_none(),
            Predicate::Truthy(t) => matches!(term(t), Some(v) if v != 0),
            Predicate::Not(p) => !p.eval(col, scalar),
            Predicate::And(ps) => ps.iter().all(|p| p.eval(col, scalar)),
        }
    }
}

impl Predicate<NoColumn> {
    pub fn eval_scalars(&self, scalar: &impl Fn(&Scalar) -> Value) -> bool {
        self.eval(&|c: &NoColumn| match *c {}, scalar)
    }

    /// Embeds a column-free predicate into any column type.
    pub fn widen<D>(self) -> Predicate<D> {
        self.map_terms(&mut |c: NoColumn| match c {})
    }
}

impl<C: fmt::Display> fmt::Display for Term<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Col(c) => c.fmt(f),
            Term::Scalar(s) => s.fmt(f),
        }
    }
}

impl<C: fmt::Display> fmt::Display for Predicate<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_predicate(f, self, &|t, f| write!(f, "{t}"), " AND ")
    }
}

/// Writes a predicate in the SQL surface syntax, rendering operands through
/// `term`. `sep` separates top-level conjuncts.
pub(crate) fn write_predicate<C, W: fmt::Write>(
    out: &mut W,
    p: &Predicate<C>,
    term: &dyn Fn(&Term<C>, &mut W) -> fmt::Result,
    sep: &str,
) -> fmt::Result {
    match p {
        Predicate::True => out.write_str("TRUE"),
        Predicate::And(parts) => {
            for (i, part) in parts.iter().enumerate() {
                if i > 0 {
                    out.write_str(sep)?;
                }
                write_atom(out, part, term)?;
            }
            Ok(())
        }
        p => write_atom(out, p, term),
    }
}

fn write_atom<C, W: fmt::Write>(
    out: &mut W,
    p: &Predicate<C>,
    term: &dyn Fn(&Term<C>, &mut W) -> fmt::Result,
) -> fmt::Result {
    match p {
        Predicate::True => out.write_str("TRUE"),
        Predicate::Cmp(op, a, b) => {
            term(a, out)?;
            write!(out, " {} ", op.symbol())?;
            term(b, out)
        }
        Predicate::IsNull(t) => {
            term(t, out)?;
            out.write_str(" IS NULL")
        }
        Predicate::Truthy(t) => term(t, out),
        Predicate::Not(inner) => match inner.as_ref() {
            Predicate::IsNull(t) => {
                term(t, out)?;
                out.write_str(" IS NOT NULL")
            }
            Predicate::Truthy(t) => {
                out.write_str("NOT ")?;
                term(t, out)
            }
            other => {
                out.write_str("NOT (")?;
                write_predicate(out, other, term, " AND ")?;
                out.write_str(")")
            }
        },
        Predicate::And(_) => {
            out.write_str("(")?;
            write_predicate(out, p, term, " AND ")?;
            out.write_str(")")
        }
    }
}
