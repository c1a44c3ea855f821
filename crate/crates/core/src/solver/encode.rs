//! Bounded symbolic databases and the encoding of queries over them.

use std::collections::{BTreeMap, BTreeSet};

use super::formula::{Formula, IntTerm, Model, SymValue, Vocab};
use crate::relational::{
    CmpOp, Database, Interner, JoinKind, NormalFormQuery, Output, Predicate, ResolvedQuery, Scalar,
    Term, Value,
};
use crate::schema::{ColumnType, Constraint, ContainmentRhs, Schema};

/// One slot of a symbolic table.
#[derive(Clone, Debug)]
pub struct SymRow {
    pub present: Formula,
    pub values: Vec<SymValue>,
}

/// A database with at most `bound` rows per table, every value a symbol.
#[derive(Clone, Debug)]
pub struct SymInstance {
    pub tables: BTreeMap<String, Vec<SymRow>>,
    /// Type domains, slot ordering and the integrity constraints.
    pub axioms: Vec<Formula>,
}

pub fn fresh_value(vocab: &mut Vocab, name: &str, nullable: bool) -> SymValue {
    let val = IntTerm::Var(vocab.new_int(name));
    let null = if nullable {
        Formula::var(vocab.new_bool(format!("{name}.null")))
    } else {
        Formula::ff()
    };
    SymValue { null, val }
}

/// Restricts a value to the booleans 0 and 1.
pub fn bool_domain(v: &SymValue) -> Formula {
    Formula::cmp(CmpOp::Le, v.val, IntTerm::Const(1))
}

/// Encodes the tables in `tables` with `bound` slots each, plus every
/// constraint that only mentions those tables. Symbols are named with
/// `prefix` so several instances can share one vocabulary.
pub fn encode_instance(
    vocab: &mut Vocab,
    schema: &Schema,
    constraints: &[Constraint],
    strings: &Interner,
    bound: usize,
    tables: &BTreeSet<String>,
    prefix: &str,
) -> SymInstance {
    let mut inst = SymInstance {
        tables: BTreeMap::new(),
        axioms: Vec::new(),
    };
    for t in &schema.tables {
        if !tables.contains(&t.name) {
            continue;
        }
        let mut rows: Vec<SymRow> = Vec::with_capacity(bound);
        for i in 0..bound {
            let present = Formula::var(vocab.new_bool(format!("{prefix}{}[{i}]", t.name)));
            let values: Vec<SymValue> = t
                .columns
                .iter()
                .map(|c| {
                    fresh_value(
                        vocab,
                        &format!("{prefix}{}[{i}].{}", t.name, c.name),
                        c.nullable,
                    )
                })
                .collect();
            for (c, v) in t.columns.iter().zip(&values) {
                if c.ty == ColumnType::Bool {
                    inst.axioms.push(bool_domain(v));
                }
            }
            // slots fill in order
            if let Some(prev) = rows.last() {
                inst.axioms.push(present.implies(&prev.present));
            }
            rows.push(SymRow { present, values });
        }
        inst.tables.insert(t.name.clone(), rows);
    }
    for c in constraints {
        if c.tables().iter().all(|t| tables.contains(*t)) {
            inst.axioms
                .push(encode_constraint(c, &inst, schema, strings));
        }
    }
    inst
}

fn encode_constraint(
    c: &Constraint,
    inst: &SymInstance,
    schema: &Schema,
    strings: &Interner,
) -> Formula {
    let literal = |s: &Scalar| {
        SymValue::constant(
            s.literal_value(strings)
                .expect("constraints only mention literals"),
        )
    };
    match c {
        Constraint::Unique { table, columns } => {
            let rows = &inst.tables[table];
            let mut parts = Vec::new();
            for i in 0..rows.len() {
                for j in i + 1..rows.len() {
                    let clash = Formula::and_all(
                        [rows[i].present.clone(), rows[j].present.clone()]
                            .into_iter()
                            .chain(columns.iter().map(|&k| {
                                SymValue::sql_eq(&rows[i].values[k], &rows[j].values[k])
                            })),
                    );
                    parts.push(clash.not());
                }
            }
            Formula::and_all(parts)
        }
        Constraint::Containment { lhs, rhs } => {
            let l = encode_nf(lhs, inst, schema, &literal);
            match rhs {
                ContainmentRhs::Query(q) => l.subset_of(&encode_nf(q, inst, schema, &literal)),
                ContainmentRhs::Rows(rows) => {
                    let r = Encoded {
                        candidates: rows
                            .iter()
                            .map(|row| Candidate {
                                sat: Formula::tt(),
                                tuple: row.iter().map(literal).collect(),
                            })
                            .collect(),
                    };
                    l.subset_of(&r)
                }
            }
        }
    }
}

/// One combination of slots that may contribute a result tuple.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub sat: Formula,
    pub tuple: Vec<SymValue>,
}

/// A query result as the union of its candidates.
#[derive(Clone, Debug, Default)]
pub struct Encoded {
    pub candidates: Vec<Candidate>,
}

impl Encoded {
    pub fn non_empty(&self) -> Formula {
        Formula::or_all(self.candidates.iter().map(|c| c.sat.clone()))
    }

    /// `tuple` is in the result.
    pub fn contains(&self, tuple: &[SymValue]) -> Formula {
        Formula::or_all(
            self.candidates
                .iter()
                .map(|c| c.sat.and(&SymValue::same_tuple(&c.tuple, tuple))),
        )
    }

    pub fn subset_of(&self, other: &Encoded) -> Formula {
        Formula::and_all(
            self.candidates
                .iter()
                .map(|c| c.sat.implies(&other.contains(&c.tuple))),
        )
    }

    pub fn set_eq(&self, other: &Encoded) -> Formula {
        self.subset_of(other).and(&other.subset_of(self))
    }

    /// The result holds at most one distinct tuple.
    pub fn at_most_one(&self) -> Formula {
        let cs = &self.candidates;
        let mut parts = Vec::new();
        for i in 0..cs.len() {
            for j in i + 1..cs.len() {
                parts.push(
                    cs[i]
                        .sat
                        .and(&cs[j].sat)
                        .implies(&SymValue::same_tuple(&cs[i].tuple, &cs[j].tuple)),
                );
            }
        }
        Formula::and_all(parts)
    }

    /// Every result tuple equals `row` (meaningful together with
    /// `non_empty`).
    pub fn all_equal(&self, row: &[SymValue]) -> Formula {
        Formula::and_all(
            self.candidates
                .iter()
                .map(|c| c.sat.implies(&SymValue::same_tuple(&c.tuple, row))),
        )
    }
}

pub fn encode_predicate<C>(
    p: &Predicate<C>,
    col: &impl Fn(&C) -> SymValue,
    scalar: &impl Fn(&Scalar) -> SymValue,
) -> Formula {
    let term = |t: &Term<C>| match t {
        Term::Col(c) => col(c),
        Term::Scalar(s) => scalar(s),
    };
    match p {
        Predicate::True => Formula::tt(),
        Predicate::Cmp(op, a, b) => SymValue::sql_cmp(*op, &term(a), &term(b)),
        Predicate::IsNull(t) => term(t).is_null(),
        Predicate::Truthy(t) => term(t).truthy(),
        Predicate::Not(inner) => encode_predicate(inner, col, scalar).not(),
        Predicate::And(parts) => {
            Formula::and_all(parts.iter().map(|q| encode_predicate(q, col, scalar)))
        }
    }
}

/// Cross product of the slots of `sources`: a presence guard and the
/// concatenated values per combination.
fn product(sources: &[String], inst: &SymInstance) -> Vec<(Formula, Vec<SymValue>)> {
    let mut out = vec![(Formula::tt(), Vec::new())];
    for s in sources {
        let rows = &inst.tables[s];
        let mut next = Vec::with_capacity(out.len() * rows.len());
        for (g, t) in &out {
            for r in rows {
                let mut t = t.clone();
                t.extend(r.values.iter().cloned());
                next.push((g.and(&r.present), t));
            }
        }
        out = next;
    }
    out
}

pub fn encode_nf(
    q: &NormalFormQuery,
    inst: &SymInstance,
    _schema: &Schema,
    scalar: &impl Fn(&Scalar) -> SymValue,
) -> Encoded {
    let candidates = product(&q.sources, inst)
        .into_iter()
        .filter_map(|(guard, tuple)| {
            let sat = guard.and(&encode_predicate(&q.filter, &|&c| tuple[c].clone(), scalar));
            (!sat.is_false()).then(|| Candidate {
                sat,
                tuple: q.projection.iter().map(|&c| tuple[c].clone()).collect(),
            })
        })
        .collect();
    Encoded { candidates }
}

/// Encodes a resolved query including its outer joins. `COUNT(*)` queries
/// have no symbolic result and encode as a single always-present empty
/// tuple.
pub fn encode_resolved(
    q: &ResolvedQuery,
    inst: &SymInstance,
    schema: &Schema,
    scalar: &impl Fn(&Scalar) -> SymValue,
) -> Encoded {
    if q.output == Output::Count {
        return Encoded {
            candidates: vec![Candidate {
                sat: Formula::tt(),
                tuple: Vec::new(),
            }],
        };
    }
    let mut combos = product(&q.sources[..q.from_count], inst);
    for (k, j) in q.joins.iter().enumerate() {
        let table = &q.sources[q.from_count + k];
        let rows = &inst.tables[table];
        let mut next = Vec::new();
        for (g, t) in &combos {
            let mut matches = Vec::new();
            for r in rows {
                let mut ext = t.clone();
                ext.extend(r.values.iter().cloned());
                let m = r.present.and(&SymValue::sql_eq(&ext[j.on.0], &ext[j.on.1]));
                matches.push(m.clone());
                next.push((g.and(&m), ext));
            }
            if j.kind == JoinKind::Left {
                let mut ext = t.clone();
                ext.extend(std::iter::repeat(SymValue::null()).take(schema.arity(table)));
                next.push((g.and(&Formula::or_all(matches).not()), ext));
            }
        }
        combos = next;
    }
    let Output::Columns(cols) = &q.output else {
        unreachable!("COUNT handled above")
    };
    let candidates = combos
        .into_iter()
        .filter_map(|(guard, tuple)| {
            let sat = guard.and(&encode_predicate(&q.filter, &|&c| tuple[c].clone(), scalar));
            (!sat.is_false()).then(|| Candidate {
                sat,
                tuple: cols.iter().map(|&c| tuple[c].clone()).collect(),
            })
        })
        .collect();
    Encoded { candidates }
}

/// Reads the present slots of every table back as a concrete database.
/// Duplicate slots collapse, since databases are sets.
pub fn decode_instance(inst: &SymInstance, m: &Model) -> Database {
    let mut db = Database::default();
    for (name, rows) in &inst.tables {
        let mut set: BTreeSet<Vec<Value>> = BTreeSet::new();
        for r in rows {
            if r.present.eval(m) {
                set.insert(r.values.iter().map(|v| v.eval(m)).collect());
            }
        }
        db.tables.insert(name.clone(), set.into_iter().collect());
    }
    db
}
