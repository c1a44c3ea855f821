//! Brute-force evaluation over concrete databases.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ast::JoinKind;
use super::normal::{NormalFormQuery, Output, ResolvedQuery};
use super::predicate::Predicate;
use super::scalar::{Interner, Scalar, Value};
use crate::schema::Schema;

/// A concrete database: rows per table, values in schema column order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Database {
    pub tables: BTreeMap<String, Vec<Vec<Value>>>,
}

impl Database {
    pub fn rows(&self, table: &str) -> &[Vec<Value>] {
        self.tables.get(table).map_or(&[], Vec::as_slice)
    }

    pub fn insert(&mut self, table: &str, row: Vec<Value>) {
        self.tables.entry(table.to_string()).or_default().push(row);
    }

    pub fn row_count(&self) -> usize {
        self.tables.values().map(Vec::len).sum()
    }
}

/// Values for the non-column operands of a query.
#[derive(Clone, Debug)]
pub struct Env<'a> {
    pub strings: &'a Interner,
    pub session: BTreeMap<String, Value>,
    pub request: BTreeMap<String, Value>,
    /// Result row of each earlier non-empty query, by 1-based index.
    pub rows: BTreeMap<usize, Vec<Value>>,
    /// Placeholder arguments.
    pub args: Vec<Value>,
}

impl<'a> Env<'a> {
    pub fn new(strings: &'a Interner) -> Self {
        Env {
            strings,
            session: BTreeMap::new(),
            request: BTreeMap::new(),
            rows: BTreeMap::new(),
            args: Vec::new(),
        }
    }

    pub fn value(&self, s: &Scalar) -> Value {
        match s {
            Scalar::Int(v) => Some(*v),
            Scalar::Bool(b) => Some(i64::from(*b)),
            Scalar::Null => None,
            Scalar::Str(v) => Some(self.strings.id(v)),
            Scalar::Session(n) => self.session.get(n).copied().flatten(),
            Scalar::Request(n) => self.request.get(n).copied().flatten(),
            Scalar::RowCol { query, column } => self
                .rows
                .get(query)
                .and_then(|r| r.get(*column).copied())
                .flatten(),
            Scalar::Placeholder(n) => self.args.get(n - 1).copied().flatten(),
        }
    }
}

/// Calls `f` on every tuple of the cross product of `sources`.
fn for_each_tuple(sources: &[String], db: &Database, f: &mut impl FnMut(&[Value])) {
    let tables: Vec<&[Vec<Value>]> = sources.iter().map(|s| db.rows(s)).collect();
    if tables.iter().any(|t| t.is_empty()) {
        return;
    }
    let mut idx = vec![0usize; tables.len()];
    let mut tuple = Vec::new();
    loop {
        tuple.clear();
        for (t, &i) in tables.iter().zip(&idx) {
            tuple.extend_from_slice(&t[i]);
        }
        f(&tuple);
        let mut k = tables.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < tables[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

fn holds(filter: &Predicate<usize>, tuple: &[Value], scalar: &impl Fn(&Scalar) -> Value) -> bool {
    filter.eval(&|&c| tuple[c], scalar)
}

/// Result set of a normal-form query.
pub fn eval_normal_form(
    q: &NormalFormQuery,
    _schema: &Schema,
    db: &Database,
    scalar: &impl Fn(&Scalar) -> Value,
) -> BTreeSet<Vec<Value>> {
    let mut out = BTreeSet::new();
    for_each_tuple(&q.sources, db, &mut |t| {
        if holds(&q.filter, t, scalar) {
            out.insert(q.projection.iter().map(|&c| t[c]).collect());
        }
    });
    out
}

/// Result rows of any supported query, sorted and without duplicates.
/// `LIMIT 1` keeps the smallest row.
pub fn eval_resolved(
    q: &ResolvedQuery,
    schema: &Schema,
    db: &Database,
    scalar: &impl Fn(&Scalar) -> Value,
) -> Vec<Vec<Value>> {
    let from = &q.sources[..q.from_count];
    let mut tuples: Vec<Vec<Value>> = Vec::new();
    for_each_tuple(from, db, &mut |t| tuples.push(t.to_vec()));
    for (k, j) in q.joins.iter().enumerate() {
        let table = &q.sources[q.from_count + k];
        let arity = schema.arity(table);
        let mut next = Vec::new();
        for t in &tuples {
            let mut matched = false;
            for row in db.rows(table) {
                let mut ext = t.clone();
                ext.extend_from_slice(row);
                let (a, b) = (ext[j.on.0], ext[j.on.1]);
                if a.is_some() && a == b {
                    matched = true;
                    next.push(ext);
                }
            }
            if !matched && j.kind == JoinKind::Left {
                let mut ext = t.clone();
                ext.extend(std::iter::repeat(None).take(arity));
                next.push(ext);
            }
        }
        tuples = next;
    }
    let matching: BTreeSet<Vec<Value>> = tuples
        .into_iter()
        .filter(|t| holds(&q.filter, t, scalar))
        .collect();
    let mut rows: Vec<Vec<Value>> = match &q.output {
        Output::Count => vec![vec![Some(matching.len() as i64)]],
        Output::Columns(cols) => {
            let set: BTreeSet<Vec<Value>> = matching
                .iter()
                .map(|t| cols.iter().map(|&c| t[c]).collect())
                .collect();
            set.into_iter().collect()
        }
    };
    if q.limit_one {
        rows.truncate(1);
    }
    rows
}
