//! Brute-force oracles shared by the integration tests. Nothing here uses
//! the solver: instances are enumerated and queries evaluated directly.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use polext::policygen::{Condition, ConditionedQuery};
use polext::relational::{Interner, NoColumn, Term};
use polext::schema::{ColumnType, Constraint, ContainmentRhs};
use polext::{Database, NormalFormQuery, Predicate, Scalar, Schema, Value};
use proptest::prelude::{BoxedStrategy, Just, Strategy};

pub fn corpus(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../corpus")
        .join(name)
}

pub mod random;

pub type Params = BTreeMap<String, Value>;

/// Values for the non-column operands: parameters by name (request
/// parameters as `:name`) and the chosen row of each earlier query.
#[derive(Clone, Debug, Default)]
pub struct Bindings<'a> {
    pub params: Params,
    pub rows: BTreeMap<usize, Vec<Value>>,
    pub strings: Option<&'a Interner>,
}

fn scalar(s: &Scalar, b: &Bindings<'_>) -> Value {
    match s {
        Scalar::Int(v) => Some(*v),
        Scalar::Bool(x) => Some(i64::from(*x)),
        Scalar::Null => None,
        Scalar::Str(v) => Some(b.strings.expect("interner").id(v)),
        Scalar::Session(n) => b.params.get(n).copied().flatten(),
        Scalar::Request(n) => b.params.get(&format!(":{n}")).copied().flatten(),
        Scalar::RowCol { query, column } => b.rows[query][*column],
        Scalar::Placeholder(_) => panic!("unbound placeholder"),
    }
}

pub fn holds<C>(p: &Predicate<C>, col: &dyn Fn(&C) -> Value, b: &Bindings<'_>) -> bool {
    let term = |x: &Term<C>| match x {
        Term::Col(c) => col(c),
        Term::Scalar(s) => scalar(s, b),
    };
    match p {
        Predicate::True => true,
        Predicate::Cmp(op, x, y) => match (term(x), term(y)) {
            (Some(x), Some(y)) => op.holds(x.cmp(&y)),
            _ => false,
        },
        Predicate::IsNull(x) => term(x).is_none(),
        Predicate::Truthy(x) => matches!(term(x), Some(v) if v != 0),
        Predicate::Not(q) => !holds(q, col, b),
        Predicate::And(qs) => qs.iter().all(|q| holds(q, col, b)),
    }
}

/// Set-semantics evaluation of a normal-form query by nested loops.
pub fn eval_with(q: &NormalFormQuery, db: &Database, b: &Bindings<'_>) -> BTreeSet<Vec<Value>> {
    let mut tuples: Vec<Vec<Value>> = vec![Vec::new()];
    for s in &q.sources {
        let rows = db.tables.get(s).cloned().unwrap_or_default();
        tuples = tuples
            .into_iter()
            .flat_map(|t| {
                rows.iter().map(move |r| {
                    let mut t = t.clone();
                    t.extend(r.iter().copied());
                    t
                })
            })
            .collect();
    }
    tuples
        .into_iter()
        .filter(|t| holds(&q.filter, &|c: &usize| t[*c], b))
        .map(|t| q.projection.iter().map(|&c| t[c]).collect())
        .collect()
}

pub fn eval(
    q: &NormalFormQuery,
    db: &Database,
    params: &Params,
    strings: &Interner,
) -> BTreeSet<Vec<Value>> {
    let b = Bindings {
        params: params.clone(),
        rows: BTreeMap::new(),
        strings: Some(strings),
    };
    eval_with(q, db, &b)
}

/// Rows of a conditioned query's view computed straight from its
/// definition: every combination of one row per condition query such that
/// every branch takes its recorded outcome, concatenated with a row of the
/// final query.
pub fn conditioned_rows(
    cq: &ConditionedQuery,
    db: &Database,
    params: &Params,
    strings: &Interner,
) -> BTreeSet<Vec<Value>> {
    fn go(
        cq: &ConditionedQuery,
        k: usize,
        db: &Database,
        b: &mut Bindings<'_>,
        prefix: &mut Vec<Value>,
        out: &mut BTreeSet<Vec<Value>>,
    ) {
        match cq.conditions.get(k) {
            None => {
                let q = cq.query.clone().bind(&cq.params);
                for r in eval_with(&q, db, b) {
                    let mut t = prefix.clone();
                    t.extend(r);
                    out.insert(t);
                }
            }
            Some(Condition::Branch { cond, outcome }) => {
                if holds(cond, &|c: &NoColumn| match *c {}, b) == *outcome {
                    go(cq, k + 1, db, b, prefix, out);
                }
            }
            Some(Condition::Query {
                index,
                query,
                params,
            }) => {
                let q = query.clone().expect("no aggregate conditions").bind(params);
                for r in eval_with(&q, db, b) {
                    let len = prefix.len();
                    prefix.extend(r.iter().copied());
                    b.rows.insert(*index, r);
                    go(cq, k + 1, db, b, prefix, out);
                    b.rows.remove(index);
                    prefix.truncate(len);
                }
            }
        }
    }
    let mut b = Bindings {
        params: params.clone(),
        rows: BTreeMap::new(),
        strings: Some(strings),
    };
    let mut out = BTreeSet::new();
    go(cq, 0, db, &mut b, &mut Vec::new(), &mut out);
    out
}

pub fn satisfies(db: &Database, constraints: &[Constraint], strings: &Interner) -> bool {
    let none = Params::new();
    let lits = Bindings {
        strings: Some(strings),
        ..Bindings::default()
    };
    constraints.iter().all(|c| match c {
        Constraint::Unique { table, columns } => {
            let rows = db.tables.get(table).cloned().unwrap_or_default();
            let mut seen = BTreeSet::new();
            rows.iter().all(|r| {
                let key: Vec<Value> = columns.iter().map(|&i| r[i]).collect();
                key.iter().any(Option::is_none) || seen.insert(key)
            })
        }
        Constraint::Containment { lhs, rhs } => {
            let l = eval(lhs, db, &none, strings);
            let r: BTreeSet<Vec<Value>> = match rhs {
                ContainmentRhs::Query(q) => eval(q, db, &none, strings),
                ContainmentRhs::Rows(rows) => rows
                    .iter()
                    .map(|r| r.iter().map(|s| scalar(s, &lits)).collect())
                    .collect(),
            };
            l.is_subset(&r)
        }
    })
}

/// All values a column can take: bools are 0/1, everything else ranges
/// over `domain`; nullable columns add NULL.
pub fn column_values(ty: ColumnType, nullable: bool, domain: &[i64]) -> Vec<Value> {
    let mut out: Vec<Value> = match ty {
        ColumnType::Bool => vec![Some(0), Some(1)],
        _ => domain.iter().map(|&v| Some(v)).collect(),
    };
    if nullable {
        out.push(None);
    }
    out
}

fn tuples(cols: &[Vec<Value>]) -> Vec<Vec<Value>> {
    let mut out = vec![Vec::new()];
    for vals in cols {
        out = out
            .into_iter()
            .flat_map(|t| {
                vals.iter().map(move |v| {
                    let mut t = t.clone();
                    t.push(*v);
                    t
                })
            })
            .collect();
    }
    out
}

/// Sets of at most `bound` distinct elements of `items`, in sorted order.
fn subsets<T: Clone>(items: &[T], bound: usize) -> Vec<Vec<T>> {
    let mut out = vec![Vec::new()];
    let mut frontier: Vec<(usize, Vec<T>)> = vec![(0, Vec::new())];
    for _ in 0..bound {
        let mut next = Vec::new();
        for (start, set) in &frontier {
            for i in *start..items.len() {
                let mut s = set.clone();
                s.push(items[i].clone());
                out.push(s.clone());
                next.push((i + 1, s));
            }
        }
        frontier = next;
    }
    out
}

/// Every constraint-satisfying instance of `tables` with at most `bound`
/// rows per table.
pub fn instances(
    schema: &Schema,
    tables: &[&str],
    bound: usize,
    domain: &[i64],
    constraints: &[Constraint],
    strings: &Interner,
) -> Vec<Database> {
    let mut dbs = vec![Database::default()];
    for name in tables {
        let t = schema.table(name).expect("table");
        let cols: Vec<Vec<Value>> = t
            .columns
            .iter()
            .map(|c| column_values(c.ty, c.nullable, domain))
            .collect();
        let choices = subsets(&tuples(&cols), bound);
        dbs = dbs
            .into_iter()
            .flat_map(|db| {
                choices.iter().map(move |rows| {
                    let mut db = db.clone();
                    db.tables.insert(name.to_string(), rows.clone());
                    db
                })
            })
            .collect();
    }
    let relevant: Vec<Constraint> = constraints
        .iter()
        .filter(|c| c.tables().iter().all(|t| tables.contains(t)))
        .cloned()
        .collect();
    dbs.into_iter()
        .filter(|db| satisfies(db, &relevant, strings))
        .collect()
}

fn param_names(qs: &[&NormalFormQuery]) -> Vec<String> {
    let mut out = BTreeSet::new();
    for q in qs {
        for s in q.filter.scalars() {
            match s {
                Scalar::Session(n) => {
                    out.insert(n.clone());
                }
                Scalar::Request(n) => {
                    out.insert(format!(":{n}"));
                }
                _ => {}
            }
        }
    }
    out.into_iter().collect()
}

pub fn param_assignments(names: &[String], domain: &[i64]) -> Vec<Params> {
    let mut out = vec![Params::new()];
    for n in names {
        out = out
            .into_iter()
            .flat_map(|p| {
                domain.iter().map(move |&v| {
                    let mut p = p.clone();
                    p.insert(n.clone(), Some(v));
                    p
                })
            })
            .collect();
    }
    out
}

/// A pair of instances agreeing on every view but not on `q`, if one exists
/// among `dbs`, for some shared parameter assignment.
pub fn witness_pair(
    q: &NormalFormQuery,
    views: &[NormalFormQuery],
    dbs: &[Database],
    domain: &[i64],
    strings: &Interner,
) -> Option<(Database, Database, Params)> {
    let mut all: Vec<&NormalFormQuery> = views.iter().collect();
    all.push(q);
    let names = param_names(&all);
    for params in param_assignments(&names, domain) {
        let mut seen: HashMap<Vec<BTreeSet<Vec<Value>>>, (BTreeSet<Vec<Value>>, usize)> =
            HashMap::new();
        for (i, db) in dbs.iter().enumerate() {
            let key: Vec<_> = views
                .iter()
                .map(|v| eval(v, db, &params, strings))
                .collect();
            let out = eval(q, db, &params, strings);
            match seen.get(&key) {
                Some((prev, j)) if *prev != out => {
                    return Some((dbs[*j].clone(), db.clone(), params))
                }
                Some(_) => {}
                None => {
                    seen.insert(key, (out, i));
                }
            }
        }
    }
    None
}

/// Whether the views determine `q` over the enumerated instances.
pub fn determined(
    q: &NormalFormQuery,
    views: &[NormalFormQuery],
    dbs: &[Database],
    domain: &[i64],
    strings: &Interner,
) -> bool {
    witness_pair(q, views, dbs, domain, strings).is_none()
}

/// Tables mentioned by any of the queries, plus tables linked to them by
/// constraints, in schema order.
pub fn tables_of<'s>(
    schema: &'s Schema,
    qs: &[&NormalFormQuery],
    constraints: &[Constraint],
) -> Vec<&'s str> {
    let mut set: BTreeSet<String> = qs.iter().flat_map(|q| q.sources.iter().cloned()).collect();
    loop {
        let before = set.len();
        for c in constraints {
            let ts = c.tables();
            if ts.iter().any(|t| set.contains(*t)) {
                set.extend(ts.iter().map(|t| t.to_string()));
            }
        }
        if set.len() == before {
            break;
        }
    }
    schema
        .tables
        .iter()
        .map(|t| t.name.as_str())
        .filter(|n| set.contains(*n))
        .collect()
}

/// Random databases of `schema` with at most `bound` rows per table and
/// values from `domain`. Constraints are not enforced.
pub fn database(schema: &Schema, bound: usize, domain: &[i64]) -> impl Strategy<Value = Database> {
    let tables: Vec<_> = schema
        .tables
        .iter()
        .map(|t| {
            let row: Vec<BoxedStrategy<Value>> = t
                .columns
                .iter()
                .map(|c| proptest::sample::select(column_values(c.ty, c.nullable, domain)).boxed())
                .collect();
            (
                Just(t.name.clone()),
                proptest::collection::vec(row, 0..=bound),
            )
        })
        .collect();
    tables.prop_map(|ts| {
        let mut db = Database::default();
        for (name, mut rows) in ts {
            rows.sort();
            rows.dedup();
            db.tables.insert(name, rows);
        }
        db
    })
}
