use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use super::{dedup, Condition, ConditionedQuery};
use crate::relational::{CmpOp, Interner, NoColumn, Predicate, Scalar, Term};
use crate::schema::{Constraint, Schema};
use crate::solver::{
    check, encode_instance, encode_nf, encode_predicate, fresh_value, CheckOptions, Formula,
    SymValue, Verdict, Vocab,
};

/// Which simplification steps run. All are on by default.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Steps {
    pub vacuous_branches: bool,
    pub propagate_equalities: bool,
    pub duplicate_queries: bool,
    pub vacuous_queries: bool,
    pub merge_branches: bool,
    pub subsumed: bool,
}

impl Default for Steps {
    fn default() -> Self {
        Steps {
            vacuous_branches: true,
            propagate_equalities: true,
            duplicate_queries: true,
            vacuous_queries: true,
            merge_branches: true,
            subsumed: true,
        }
    }
}

impl Steps {
    pub fn none() -> Self {
        Steps {
            vacuous_branches: false,
            propagate_equalities: false,
            duplicate_queries: false,
            vacuous_queries: false,
            merge_branches: false,
            subsumed: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimplifyConfig {
    pub steps: Steps,
    /// Rows per table in vacuity checks.
    pub bound: usize,
    pub range: (i64, i64),
    pub timeout: Duration,
}

impl Default for SimplifyConfig {
    fn default() -> Self {
        SimplifyConfig {
            steps: Steps::default(),
            bound: 2,
            range: (0, 7),
            timeout: Duration::from_secs(10),
        }
    }
}

/// What the vacuity checks are decided against.
struct Theory<'a> {
    schema: &'a Schema,
    constraints: &'a [Constraint],
    strings: &'a Interner,
    config: &'a SimplifyConfig,
}

/// Conditions of a conditioned query as formulas over one symbolic input.
/// Each query condition also carries its non-emptiness.
struct Encoded {
    vocab: Vocab,
    axioms: Vec<Formula>,
    conds: Vec<(Formula, Option<Formula>)>,
}

impl Theory<'_> {
    fn encode(&self, cq: &ConditionedQuery) -> Encoded {
        let mut vocab = Vocab::new(self.config.range);
        let tables: BTreeSet<String> = cq
            .conditions
            .iter()
            .filter_map(|c| match c {
                Condition::Query { query: Some(q), .. } => Some(q.sources.iter().cloned()),
                _ => None,
            })
            .flatten()
            .collect();
        let inst = encode_instance(
            &mut vocab,
            self.schema,
            self.constraints,
            self.strings,
            self.config.bound,
            &tables,
            "",
        );
        let mut session = BTreeMap::new();
        let mut request = BTreeMap::new();
        for c in &cq.conditions {
            for s in c.scalars() {
                match s {
                    Scalar::Session(n) if !session.contains_key(n) => {
                        let v = fresh_value(&mut vocab, n, false);
                        session.insert(n.clone(), v);
                    }
                    Scalar::Request(n) if !request.contains_key(n) => {
                        let v = fresh_value(&mut vocab, &format!(":{n}"), false);
                        request.insert(n.clone(), v);
                    }
                    _ => {}
                }
            }
        }
        let mut rows: BTreeMap<usize, Vec<SymValue>> = BTreeMap::new();
        let mut conds = Vec::new();
        for c in &cq.conditions {
            let value = |s: &Scalar, rows: &BTreeMap<usize, Vec<SymValue>>| match s {
                Scalar::Session(n) => session[n].clone(),
                Scalar::Request(n) => request[n].clone(),
                Scalar::RowCol { query, column } => rows
                    .get(query)
                    .and_then(|r| r.get(*column).cloned())
                    .unwrap_or_else(SymValue::null),
                lit => SymValue::constant(lit.literal_value(self.strings).unwrap_or(None)),
            };
            match c {
                Condition::Query {
                    index,
                    query,
                    params,
                } => match query {
                    Some(q) => {
                        let q = q.clone().bind(params);
                        let e = encode_nf(&q, &inst, self.schema, &|s| value(s, &rows));
                        let row: Vec<SymValue> = (0..q.projection.len())
                            .map(|j| fresh_value(&mut vocab, &format!("r{index}.{j}"), true))
                            .collect();
                        conds.push((e.contains(&row), Some(e.non_empty())));
                        rows.insert(*index, row);
                    }
                    None => conds.push((Formula::tt(), None)),
                },
                Condition::Branch { cond, outcome } => {
                    let f =
                        encode_predicate(cond, &|c: &NoColumn| match *c {}, &|s| value(s, &rows));
                    conds.push((if *outcome { f } else { f.not() }, None));
                }
            }
        }
        Encoded {
            vocab,
            axioms: inst.axioms,
            conds,
        }
    }

    /// True when `goal` follows from the axioms and the first `upto`
    /// conditions. Unknown counts as not implied.
    fn implied(&self, e: &Encoded, upto: usize, goal: &Formula) -> bool {
        let mut hard = e.axioms.clone();
        hard.extend(e.conds[..upto].iter().map(|(f, _)| f.clone()));
        hard.push(goal.not());
        let opts = CheckOptions {
            timeout: Some(self.config.timeout),
            minimize_core: false,
            ..CheckOptions::default()
        };
        matches!(
            check::<usize>(&e.vocab, &hard, &[], &opts),
            Verdict::Unsat(_)
        )
    }
}

fn remove_vacuous_branches(cq: &mut ConditionedQuery, th: &Theory<'_>) {
    if !cq
        .conditions
        .iter()
        .any(|c| matches!(c, Condition::Branch { .. }))
    {
        return;
    }
    let e = th.encode(cq);
    let keep: Vec<bool> = (0..cq.conditions.len())
        .map(|p| match &cq.conditions[p] {
            Condition::Branch { .. } => !th.implied(&e, p, &e.conds[p].0),
            _ => true,
        })
        .collect();
    let mut it = keep.into_iter();
    cq.conditions.retain(|_| it.next().unwrap());
}

fn references(cq: &ConditionedQuery, from: usize, index: usize) -> bool {
    let hit = |s: &Scalar| matches!(s, Scalar::RowCol { query, .. } if *query == index);
    cq.conditions[from..]
        .iter()
        .any(|c| c.scalars().into_iter().any(hit))
        || cq.params.iter().any(hit)
}

/// Drops query conditions whose non-emptiness is implied by what precedes
/// them and whose row is not used afterwards.
fn remove_vacuous_queries(cq: &mut ConditionedQuery, th: &Theory<'_>) -> bool {
    let candidates: Vec<usize> = (0..cq.conditions.len())
        .filter(|&p| match &cq.conditions[p] {
            Condition::Query { index, .. } => !references(cq, p + 1, *index),
            _ => false,
        })
        .collect();
    if candidates.is_empty() {
        return false;
    }
    let e = th.encode(cq);
    let drop: BTreeSet<usize> = candidates
        .into_iter()
        .filter(|&p| match &e.conds[p].1 {
            Some(ne) => th.implied(&e, p, ne),
            None => true,
        })
        .collect();
    let mut p = 0;
    cq.conditions.retain(|_| {
        p += 1;
        !drop.contains(&(p - 1))
    });
    !drop.is_empty()
}

#[derive(Default)]
struct UnionFind {
    parent: BTreeMap<Scalar, Scalar>,
}

impl UnionFind {
    fn find(&mut self, x: &Scalar) -> Scalar {
        match self.parent.get(x).cloned() {
            Some(p) if p != *x => {
                let r = self.find(&p);
                self.parent.insert(x.clone(), r.clone());
                r
            }
            _ => x.clone(),
        }
    }

    fn union(&mut self, a: &Scalar, b: &Scalar) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent.insert(ra, rb);
        }
    }
}

fn rank(s: &Scalar) -> (u8, Scalar) {
    let tier = match s {
        Scalar::Session(_) => 0,
        Scalar::RowCol { .. } => 2,
        Scalar::Request(_) => 3,
        Scalar::Placeholder(_) => 4,
        _ => 1,
    };
    (tier, s.clone())
}

fn is_eq_fact(c: &Condition) -> Option<(&Scalar, &Scalar)> {
    match c {
        Condition::Branch {
            cond: Predicate::Cmp(CmpOp::Eq, Term::Scalar(a), Term::Scalar(b)),
            outcome: true,
        } if *a != Scalar::Null && *b != Scalar::Null => Some((a, b)),
        _ => None,
    }
}

/// Rewrites every scalar to the preferred member of its equality class
/// that is already defined at that point: session parameters, then
/// literals, then earlier result columns, then request parameters.
fn propagate_equalities(cq: &mut ConditionedQuery) {
    let mut uf = UnionFind::default();
    let mut members: BTreeSet<Scalar> = BTreeSet::new();
    let mut link = |uf: &mut UnionFind, a: &Scalar, b: &Scalar| {
        members.insert(a.clone());
        members.insert(b.clone());
        uf.union(a, b);
    };
    for c in &cq.conditions {
        if let Some((a, b)) = is_eq_fact(c) {
            link(&mut uf, a, b);
        }
        let Condition::Query {
            index,
            query: Some(q),
            params,
        } = c
        else {
            continue;
        };
        let q = q.clone().bind(params);
        let positions = |col: usize| -> Vec<Scalar> {
            q.projection
                .iter()
                .enumerate()
                .filter(|&(_, &p)| p == col)
                .map(|(j, _)| Scalar::RowCol {
                    query: *index,
                    column: j,
                })
                .collect()
        };
        for part in q.filter.conjuncts() {
            match part {
                Predicate::Cmp(CmpOp::Eq, Term::Col(a), Term::Scalar(s))
                | Predicate::Cmp(CmpOp::Eq, Term::Scalar(s), Term::Col(a))
                    if *s != Scalar::Null =>
                {
                    for r in positions(*a) {
                        link(&mut uf, &r, s);
                    }
                }
                Predicate::Cmp(CmpOp::Eq, Term::Col(a), Term::Col(b)) => {
                    let mut all = positions(*a);
                    all.extend(positions(*b));
                    for w in all.windows(2) {
                        link(&mut uf, &w[0], &w[1]);
                    }
                }
                _ => {}
            }
        }
        let all = positions_all(&q.projection, *index);
        for group in all {
            for w in group.windows(2) {
                link(&mut uf, &w[0], &w[1]);
            }
        }
    }
    let mut classes: BTreeMap<Scalar, Vec<Scalar>> = BTreeMap::new();
    for m in &members {
        classes.entry(uf.find(m)).or_default().push(m.clone());
    }
    for v in classes.values_mut() {
        v.sort_by_key(rank);
    }
    let mut defined: BTreeSet<usize> = BTreeSet::new();
    let mut rep = |s: &Scalar, defined: &BTreeSet<usize>| -> Scalar {
        if !members.contains(s) {
            return s.clone();
        }
        let class = &classes[&uf.find(s)];
        class
            .iter()
            .find(|m| match m {
                Scalar::RowCol { query, .. } => defined.contains(query),
                _ => true,
            })
            .cloned()
            .unwrap_or_else(|| s.clone())
    };
    let mut out = Vec::with_capacity(cq.conditions.len());
    for c in &cq.conditions {
        if is_eq_fact(c).is_some() {
            out.push(c.clone());
        } else {
            out.push(c.map_scalars(&mut |s| rep(s, &defined)));
        }
        if let Condition::Query { index, .. } = c {
            defined.insert(*index);
        }
    }
    cq.conditions = out;
    cq.params = cq.params.iter().map(|s| rep(s, &defined)).collect();
}

/// Result positions projecting the same underlying column.
fn positions_all(projection: &[usize], index: usize) -> Vec<Vec<Scalar>> {
    let mut by_col: BTreeMap<usize, Vec<Scalar>> = BTreeMap::new();
    for (j, &c) in projection.iter().enumerate() {
        by_col.entry(c).or_default().push(Scalar::RowCol {
            query: index,
            column: j,
        });
    }
    by_col.into_values().filter(|v| v.len() > 1).collect()
}

fn rename_rows(c: &Condition, from: usize, to: usize) -> Condition {
    c.map_scalars(&mut |s| match s {
        Scalar::RowCol { query, column } if *query == from => Scalar::RowCol {
            query: to,
            column: *column,
        },
        s => s.clone(),
    })
}

/// Drops a query condition identical to an earlier one, pointing its
/// uses at the earlier row.
fn remove_duplicate_queries(cq: &mut ConditionedQuery) {
    let mut p = 0;
    while p < cq.conditions.len() {
        let dup = match &cq.conditions[p] {
            Condition::Query {
                index,
                query,
                params,
            } => cq.conditions[..p].iter().find_map(|c| match c {
                Condition::Query {
                    index: j,
                    query: q,
                    params: ps,
                } if q == query && ps == params => Some((*index, *j)),
                _ => None,
            }),
            _ => None,
        };
        match dup {
            Some((from, to)) => {
                cq.conditions.remove(p);
                for c in &mut cq.conditions[p..] {
                    *c = rename_rows(c, from, to);
                }
                let own = Condition::Query {
                    index: 0,
                    query: None,
                    params: std::mem::take(&mut cq.params),
                };
                if let Condition::Query { params, .. } = rename_rows(&own, from, to) {
                    cq.params = params;
                }
            }
            None => p += 1,
        }
    }
}

/// Position of the single branch whose outcome differs, when that is the
/// only difference.
fn merge_point(a: &ConditionedQuery, b: &ConditionedQuery) -> Option<usize> {
    if a.query != b.query || a.params != b.params || a.conditions.len() != b.conditions.len() {
        return None;
    }
    let diffs: Vec<usize> = (0..a.conditions.len())
        .filter(|&i| a.conditions[i] != b.conditions[i])
        .collect();
    let [p] = diffs[..] else { return None };
    match (&a.conditions[p], &b.conditions[p]) {
        (
            Condition::Branch {
                cond: x,
                outcome: ox,
            },
            Condition::Branch {
                cond: y,
                outcome: oy,
            },
        ) if x == y && ox != oy => Some(p),
        _ => None,
    }
}

fn merge_branches(cqs: &mut Vec<ConditionedQuery>) -> bool {
    for i in 0..cqs.len() {
        for j in i + 1..cqs.len() {
            if let Some(p) = merge_point(&cqs[i], &cqs[j]) {
                cqs[i].conditions.remove(p);
                cqs.remove(j);
                let merged = dedup(std::mem::take(cqs));
                *cqs = merged;
                return true;
            }
        }
    }
    false
}

/// Whether `b`'s conditions embed in order into `a`'s, under a consistent
/// renaming of query indices, with the same query and parameters.
fn subsumes(b: &ConditionedQuery, a: &ConditionedQuery) -> bool {
    if a.query != b.query || b.conditions.len() > a.conditions.len() {
        return false;
    }
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    let rename = |s: &Scalar, map: &BTreeMap<usize, usize>| match s {
        Scalar::RowCol { query, column } => Scalar::RowCol {
            query: map.get(query).copied().unwrap_or(usize::MAX),
            column: *column,
        },
        s => s.clone(),
    };
    let mut next = 0;
    for c in &b.conditions {
        let renamed = c.map_scalars(&mut |s| rename(s, &map));
        let found = (next..a.conditions.len()).find(|&k| match (&renamed, &a.conditions[k]) {
            (
                Condition::Query {
                    query: q1,
                    params: p1,
                    ..
                },
                Condition::Query {
                    query: q2,
                    params: p2,
                    ..
                },
            ) => q1 == q2 && p1 == p2,
            (x, y) => x == y,
        });
        let Some(k) = found else { return false };
        if let (Condition::Query { index: bi, .. }, Condition::Query { index: ai, .. }) =
            (c, &a.conditions[k])
        {
            map.insert(*bi, *ai);
        }
        next = k + 1;
    }
    let params: Vec<Scalar> = b.params.iter().map(|s| rename(s, &map)).collect();
    params == a.params
}

fn remove_subsumed(cqs: &mut Vec<ConditionedQuery>) {
    let mut removed = vec![false; cqs.len()];
    for i in 0..cqs.len() {
        removed[i] = (0..cqs.len()).any(|j| j != i && !removed[j] && subsumes(&cqs[j], &cqs[i]));
    }
    let mut it = removed.into_iter();
    cqs.retain(|_| !it.next().unwrap());
}

/// Simplifies a set of conditioned queries. Each query is first cleaned
/// on its own; then vacuous query conditions are dropped and branch pairs
/// merged until nothing changes; finally subsumed queries are removed.
pub fn simplify(
    cqs: Vec<ConditionedQuery>,
    schema: &Schema,
    constraints: &[Constraint],
    strings: &Interner,
    config: &SimplifyConfig,
) -> Vec<ConditionedQuery> {
    let th = Theory {
        schema,
        constraints,
        strings,
        config,
    };
    let steps = config.steps;
    let mut cqs: Vec<ConditionedQuery> = cqs
        .into_iter()
        .map(|mut cq| {
            if steps.vacuous_branches {
                remove_vacuous_branches(&mut cq, &th);
            }
            if steps.propagate_equalities {
                propagate_equalities(&mut cq);
            }
            if steps.duplicate_queries {
                remove_duplicate_queries(&mut cq);
            }
            cq
        })
        .collect();
    cqs = dedup(cqs);
    loop {
        let mut changed = false;
        if steps.vacuous_queries {
            for cq in cqs.iter_mut() {
                changed |= remove_vacuous_queries(cq, &th);
            }
            cqs = dedup(cqs);
        }
        if steps.merge_branches {
            while merge_branches(&mut cqs) {
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if steps.subsumed {
        remove_subsumed(&mut cqs);
    }
    cqs
}
