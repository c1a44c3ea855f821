//! Bounded information containment between views, and policy pruning.
//!
//! A query is allowed by a set of views when no two instances within the
//! bound satisfy the constraints, share session parameter values, agree on
//! every view and still differ on the query.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::policygen::{Policy, PolicyView};
use crate::relational::{eval_normal_form, Database, Interner, NormalFormQuery, Scalar, Value};
use crate::schema::{validate_instance, Constraint, Schema};
use crate::solver::{
    check, decode_instance, encode_instance, encode_nf, fresh_value, CheckOptions, Formula,
    SymValue, Verdict, Vocab,
};

/// Everything containment is decided against.
#[derive(Clone, Copy)]
pub struct Context<'a> {
    pub schema: &'a Schema,
    pub constraints: &'a [Constraint],
    pub strings: &'a Interner,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PruneConfig {
    pub bound: usize,
    pub range: (i64, i64),
    pub timeout: Duration,
    pub seed: u64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            bound: 2,
            range: (0, 7),
            timeout: Duration::from_secs(5),
            seed: 0,
        }
    }
}

/// Two instances that agree on every view but not on the query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    pub first: Database,
    pub second: Database,
    /// Shared values of the session (and any other) parameters.
    pub params: BTreeMap<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ContainmentVerdict {
    Allowed,
    NotAllowed(Box<Counterexample>),
    Unknown,
}

impl ContainmentVerdict {
    pub fn is_allowed(&self) -> bool {
        matches!(self, ContainmentVerdict::Allowed)
    }
}

fn params_of(q: &NormalFormQuery, out: &mut BTreeSet<Scalar>) {
    for s in q.filter.scalars() {
        if matches!(s, Scalar::Session(_) | Scalar::Request(_)) {
            out.insert(s.clone());
        }
    }
}

fn param_name(s: &Scalar) -> String {
    match s {
        Scalar::Request(n) => format!(":{n}"),
        s => s.to_string(),
    }
}

/// Tables that can influence `q`: its own, those of any view touching them,
/// and those linked by a constraint, closed under both.
fn closure<'v>(
    ctx: Context<'_>,
    q: &NormalFormQuery,
    views: &[&'v NormalFormQuery],
) -> (BTreeSet<String>, Vec<&'v NormalFormQuery>) {
    let mut tables: BTreeSet<String> = q.sources.iter().cloned().collect();
    loop {
        let before = tables.len();
        for v in views {
            if v.sources.iter().any(|s| tables.contains(s)) {
                tables.extend(v.sources.iter().cloned());
            }
        }
        for c in ctx.constraints {
            let ts = c.tables();
            if ts.iter().any(|t| tables.contains(*t)) {
                tables.extend(ts.into_iter().map(str::to_string));
            }
        }
        if tables.len() == before {
            break;
        }
    }
    let kept = views
        .iter()
        .copied()
        .filter(|v| v.sources.iter().any(|s| tables.contains(s)))
        .collect();
    (tables, kept)
}

/// Whether the counterexample really is one, by direct evaluation.
pub fn verify_counterexample(
    ctx: Context<'_>,
    q: &NormalFormQuery,
    views: &[NormalFormQuery],
    cx: &Counterexample,
) -> bool {
    let scalar = |s: &Scalar| -> Value {
        match s {
            Scalar::Session(_) | Scalar::Request(_) => {
                cx.params.get(&param_name(s)).copied().flatten()
            }
            lit => lit.literal_value(ctx.strings).unwrap_or(None),
        }
    };
    let ok =
        |db: &Database| validate_instance(db, ctx.constraints, ctx.schema, ctx.strings).is_ok();
    let eval = |v: &NormalFormQuery, db: &Database| eval_normal_form(v, ctx.schema, db, &scalar);
    ok(&cx.first)
        && ok(&cx.second)
        && views
            .iter()
            .all(|v| eval(v, &cx.first) == eval(v, &cx.second))
        && eval(q, &cx.first) != eval(q, &cx.second)
}

/// Bounded containment check of `q` against `views`.
pub fn is_allowed(
    ctx: Context<'_>,
    q: &NormalFormQuery,
    views: &[NormalFormQuery],
    config: &PruneConfig,
) -> ContainmentVerdict {
    if views.contains(q) {
        return ContainmentVerdict::Allowed;
    }
    let refs: Vec<&NormalFormQuery> = views.iter().collect();
    let (tables, kept) = closure(ctx, q, &refs);
    let mut vocab = Vocab::new(config.range);
    let a = encode_instance(
        &mut vocab,
        ctx.schema,
        ctx.constraints,
        ctx.strings,
        config.bound,
        &tables,
        "a.",
    );
    let b = encode_instance(
        &mut vocab,
        ctx.schema,
        ctx.constraints,
        ctx.strings,
        config.bound,
        &tables,
        "b.",
    );
    let mut names = BTreeSet::new();
    params_of(q, &mut names);
    for v in &kept {
        params_of(v, &mut names);
    }
    let params: BTreeMap<Scalar, SymValue> = names
        .into_iter()
        .map(|s| {
            let v = fresh_value(&mut vocab, &param_name(&s), false);
            (s, v)
        })
        .collect();
    let scalar = |s: &Scalar| match params.get(s) {
        Some(v) => v.clone(),
        None => SymValue::constant(s.literal_value(ctx.strings).unwrap_or(None)),
    };
    let mut hard = a.axioms.clone();
    hard.extend(b.axioms.iter().cloned());
    for v in &kept {
        let (ea, eb) = (
            encode_nf(v, &a, ctx.schema, &scalar),
            encode_nf(v, &b, ctx.schema, &scalar),
        );
        hard.push(ea.set_eq(&eb));
    }
    // by symmetry it suffices that the first instance has an extra tuple
    let (qa, qb) = (
        encode_nf(q, &a, ctx.schema, &scalar),
        encode_nf(q, &b, ctx.schema, &scalar),
    );
    hard.push(Formula::or_all(
        qa.candidates
            .iter()
            .map(|c| c.sat.and(&qb.contains(&c.tuple).not())),
    ));
    let opts = CheckOptions {
        timeout: Some(config.timeout),
        seed: config.seed,
        minimize_core: false,
    };
    match check::<usize>(&vocab, &hard, &[], &opts) {
        Verdict::Unsat(_) => ContainmentVerdict::Allowed,
        Verdict::Unknown => ContainmentVerdict::Unknown,
        Verdict::Sat(m) => {
            let cx = Counterexample {
                first: decode_instance(&a, &m),
                second: decode_instance(&b, &m),
                params: params
                    .iter()
                    .map(|(s, v)| (param_name(s), v.eval(&m)))
                    .collect(),
            };
            if verify_counterexample(ctx, q, views, &cx) {
                ContainmentVerdict::NotAllowed(Box::new(cx))
            } else {
                debug_assert!(false, "solver model is not a counterexample");
                ContainmentVerdict::Unknown
            }
        }
    }
}

/// Pruning order: more joins first, then longer text, then text.
fn prune_order(views: &[PolicyView]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..views.len()).collect();
    idx.sort_by(|&i, &j| {
        let (a, b) = (&views[i], &views[j]);
        b.query
            .sources
            .len()
            .cmp(&a.query.sources.len())
            .then(b.sql.len().cmp(&a.sql.len()))
            .then(a.sql.cmp(&b.sql))
    });
    idx
}

/// One greedy pass: a view is dropped when the remaining views allow it.
/// Pinned views and views with an unknown verdict stay.
pub fn prune(ctx: Context<'_>, policy: &Policy, config: &PruneConfig) -> Policy {
    let mut alive = vec![true; policy.views.len()];
    for i in prune_order(&policy.views) {
        if policy.views[i].pinned {
            continue;
        }
        let others: Vec<NormalFormQuery> = (0..policy.views.len())
            .filter(|&j| j != i && alive[j])
            .map(|j| policy.views[j].query.clone())
            .collect();
        if is_allowed(ctx, &policy.views[i].query, &others, config).is_allowed() {
            alive[i] = false;
        }
    }
    Policy {
        views: policy
            .views
            .iter()
            .zip(alive)
            .filter(|(_, a)| *a)
            .map(|(v, _)| v.clone())
            .collect(),
    }
}

/// Union without textual duplicates, first occurrence wins.
pub fn union(policies: &[Policy]) -> Policy {
    let mut seen = BTreeSet::new();
    let mut views = Vec::new();
    for p in policies {
        for v in &p.views {
            if seen.insert(v.sql.clone()) {
                views.push(v.clone());
            } else if v.pinned {
                if let Some(w) = views.iter_mut().find(|w: &&mut PolicyView| w.sql == v.sql) {
                    w.pinned = true;
                }
            }
        }
    }
    Policy { views }
}

pub fn merge_and_prune(ctx: Context<'_>, policies: &[Policy], config: &PruneConfig) -> Policy {
    prune(ctx, &union(policies), config)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BroadenReport {
    /// Per added view, the original views it makes redundant on its own.
    pub by_view: Vec<(String, Vec<String>)>,
    /// Removed views that no single added view accounts for.
    pub jointly: Vec<String>,
}

/// Adds `added` as pinned views and prunes again.
pub fn broaden(
    ctx: Context<'_>,
    policy: &Policy,
    added: &Policy,
    config: &PruneConfig,
) -> (Policy, BroadenReport) {
    let pinned = Policy {
        views: added
            .views
            .iter()
            .cloned()
            .map(|mut v| {
                v.pinned = true;
                v
            })
            .collect(),
    };
    let result = prune(ctx, &union(&[policy.clone(), pinned.clone()]), config);
    let kept: BTreeSet<&str> = result.views.iter().map(|v| v.sql.as_str()).collect();
    let removed: Vec<&PolicyView> = policy
        .views
        .iter()
        .filter(|v| !kept.contains(v.sql.as_str()))
        .collect();
    let mut report = BroadenReport::default();
    let mut explained = BTreeSet::new();
    for u in &pinned.views {
        let hits: Vec<String> = removed
            .iter()
            .filter(|v| {
                is_allowed(ctx, &v.query, std::slice::from_ref(&u.query), config).is_allowed()
            })
            .map(|v| v.sql.clone())
            .collect();
        explained.extend(hits.iter().cloned());
        report.by_view.push((u.sql.clone(), hits));
    }
    report.jointly = removed
        .iter()
        .map(|v| v.sql.clone())
        .filter(|s| !explained.contains(s))
        .collect();
    (result, report)
}
