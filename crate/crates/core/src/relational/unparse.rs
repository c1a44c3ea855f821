//! SQL output for normal-form queries and views.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::normal::NormalFormQuery;
use super::predicate::{write_predicate, CmpOp, Predicate, Term};
use crate::schema::Schema;

/// Binding name per source: the table name for its first occurrence,
/// `<table>_<n>` for the n-th.
fn bindings(q: &NormalFormQuery) -> Vec<String> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    q.sources
        .iter()
        .map(|s| {
            let n = seen.entry(s).or_insert(0);
            *n += 1;
            if *n == 1 {
                s.clone()
            } else {
                format!("{s}_{n}")
            }
        })
        .collect()
}

struct Namer<'a> {
    q: &'a NormalFormQuery,
    schema: &'a Schema,
    bindings: Vec<String>,
    qualify: bool,
}

impl Namer<'_> {
    fn column(&self, ordinal: usize) -> String {
        let (s, c) = self.q.locate(self.schema, ordinal);
        let name = &self
            .schema
            .table(&self.q.sources[s])
            .expect("known table")
            .columns[c]
            .name;
        if self.qualify {
            format!("{}.{name}", self.bindings[s])
        } else {
            name.clone()
        }
    }

    fn select_list(&self) -> String {
        let q = self.q;
        let width = q.width(self.schema);
        if q.projection.is_empty() {
            return "1".into();
        }
        if q.projection.iter().copied().eq(0..width) {
            return "*".into();
        }
        let offsets = q.offsets(self.schema);
        let mut items = Vec::new();
        let mut i = 0;
        while i < q.projection.len() {
            let whole = offsets.iter().enumerate().find(|(s, &off)| {
                let a = self.schema.arity(&q.sources[*s]);
                a > 0
                    && q.projection[i] == off
                    && q.projection.len() >= i + a
                    && q.projection[i..i + a].iter().copied().eq(off..off + a)
            });
            match whole {
                Some((s, _)) if self.qualify => {
                    items.push(format!("{}.*", self.bindings[s]));
                    i += self.schema.arity(&q.sources[s]);
                }
                _ => {
                    items.push(self.column(q.projection[i]));
                    i += 1;
                }
            }
        }
        items.join(", ")
    }
}

/// Renders `q` as `SELECT ... FROM ... WHERE ...`, joining conjuncts with
/// `sep` (`" "` gives one line, `"\n"` the multi-line view layout).
pub(crate) fn render(q: &NormalFormQuery, schema: &Schema, sep: &str) -> String {
    let namer = Namer {
        q,
        schema,
        bindings: bindings(q),
        qualify: q.sources.len() > 1,
    };
    let mut out = format!("SELECT {}", namer.select_list());
    if !q.sources.is_empty() {
        let from: Vec<String> = q
            .sources
            .iter()
            .zip(&namer.bindings)
            .map(|(s, b)| {
                if s == b {
                    s.clone()
                } else {
                    format!("{s} {b}")
                }
            })
            .collect();
        write!(out, " FROM {}", from.join(", ")).unwrap();
    }
    if q.filter != Predicate::True {
        let and = if sep == " " {
            " AND ".to_string()
        } else {
            format!("{sep}  AND ")
        };
        write!(out, "{sep}WHERE ").unwrap();
        write_predicate(
            &mut out,
            &q.filter,
            &|t: &Term<usize>, w: &mut String| match t {
                Term::Col(c) => w.write_str(&namer.column(*c)),
                Term::Scalar(s) => write!(w, "{s}"),
            },
            &and,
        )
        .unwrap();
    }
    out
}

fn is_eq_pair(p: &Predicate<usize>, a: usize, b: usize) -> bool {
    matches!(p, Predicate::Cmp(CmpOp::Eq, Term::Col(x), Term::Col(y))
        if (*x == a && *y == b) || (*x == b && *y == a))
}

/// Finds two copies of one table joined on all columns of a key.
fn find_key_self_join(q: &NormalFormQuery, schema: &Schema) -> Option<(usize, usize, Vec<usize>)> {
    let offsets = q.offsets(schema);
    let conjuncts = q.filter.conjuncts();
    for i in 0..q.sources.len() {
        for j in i + 1..q.sources.len() {
            if q.sources[i] != q.sources[j] {
                continue;
            }
            let table = schema.table(&q.sources[i])?;
            for key in table.keys() {
                let joined = key.iter().all(|&k| {
                    conjuncts
                        .iter()
                        .any(|p| is_eq_pair(p, offsets[i] + k, offsets[j] + k))
                });
                if joined {
                    return Some((i, j, key));
                }
            }
        }
    }
    None
}

/// Removes source `j` by redirecting its columns to source `i`.
fn merge_sources(
    q: NormalFormQuery,
    schema: &Schema,
    i: usize,
    j: usize,
    key: &[usize],
) -> NormalFormQuery {
    let offsets = q.offsets(schema);
    let arity = schema.arity(&q.sources[j]);
    let remap = |c: usize| {
        if c >= offsets[j] && c < offsets[j] + arity {
            offsets[i] + (c - offsets[j])
        } else if c >= offsets[j] + arity {
            c - arity
        } else {
            c
        }
    };
    let table = schema.table(&q.sources[i]).expect("known table");
    let mut parts = Vec::new();
    for p in q.filter.into_conjuncts() {
        if key
            .iter()
            .any(|&k| is_eq_pair(&p, offsets[i] + k, offsets[j] + k))
        {
            continue;
        }
        parts.push(p.map_cols(&mut |c| remap(c)));
    }
    // the removed equalities also asserted that the key is not null
    for &k in key {
        if table.columns[k].nullable {
            parts.push(Predicate::IsNull(Term::Col(offsets[i] + k)).not());
        }
    }
    let mut sources = q.sources;
    sources.remove(j);
    NormalFormQuery {
        sources,
        projection: q.projection.into_iter().map(remap).collect(),
        filter: Predicate::from_conjuncts(parts),
    }
}

/// Output cleanups for views: self-joins on a unique key collapse to one
/// copy, duplicate projected columns and conjuncts are dropped, and the
/// conjunction is kept flat.
pub fn cleanup_view(q: &NormalFormQuery, schema: &Schema) -> NormalFormQuery {
    let mut q = q.clone();
    while let Some((i, j, key)) = find_key_self_join(&q, schema) {
        q = merge_sources(q, schema, i, j, &key);
    }
    let mut projection = Vec::new();
    for c in q.projection {
        if !projection.contains(&c) {
            projection.push(c);
        }
    }
    let mut parts: Vec<Predicate<usize>> = Vec::new();
    for p in q.filter.into_conjuncts() {
        let trivial = matches!(&p, Predicate::Cmp(CmpOp::Eq, Term::Col(a), Term::Col(b))
            if a == b && !NormalFormQuery { sources: q.sources.clone(), projection: Vec::new(), filter: Predicate::True }
                .is_nullable(schema, *a));
        if !trivial && !parts.contains(&p) {
            parts.push(p);
        }
    }
    NormalFormQuery {
        sources: q.sources,
        projection,
        filter: Predicate::from_conjuncts(parts),
    }
}

/// SQL text of a view after the output cleanups, in the layout
///
/// ```text
/// SELECT * FROM roles, grades
/// WHERE roles.user_id = MyUserId
///   AND roles.is_instructor
/// ```
pub fn unparse_view(q: &NormalFormQuery, schema: &Schema) -> String {
    render(&cleanup_view(q, schema), schema, "\n")
}
