use std::collections::BTreeMap;

use super::{Condition, ConditionedQuery, PolicyError};
use crate::relational::{CmpOp, NormalFormQuery, Predicate, Scalar, Term};
use crate::schema::Schema;

/// The accumulated query after each condition, for inspection.
pub type ViewTrace = Vec<NormalFormQuery>;

struct Builder<'a> {
    schema: &'a Schema,
    a: NormalFormQuery,
    /// (query index, result column) to ordinal of `a`.
    m: BTreeMap<(usize, usize), usize>,
    sql: &'a str,
}

impl Builder<'_> {
    fn substitute<C>(
        &self,
        p: Predicate<C>,
        shift: &impl Fn(C) -> usize,
    ) -> Result<Predicate<usize>, PolicyError> {
        let mut missing = None;
        let p = p
            .map_terms(&mut |c| Term::Col(shift(c)))
            .map_scalars(&mut |s| match s {
                Scalar::RowCol { query, column } => match self.m.get(&(query, column)) {
                    Some(&o) => Term::Col(o),
                    None => {
                        missing = Some((query, column));
                        Term::Scalar(s)
                    }
                },
                s => Term::Scalar(s),
            });
        match missing {
            Some((q, c)) => Err(PolicyError::Unsupported {
                sql: self.sql.to_string(),
                message: format!(
                    "condition refers to column {c} of query {q}, which has no symbolic result"
                ),
            }),
            None => Ok(p),
        }
    }

    fn branch(
        &mut self,
        cond: &Predicate<crate::relational::NoColumn>,
        outcome: bool,
    ) -> Result<(), PolicyError> {
        let theta = self.substitute(cond.clone().widen::<usize>(), &|c| c)?;
        let theta = if outcome { theta } else { theta.not() };
        let filter = std::mem::take(&mut self.a.filter);
        self.a.filter = filter.and(theta);
        Ok(())
    }

    /// Conjoins `q` (with `params` bound): cross product, shifted filter,
    /// appended projection. Returns the ordinals of the new result columns.
    fn conjoin(
        &mut self,
        q: &NormalFormQuery,
        params: &[Scalar],
    ) -> Result<Vec<usize>, PolicyError> {
        let q = q.clone().bind(params);
        let n = self.a.width(self.schema);
        let theta = self.substitute(q.filter, &|c| c + n)?;
        self.a.sources.extend(q.sources);
        let filter = std::mem::take(&mut self.a.filter);
        self.a.filter = filter.and(theta);
        let cols: Vec<usize> = q.projection.iter().map(|&c| c + n).collect();
        self.a.projection.extend(cols.iter().copied());
        Ok(cols)
    }
}

/// Builds the view of `cq`: starting from the one-empty-tuple query, apply
/// each branch as a selection and conjoin each query, then conjoin the
/// query itself.
pub fn generate_view(
    cq: &ConditionedQuery,
    schema: &Schema,
) -> Result<(NormalFormQuery, ViewTrace), PolicyError> {
    let mut b = Builder {
        schema,
        a: NormalFormQuery::unit(),
        m: BTreeMap::new(),
        sql: &cq.sql,
    };
    let mut trace = Vec::new();
    for c in &cq.conditions {
        match c {
            Condition::Branch { cond, outcome } => b.branch(cond, *outcome)?,
            Condition::Query {
                index,
                query,
                params,
            } => {
                if let Some(q) = query {
                    let cols = b.conjoin(q, params)?;
                    for (i, o) in cols.into_iter().enumerate() {
                        b.m.insert((*index, i), o);
                    }
                }
            }
        }
        trace.push(b.a.clone());
    }
    b.conjoin(&cq.query, &cq.params)?;
    Ok((b.a, trace))
}

fn find(parent: &mut BTreeMap<usize, usize>, x: usize) -> usize {
    let p = *parent.get(&x).unwrap_or(&x);
    if p == x {
        return x;
    }
    let r = find(parent, p);
    parent.insert(x, r);
    r
}

/// Eliminates request parameters occurring only as top-level `col = X`
/// conjuncts with at least one `col` non-null: further occurrences become
/// column equalities, the remaining equality is dropped and `col` projected
/// instead, unless a projected column is already equated with it.
pub fn remove_request_params(
    v: &NormalFormQuery,
    schema: &Schema,
) -> Result<NormalFormQuery, PolicyError> {
    let mut v = v.clone();
    let mut params: Vec<String> = v
        .filter
        .scalars()
        .into_iter()
        .filter_map(|s| match s {
            Scalar::Request(n) => Some(n.clone()),
            _ => None,
        })
        .collect();
    params.sort();
    params.dedup();
    for x in params {
        let fail = |v: &NormalFormQuery| PolicyError::RequestParam {
            param: x.clone(),
            view: v.to_sql(schema),
        };
        let target = Scalar::Request(x.clone());
        let uses = v
            .filter
            .scalars()
            .into_iter()
            .filter(|s| **s == target)
            .count();
        let mut parts = std::mem::take(&mut v.filter).into_conjuncts();
        let eq_col = |p: &Predicate<usize>| match p {
            Predicate::Cmp(CmpOp::Eq, Term::Col(c), Term::Scalar(s))
            | Predicate::Cmp(CmpOp::Eq, Term::Scalar(s), Term::Col(c))
                if *s == target =>
            {
                Some(*c)
            }
            _ => None,
        };
        let sites: Vec<(usize, usize)> = parts
            .iter()
            .enumerate()
            .filter_map(|(i, p)| eq_col(p).map(|c| (i, c)))
            .collect();
        let anchor = sites
            .iter()
            .copied()
            .find(|&(_, c)| !v.is_nullable(schema, c));
        let Some((i, j)) = anchor.filter(|_| sites.len() == uses) else {
            v.filter = Predicate::from_conjuncts(parts);
            return Err(fail(&v));
        };
        // `c = X AND j = X` says the same as `c = j AND j = X`.
        for &(k, c) in &sites {
            if k != i {
                parts[k] = Predicate::eq(Term::Col(c), Term::Col(j));
            }
        }
        parts.remove(i);
        let mut parent = BTreeMap::new();
        for p in &parts {
            if let Predicate::Cmp(CmpOp::Eq, Term::Col(a), Term::Col(b)) = p {
                let (ra, rb) = (find(&mut parent, *a), find(&mut parent, *b));
                parent.insert(ra, rb);
            }
        }
        let rj = find(&mut parent, j);
        let covered = v.projection.iter().any(|&k| find(&mut parent, k) == rj);
        if !covered {
            v.projection.push(j);
        }
        v.filter = Predicate::from_conjuncts(parts);
    }
    Ok(v)
}
