//! From transcripts to views: conditioned queries, their simplification,
//! view generation and request-parameter removal.

mod policy;
mod simplify;
mod view;

pub use policy::{parse_policy, render_policy, Policy, PolicyView};
pub use simplify::{simplify, SimplifyConfig, Steps};
pub use view::{generate_view, remove_request_params, ViewTrace};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::handlers::{Record, Transcript};
use crate::relational::{
    parse_sql, resolve, rewrite_resolved, NoColumn, NormalFormQuery, Output, Predicate, Scalar,
    SqlError,
};
use crate::schema::Schema;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("query `{sql}`: {source}")]
    Sql {
        sql: String,
        #[source]
        source: SqlError,
    },
    #[error("a later query is conditioned on `{0}`, which only has a multi-part rewrite")]
    SplitInCondition(String),
    #[error("conditioned query for `{sql}`: {message}")]
    Unsupported { sql: String, message: String },
    #[error("request parameter `{param}` in view `{view}` is not a single equality on a non-null column")]
    RequestParam { param: String, view: String },
    #[error("policy file line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Where a conditioned query or view was observed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub handler: String,
    pub input: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    /// Query `index` of the transcript returned a row. `query` is `None`
    /// for aggregates, whose rows are not symbolic.
    Query {
        index: usize,
        query: Option<NormalFormQuery>,
        params: Vec<Scalar>,
    },
    Branch {
        cond: Predicate<NoColumn>,
        outcome: bool,
    },
}

impl Condition {
    pub fn scalars(&self) -> Vec<&Scalar> {
        match self {
            Condition::Query { params, .. } => params.iter().collect(),
            Condition::Branch { cond, .. } => cond.scalars(),
        }
    }

    pub(crate) fn map_scalars(&self, f: &mut impl FnMut(&Scalar) -> Scalar) -> Condition {
        match self {
            Condition::Query {
                index,
                query,
                params,
            } => Condition::Query {
                index: *index,
                query: query.clone(),
                params: params.iter().map(|s| f(s)).collect(),
            },
            Condition::Branch { cond, outcome } => Condition::Branch {
                cond: cond
                    .clone()
                    .map_scalars(&mut |s| crate::relational::Term::Scalar(f(&s))),
                outcome: *outcome,
            },
        }
    }
}

/// A query together with the conditions under which it was issued.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionedQuery {
    pub sql: String,
    pub query: NormalFormQuery,
    pub params: Vec<Scalar>,
    pub conditions: Vec<Condition>,
    /// The rewrite into normal form lost information.
    pub approximate: bool,
    pub provenance: Provenance,
}

impl ConditionedQuery {
    /// Structural identity, ignoring provenance.
    pub fn key(&self) -> (&NormalFormQuery, &[Scalar], &[Condition]) {
        (&self.query, &self.params, &self.conditions)
    }
}

impl PartialEq for ConditionedQuery {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for ConditionedQuery {}

/// Drops structural duplicates, keeping the first occurrence.
pub fn dedup(cqs: Vec<ConditionedQuery>) -> Vec<ConditionedQuery> {
    let mut seen = BTreeSet::new();
    cqs.into_iter()
        .filter(|c| seen.insert((c.query.clone(), c.params.clone(), c.conditions.clone())))
        .collect()
}

struct Normalizer<'a> {
    schema: &'a Schema,
    cache: BTreeMap<String, (Vec<NormalFormQuery>, bool, bool)>,
}

impl Normalizer<'_> {
    /// Rewrites of `sql`, whether they are lossless, and whether the query
    /// is an aggregate.
    fn get(&mut self, sql: &str) -> Result<(Vec<NormalFormQuery>, bool, bool), PolicyError> {
        if let Some(v) = self.cache.get(sql) {
            return Ok(v.clone());
        }
        let err = |source| PolicyError::Sql {
            sql: sql.to_string(),
            source,
        };
        let rq = resolve(&parse_sql(sql).map_err(err)?, self.schema).map_err(err)?;
        let rewrites = rewrite_resolved(&rq, self.schema).map_err(err)?;
        let lossless = rewrites.iter().all(|r| r.lossless);
        let v = (
            rewrites.into_iter().map(|r| r.query).collect::<Vec<_>>(),
            lossless,
            rq.output == Output::Count,
        );
        self.cache.insert(sql.to_string(), v.clone());
        Ok(v)
    }
}

/// One conditioned query per query record of every transcript, with empty
/// query records dropped from the conditions. Queries whose rewrite splits
/// yield one conditioned query per part.
pub fn to_conditioned_queries(
    transcripts: &[Transcript],
    schema: &Schema,
) -> Result<Vec<ConditionedQuery>, PolicyError> {
    let mut norm = Normalizer {
        schema,
        cache: BTreeMap::new(),
    };
    let mut out = Vec::new();
    for t in transcripts {
        let provenance = Provenance {
            handler: t.meta.handler.clone(),
            input: t.meta.input.clone(),
        };
        let mut conditions = Vec::new();
        // a split query only matters once something is conditioned on it
        let mut split: Option<String> = None;
        for r in &t.records {
            match r {
                Record::Query {
                    i,
                    sql,
                    params,
                    empty,
                } => {
                    let (rewrites, lossless, count) = norm.get(sql)?;
                    if let Some(s) = split.take() {
                        return Err(PolicyError::SplitInCondition(s));
                    }
                    for q in &rewrites {
                        out.push(ConditionedQuery {
                            sql: sql.clone(),
                            query: q.clone(),
                            params: params.clone(),
                            conditions: conditions.clone(),
                            approximate: !lossless,
                            provenance: provenance.clone(),
                        });
                    }
                    if !empty {
                        let query = if count {
                            None
                        } else if rewrites.len() == 1 {
                            Some(rewrites[0].clone())
                        } else {
                            split = Some(sql.clone());
                            None
                        };
                        conditions.push(Condition::Query {
                            index: *i,
                            query,
                            params: params.clone(),
                        });
                    }
                }
                Record::Branch { cond, out } => conditions.push(Condition::Branch {
                    cond: cond.clone(),
                    outcome: *out,
                }),
            }
        }
    }
    Ok(dedup(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::handlers::{Outcome, TranscriptMeta};
    use crate::relational::Term;

    pub(crate) fn schema() -> Schema {
        Schema::parse(
            "table roles { user_id int, course_id int, is_instructor bool, unique(user_id, course_id) }
             table grades { student_id int, course_id int fk courses.id, grade int nullable }
             table courses { id int unique }",
        )
        .unwrap()
    }

    pub(crate) const Q1: &str = "SELECT * FROM roles WHERE user_id = ? AND course_id = ?";
    pub(crate) const Q2: &str = "SELECT * FROM grades WHERE course_id = ?";

    pub(crate) fn grade_sheet_transcript() -> Transcript {
        Transcript {
            meta: TranscriptMeta {
                handler: "view_grade_sheet".into(),
                input: "view_grade_sheet-0003".into(),
                config: None,
                outcome: Outcome::Returned,
                warnings: Vec::new(),
            },
            records: vec![
                Record::Query {
                    i: 1,
                    sql: Q1.into(),
                    params: vec![
                        Scalar::Session("MyUserId".into()),
                        Scalar::Request("CourseId".into()),
                    ],
                    empty: false,
                },
                Record::Branch {
                    cond: Predicate::Truthy(Term::Scalar(Scalar::RowCol {
                        query: 1,
                        column: 2,
                    })),
                    out: true,
                },
                Record::Query {
                    i: 2,
                    sql: Q2.into(),
                    params: vec![Scalar::RowCol {
                        query: 1,
                        column: 1,
                    }],
                    empty: false,
                },
            ],
            lines: vec![0; 3],
        }
    }

    #[test]
    fn grade_sheet_gives_two_conditioned_queries() {
        let cqs = to_conditioned_queries(&[grade_sheet_transcript()], &schema()).unwrap();
        assert_eq!(cqs.len(), 2);
        assert!(cqs[0].conditions.is_empty());
        assert_eq!(cqs[1].conditions.len(), 2);
        assert!(matches!(
            cqs[1].conditions[0],
            Condition::Query { index: 1, .. }
        ));
    }

    #[test]
    fn empty_queries_still_yield_their_own_cq() {
        let mut t = grade_sheet_transcript();
        t.records.truncate(1);
        if let Record::Query { empty, .. } = &mut t.records[0] {
            *empty = true;
        }
        let cqs = to_conditioned_queries(&[t.clone()], &schema()).unwrap();
        assert_eq!(cqs.len(), 1);
        t.records.clear();
        assert!(to_conditioned_queries(&[t], &schema()).unwrap().is_empty());
    }
}
