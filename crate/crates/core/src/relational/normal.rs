//! Name resolution and the `π σ ×` normal form.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ast::{ColumnName, JoinKind, QueryAst, QueryShape, SelectItem, SelectList};
use super::predicate::{Predicate, Term};
use super::scalar::Scalar;
use super::SqlError;
use crate::schema::Schema;

/// `π_projection σ_filter (sources[0] × sources[1] × ...)`, with columns
/// referred to by ordinal into the concatenated source columns.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NormalFormQuery {
    pub sources: Vec<String>,
    pub projection: Vec<usize>,
    pub filter: Predicate<usize>,
}

impl NormalFormQuery {
    /// The query returning exactly one empty tuple.
    pub fn unit() -> Self {
        NormalFormQuery {
            sources: Vec::new(),
            projection: Vec::new(),
            filter: Predicate::True,
        }
    }

    /// First ordinal of every source.
    pub fn offsets(&self, schema: &Schema) -> Vec<usize> {
        let mut acc = 0;
        self.sources
            .iter()
            .map(|s| {
                let start = acc;
                acc += schema.arity(s);
                start
            })
            .collect()
    }

    /// Arity of the underlying cross product.
    pub fn width(&self, schema: &Schema) -> usize {
        self.sources.iter().map(|s| schema.arity(s)).sum()
    }

    /// Source index and column index of an ordinal.
    pub fn locate(&self, schema: &Schema, ordinal: usize) -> (usize, usize) {
        let mut rest = ordinal;
        for (i, s) in self.sources.iter().enumerate() {
            let a = schema.arity(s);
            if rest < a {
                return (i, rest);
            }
            rest -= a;
        }
        panic!("ordinal {ordinal} out of range for {:?}", self.sources)
    }

    pub fn is_nullable(&self, schema: &Schema, ordinal: usize) -> bool {
        let (s, c) = self.locate(schema, ordinal);
        schema
            .table(&self.sources[s])
            .is_some_and(|t| t.columns[c].nullable)
    }

    /// Replaces each `?n` with `args[n-1]`.
    pub fn bind(mut self, args: &[Scalar]) -> Self {
        self.filter = self.filter.map_scalars(&mut |s| match s {
            Scalar::Placeholder(n) => Term::Scalar(args[n - 1].clone()),
            s => Term::Scalar(s),
        });
        self
    }

    /// Checks the ordinal invariants against the schema.
    pub fn validate(&self, schema: &Schema) -> Result<(), SqlError> {
        for s in &self.sources {
            if schema.table(s).is_none() {
                return Err(SqlError::UnknownTable(s.clone()));
            }
        }
        let w = self.width(schema);
        if let Some(o) = self
            .projection
            .iter()
            .chain(self.filter.columns())
            .find(|&&o| o >= w)
        {
            return Err(SqlError::Internal(format!(
                "ordinal {o} out of range (width {w})"
            )));
        }
        Ok(())
    }

    /// Plain rendering without cleanups; see `unparse_view` for views.
    pub fn to_sql(&self, schema: &Schema) -> String {
        super::unparse::render(self, schema, " ")
    }
}

/// Result columns of a resolved query.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Output {
    Columns(Vec<usize>),
    Count,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResolvedJoin {
    pub kind: JoinKind,
    /// Ordinals compared by the `ON` equality.
    pub on: (usize, usize),
}

/// A parsed query with every name resolved to ordinals. Sources are the
/// FROM tables followed by joined tables; `joins[k]` belongs to source
/// `from_count + k`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResolvedQuery {
    pub sources: Vec<String>,
    pub from_count: usize,
    pub joins: Vec<ResolvedJoin>,
    pub filter: Predicate<usize>,
    pub output: Output,
    pub limit_one: bool,
    /// Names of the result columns (`count` for `COUNT(*)`).
    pub column_names: Vec<String>,
    pub shape: QueryShape,
}

impl ResolvedQuery {
    pub fn result_arity(&self) -> usize {
        match &self.output {
            Output::Columns(c) => c.len(),
            Output::Count => 1,
        }
    }

    /// Index of the result column called `name`.
    pub fn result_column(&self, name: &str) -> Result<usize, SqlError> {
        let mut hits = self
            .column_names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.as_str() == name);
        match (hits.next(), hits.next()) {
            (Some((i, _)), None) => Ok(i),
            (None, _) => Err(SqlError::UnknownColumn(name.to_string())),
            (Some(_), Some(_)) => Err(SqlError::AmbiguousColumn(name.to_string())),
        }
    }

    fn as_psj(&self) -> NormalFormQuery {
        let mut parts: Vec<Predicate<usize>> = self
            .joins
            .iter()
            .map(|j| Predicate::eq(Term::Col(j.on.0), Term::Col(j.on.1)))
            .collect();
        parts.push(self.filter.clone());
        let filter = Predicate::from_conjuncts(parts);
        NormalFormQuery {
            sources: self.sources.clone(),
            projection: match &self.output {
                Output::Columns(c) => c.clone(),
                Output::Count => Vec::new(),
            },
            filter,
        }
    }
}

struct Scope<'a> {
    bindings: Vec<(String, &'a crate::schema::Table, usize)>,
}

impl<'a> Scope<'a> {
    fn lookup(&self, c: &ColumnName, visible: usize) -> Result<usize, SqlError> {
        let mut found = None;
        for (binding, table, offset) in &self.bindings[..visible] {
            if c.qualifier.as_deref().is_some_and(|q| q != binding) {
                continue;
            }
            if let Some(i) = table.column_index(&c.name) {
                if found.is_some() {
                    return Err(SqlError::AmbiguousColumn(c.to_string()));
                }
                found = Some(offset + i);
            }
        }
        if let Some(q) = &c.qualifier {
            if !self.bindings[..visible].iter().any(|(b, _, _)| b == q) {
                return Err(SqlError::UnknownTable(q.clone()));
            }
        }
        found.ok_or_else(|| SqlError::UnknownColumn(c.to_string()))
    }
}

/// Resolves table and column names of any supported query.
pub fn resolve(ast: &QueryAst, schema: &Schema) -> Result<ResolvedQuery, SqlError> {
    let mut scope = Scope {
        bindings: Vec::new(),
    };
    let mut sources = Vec::new();
    let mut offset = 0;
    for t in ast.table_refs() {
        let table = schema
            .table(&t.table)
            .ok_or_else(|| SqlError::UnknownTable(t.table.clone()))?;
        scope
            .bindings
            .push((t.binding().to_string(), table, offset));
        offset += table.arity();
        sources.push(t.table.clone());
    }
    let all = sources.len();
    let from_count = ast.from.len();
    let mut joins = Vec::new();
    for (k, j) in ast.joins.iter().enumerate() {
        let visible = from_count + k + 1;
        joins.push(ResolvedJoin {
            kind: j.kind,
            on: (
                scope.lookup(&j.on.0, visible)?,
                scope.lookup(&j.on.1, visible)?,
            ),
        });
    }
    let mut err = None;
    let filter = ast
        .filter
        .clone()
        .map_terms(&mut |c: ColumnName| match scope.lookup(&c, all) {
            Ok(o) => Term::Col(o),
            Err(e) => {
                err.get_or_insert(e);
                Term::Col(0)
            }
        });
    if let Some(e) = err {
        return Err(e);
    }
    let mut names = Vec::new();
    let output = match &ast.select {
        SelectList::Star => {
            for (_, t, _) in &scope.bindings {
                names.extend(t.columns.iter().map(|c| c.name.clone()));
            }
            Output::Columns((0..offset).collect())
        }
        SelectList::Items(items) if items.contains(&SelectItem::CountStar) => {
            if items.len() != 1 {
                return Err(SqlError::Unsupported(
                    "COUNT(*) alongside other columns".into(),
                ));
            }
            names.push("count".into());
            Output::Count
        }
        SelectList::Items(items) => {
            let mut cols = Vec::new();
            for item in items {
                match item {
                    SelectItem::Column(c) => {
                        cols.push(scope.lookup(c, all)?);
                        names.push(c.name.clone());
                    }
                    SelectItem::TableStar(b) => {
                        let (_, t, off) = scope
                            .bindings
                            .iter()
                            .find(|(name, _, _)| name == b)
                            .ok_or_else(|| SqlError::UnknownTable(b.clone()))?;
                        cols.extend(*off..off + t.arity());
                        names.extend(t.columns.iter().map(|c| c.name.clone()));
                    }
                    SelectItem::One => {
                        if items.len() != 1 {
                            return Err(SqlError::Unsupported(
                                "constant alongside other columns".into(),
                            ));
                        }
                    }
                    SelectItem::CountStar => unreachable!(),
                }
            }
            Output::Columns(cols)
        }
    };
    Ok(ResolvedQuery {
        sources,
        from_count,
        joins,
        filter,
        output,
        limit_one: ast.limit_one,
        column_names: names,
        shape: ast.shape(),
    })
}

/// Normal form of a plain project-select-join query.
pub fn to_normal_form(ast: &QueryAst, schema: &Schema) -> Result<NormalFormQuery, SqlError> {
    let shape = ast.shape();
    if shape != QueryShape::Psj {
        return Err(SqlError::NotPsj(shape));
    }
    Ok(resolve(ast, schema)?.as_psj())
}

/// One project-select-join form of a query, exact or approximate.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rewrite {
    pub query: NormalFormQuery,
    pub lossless: bool,
}

/// Rewrites any supported query into project-select-join form. Left joins
/// that cannot be turned into inner joins produce two queries: the
/// matching rows and the unmatched left rows.
pub fn rewrite_to_psj(ast: &QueryAst, schema: &Schema) -> Result<Vec<Rewrite>, SqlError> {
    rewrite_resolved(&resolve(ast, schema)?, schema)
}

pub fn rewrite_resolved(rq: &ResolvedQuery, schema: &Schema) -> Result<Vec<Rewrite>, SqlError> {
    match rq.shape {
        QueryShape::Psj | QueryShape::InnerJoin => Ok(vec![Rewrite {
            query: rq.as_psj(),
            lossless: true,
        }]),
        QueryShape::ExistenceLimit1 => Ok(vec![Rewrite {
            query: rq.as_psj(),
            lossless: matches!(&rq.output, Output::Columns(c) if c.is_empty()),
        }]),
        QueryShape::CountAggregate => {
            if rq.joins.iter().any(|j| j.kind == JoinKind::Left) {
                return Err(SqlError::Unsupported("COUNT(*) over a LEFT JOIN".into()));
            }
            let mut q = rq.as_psj();
            let offsets = q.offsets(schema);
            q.projection = rq
                .sources
                .iter()
                .zip(offsets)
                .flat_map(|(s, off)| {
                    let t = schema.table(s).expect("resolved table");
                    let key = t
                        .keys()
                        .into_iter()
                        .next()
                        .unwrap_or_else(|| (0..t.arity()).collect());
                    key.into_iter().map(move |k| off + k)
                })
                .collect();
            Ok(vec![Rewrite {
                query: q,
                lossless: false,
            }])
        }
        QueryShape::LeftJoin => rewrite_left_join(rq, schema),
    }
}

/// A left join is lossless as an inner join when the left column is a
/// non-null foreign key into the joined table's unique column.
fn left_join_is_total(rq: &ResolvedQuery, k: usize, schema: &Schema) -> bool {
    let probe = NormalFormQuery {
        sources: rq.sources.clone(),
        projection: Vec::new(),
        filter: Predicate::True,
    };
    let joined = rq.from_count + k;
    let (a, b) = rq.joins[k].on;
    let (sa, ca) = probe.locate(schema, a);
    let (sb, cb) = probe.locate(schema, b);
    let (left, right) = match (sa == joined, sb == joined) {
        (false, true) => ((sa, ca), (sb, cb)),
        (true, false) => ((sb, cb), (sa, ca)),
        _ => return false,
    };
    let lt = schema.table(&rq.sources[left.0]).expect("resolved table");
    let rt = schema.table(&rq.sources[right.0]).expect("resolved table");
    let lc = &lt.columns[left.1];
    // the left side must not itself come from an outer-joined table
    let left_outer =
        left.0 >= rq.from_count && rq.joins[left.0 - rq.from_count].kind == JoinKind::Left;
    !left_outer
        && !lc.nullable
        && rt.columns[right.1].unique
        && lc
            .foreign_key
            .as_ref()
            .is_some_and(|fk| fk.table == rt.name && fk.column == rt.columns[right.1].name)
}

fn rewrite_left_join(rq: &ResolvedQuery, schema: &Schema) -> Result<Vec<Rewrite>, SqlError> {
    let mut rq = rq.clone();
    for k in 0..rq.joins.len() {
        if rq.joins[k].kind == JoinKind::Left && left_join_is_total(&rq, k, schema) {
            rq.joins[k].kind = JoinKind::Inner;
        }
    }
    if rq.limit_one || rq.output == Output::Count {
        return Err(SqlError::Unsupported(
            "LEFT JOIN combined with COUNT or LIMIT".into(),
        ));
    }
    let dropped: Vec<bool> = (0..rq.sources.len())
        .map(|s| s >= rq.from_count && rq.joins[s - rq.from_count].kind == JoinKind::Left)
        .collect();
    let matched = rq.as_psj();
    if !dropped.iter().any(|&d| d) {
        return Ok(vec![Rewrite {
            query: matched,
            lossless: true,
        }]);
    }
    let unmatched = restrict_sources(&matched, &dropped, schema);
    Ok(vec![
        Rewrite {
            query: matched,
            lossless: false,
        },
        Rewrite {
            query: unmatched,
            lossless: false,
        },
    ])
}

/// Drops the marked sources along with every projected column and
/// conjunct that mentions them.
fn restrict_sources(q: &NormalFormQuery, drop: &[bool], schema: &Schema) -> NormalFormQuery {
    let mut remap = BTreeMap::new();
    let mut next = 0;
    let mut sources = Vec::new();
    for (i, s) in q.sources.iter().enumerate() {
        let off = q.offsets(schema)[i];
        if !drop[i] {
            for c in 0..schema.arity(s) {
                remap.insert(off + c, next + c);
            }
            next += schema.arity(s);
            sources.push(s.clone());
        }
    }
    let kept: Vec<Predicate<usize>> = q
        .filter
        .clone()
        .into_conjuncts()
        .into_iter()
        .filter(|p| p.columns().iter().all(|c| remap.contains_key(c)))
        .map(|p| p.map_cols(&mut |c| remap[&c]))
        .collect();
    NormalFormQuery {
        sources,
        projection: q
            .projection
            .iter()
            .filter_map(|c| remap.get(c).copied())
            .collect(),
        filter: Predicate::from_conjuncts(kept),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relational::parse_sql;

    fn schema() -> Schema {
        Schema::parse(
            "table roles { user_id int, course_id int, is_instructor bool, unique(user_id, course_id) }
             table grades { student_id int, course_id int fk courses.id, grade int nullable }
             table courses { id int unique, title string }
             table t { a int, b int }",
        )
        .unwrap()
    }

    fn nf(sql: &str) -> NormalFormQuery {
        to_normal_form(&parse_sql(sql).unwrap(), &schema()).unwrap()
    }

    #[test]
    fn star_expands_to_all_ordinals() {
        let q = nf("SELECT * FROM roles WHERE user_id = ? AND course_id = ?");
        assert_eq!(q.projection, vec![0, 1, 2]);
        assert_eq!(
            q.filter,
            Predicate::And(vec![
                Predicate::eq(Term::Col(0), Term::Scalar(Scalar::Placeholder(1))),
                Predicate::eq(Term::Col(1), Term::Scalar(Scalar::Placeholder(2))),
            ])
        );
    }

    #[test]
    fn self_product_ordinals() {
        let q = nf("SELECT t2.b, t1.a FROM t t1, t t2");
        assert_eq!(q.sources, vec!["t", "t"]);
        assert_eq!(q.projection, vec![3, 0]);
    }

    #[test]
    fn rejects_non_psj() {
        let ast = parse_sql("SELECT 1 FROM grades WHERE course_id = ? LIMIT 1").unwrap();
        assert!(matches!(
            to_normal_form(&ast, &schema()),
            Err(SqlError::NotPsj(_))
        ));
    }

    #[test]
    fn existence_query_rewrites_losslessly() {
        let ast = parse_sql("SELECT 1 FROM grades WHERE course_id = ? LIMIT 1").unwrap();
        let r = rewrite_to_psj(&ast, &schema()).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].lossless);
        assert!(r[0].query.projection.is_empty());
    }

    #[test]
    fn count_projects_key() {
        let ast = parse_sql("SELECT COUNT(*) FROM courses").unwrap();
        let r = rewrite_to_psj(&ast, &schema()).unwrap();
        assert_eq!(
            r,
            vec![Rewrite {
                query: nf("SELECT id FROM courses"),
                lossless: false
            }]
        );
    }

    #[test]
    fn inner_join_becomes_filter() {
        let ast = parse_sql("SELECT * FROM t INNER JOIN roles ON t.a = roles.user_id").unwrap();
        let r = rewrite_to_psj(&ast, &schema()).unwrap();
        assert_eq!(
            r[0].query,
            nf("SELECT * FROM t, roles WHERE t.a = roles.user_id")
        );
        assert!(r[0].lossless);
    }

    #[test]
    fn fk_left_join_is_inner() {
        let ast =
            parse_sql("SELECT * FROM grades LEFT JOIN courses ON grades.course_id = courses.id")
                .unwrap();
        let r = rewrite_to_psj(&ast, &schema()).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].lossless);
    }

    #[test]
    fn general_left_join_splits() {
        let ast =
            parse_sql("SELECT t.a, roles.course_id FROM t LEFT JOIN roles ON t.a = roles.user_id WHERE t.b = 1")
                .unwrap();
        let r = rewrite_to_psj(&ast, &schema()).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[1].query, nf("SELECT a FROM t WHERE b = 1"));
    }

    #[test]
    fn ambiguous_and_unknown_columns() {
        let s = schema();
        let amb = parse_sql("SELECT course_id FROM roles, grades").unwrap();
        assert!(matches!(
            resolve(&amb, &s),
            Err(SqlError::AmbiguousColumn(_))
        ));
        let unk = parse_sql("SELECT zzz FROM roles").unwrap();
        assert!(matches!(resolve(&unk, &s), Err(SqlError::UnknownColumn(_))));
    }
}
