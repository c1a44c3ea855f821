use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::transcript::{Outcome, Record, Transcript, TranscriptMeta};
use super::{Arg, Cond, Handler, HandlerError, Stmt, StmtKind};
use crate::relational::{
    eval_resolved, parse_sql, resolve, Database, Env, Interner, NoColumn, Output, Predicate,
    ResolvedQuery, Scalar, Term, Value,
};
use crate::schema::Schema;

/// Everything a run depends on: table contents and parameter values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcreteInput {
    pub id: String,
    pub db: Database,
    pub session: BTreeMap<String, Value>,
    pub request: BTreeMap<String, Value>,
}

/// A handler whose queries have been parsed and checked against a schema.
#[derive(Clone, Debug)]
pub struct CompiledHandler {
    pub handler: Handler,
    pub queries: HashMap<String, ResolvedQuery>,
}

impl CompiledHandler {
    pub fn name(&self) -> &str {
        &self.handler.decl.name
    }

    /// Literal operands in queries and conditions, for interning and for
    /// sizing the value range.
    pub fn literals(&self) -> Vec<Scalar> {
        fn arg(a: &Arg, out: &mut Vec<Scalar>) {
            if let Arg::Literal(s) = a {
                out.push(s.clone());
            }
        }
        fn cond(c: &Cond, out: &mut Vec<Scalar>) {
            match c {
                Cond::Eq(a, b) => {
                    arg(a, out);
                    arg(b, out);
                }
                Cond::Truthy(a) | Cond::IsNull(a) => arg(a, out),
                Cond::Not(c) => cond(c, out),
                Cond::NonEmpty(_) => {}
            }
        }
        fn block(stmts: &[Stmt], out: &mut Vec<Scalar>) {
            for s in stmts {
                match &s.kind {
                    StmtKind::Let { args, .. } => args.iter().for_each(|a| arg(a, out)),
                    StmtKind::If {
                        cond: c,
                        then,
                        otherwise,
                    } => {
                        cond(c, out);
                        block(then, out);
                        block(otherwise, out);
                    }
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        block(&self.handler.body, &mut out);
        let mut sqls: Vec<&String> = self.queries.keys().collect();
        sqls.sort();
        for sql in sqls {
            out.extend(
                self.queries[sql]
                    .filter
                    .scalars()
                    .into_iter()
                    .filter(|s| s.is_literal())
                    .cloned(),
            );
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ExecError {
    /// A query returned more than one row. `partial` ends with that query.
    #[error("query {query} returned {rows} rows")]
    MultiRow {
        query: usize,
        rows: usize,
        partial: Transcript,
    },
    #[error("missing value for parameter `{0}`")]
    MissingParam(String),
}

/// Parses every query of `handler`, checks argument counts and field
/// names, and caches the resolved queries.
pub fn compile(handler: Handler, schema: &Schema) -> Result<CompiledHandler, HandlerError> {
    let mut queries = HashMap::new();
    let mut scope = BTreeMap::new();
    check_block(&handler.body, schema, &mut queries, &mut scope)?;
    Ok(CompiledHandler { handler, queries })
}

fn check_arg(
    a: &Arg,
    line: usize,
    scope: &BTreeMap<String, String>,
    queries: &HashMap<String, ResolvedQuery>,
) -> Result<(), HandlerError> {
    if let Arg::Field { binding, column } = a {
        let rq = &queries[&scope[binding]];
        rq.result_column(column)
            .map_err(|source| HandlerError::Sql { line, source })?;
    }
    Ok(())
}

fn check_cond(
    c: &Cond,
    line: usize,
    scope: &BTreeMap<String, String>,
    queries: &HashMap<String, ResolvedQuery>,
) -> Result<(), HandlerError> {
    match c {
        Cond::Eq(a, b) => {
            check_arg(a, line, scope, queries)?;
            check_arg(b, line, scope, queries)
        }
        Cond::Truthy(a) | Cond::IsNull(a) => check_arg(a, line, scope, queries),
        Cond::Not(inner) => check_cond(inner, line, scope, queries),
        Cond::NonEmpty(_) => Ok(()),
    }
}

fn check_block(
    body: &[Stmt],
    schema: &Schema,
    queries: &mut HashMap<String, ResolvedQuery>,
    scope: &mut BTreeMap<String, String>,
) -> Result<(), HandlerError> {
    let saved = scope.clone();
    for s in body {
        let line = s.line;
        match &s.kind {
            StmtKind::Let { name, sql, args } => {
                for a in args {
                    check_arg(a, line, scope, queries)?;
                }
                if !queries.contains_key(sql) {
                    let ast =
                        parse_sql(sql).map_err(|source| HandlerError::Sql { line, source })?;
                    let expected = ast.placeholder_count();
                    if expected != args.len() {
                        return Err(HandlerError::ArgumentCount {
                            line,
                            expected,
                            found: args.len(),
                        });
                    }
                    let rq = resolve(&ast, schema)
                        .map_err(|source| HandlerError::Sql { line, source })?;
                    queries.insert(sql.clone(), rq);
                } else {
                    let expected = parse_sql(sql).map(|a| a.placeholder_count()).unwrap_or(0);
                    if expected != args.len() {
                        return Err(HandlerError::ArgumentCount {
                            line,
                            expected,
                            found: args.len(),
                        });
                    }
                }
                scope.insert(name.clone(), sql.clone());
            }
            StmtKind::If {
                cond,
                then,
                otherwise,
            } => {
                check_cond(cond, line, scope, queries)?;
                check_block(then, schema, queries, scope)?;
                check_block(otherwise, schema, queries, scope)?;
            }
            StmtKind::AbortIfEmpty { .. } | StmtKind::Abort(_) | StmtKind::Render(_) => {}
        }
    }
    *scope = saved;
    Ok(())
}

/// A runtime value with its symbolic origin. `expr` is a parameter, a
/// result column or a literal; `None` marks a value that is only known
/// concretely (an aggregate).
#[derive(Clone, Debug)]
struct Sym {
    value: Value,
    expr: Option<Scalar>,
}

impl Sym {
    fn is_symbolic(&self) -> bool {
        self.expr.as_ref().is_some_and(Scalar::is_symbolic)
    }
}

#[derive(Clone, Debug)]
struct Bound {
    index: usize,
    rows: Vec<Vec<Value>>,
    count: bool,
    sql: String,
}

struct Run<'a> {
    compiled: &'a CompiledHandler,
    input: &'a ConcreteInput,
    schema: &'a Schema,
    strings: &'a Interner,
    records: Vec<Record>,
    lines: Vec<usize>,
    warnings: Vec<String>,
    scopes: Vec<BTreeMap<String, Bound>>,
}

enum Flow {
    Next,
    Stop(Outcome),
}

impl<'a> Run<'a> {
    fn lookup(&self, name: &str) -> &Bound {
        self.scopes
            .iter()
            .rev()
            .find_map(|s| s.get(name))
            .expect("bindings are checked when parsing")
    }

    fn arg(&self, a: &Arg) -> Result<Sym, ExecError> {
        Ok(match a {
            Arg::Session(n) => Sym {
                value: *self
                    .input
                    .session
                    .get(n)
                    .ok_or_else(|| ExecError::MissingParam(n.clone()))?,
                expr: Some(Scalar::Session(n.clone())),
            },
            Arg::Request(n) => Sym {
                value: *self
                    .input
                    .request
                    .get(n)
                    .ok_or_else(|| ExecError::MissingParam(n.clone()))?,
                expr: Some(Scalar::Request(n.clone())),
            },
            Arg::Literal(s) => Sym {
                value: s.literal_value(self.strings).expect("literal"),
                expr: Some(s.clone()),
            },
            Arg::Field { binding, column } => {
                let b = self.lookup(binding);
                let rq = &self.compiled.queries[&b.sql];
                let col = rq.result_column(column).expect("checked at compile time");
                let value = b.rows.first().map_or(None, |r| r[col]);
                Sym {
                    value,
                    expr: (!b.count).then_some(Scalar::RowCol {
                        query: b.index,
                        column: col,
                    }),
                }
            }
        })
    }

    /// Symbolic form of a value; concrete-only values become literals and
    /// are reported.
    fn scalar_of(&mut self, s: &Sym, line: usize, what: &str) -> Scalar {
        match &s.expr {
            Some(e) => e.clone(),
            None => {
                let lit = s.value.map_or(Scalar::Null, Scalar::Int);
                self.warnings.push(format!(
                    "line {line}: {what} uses the observed constant {lit}"
                ));
                lit
            }
        }
    }

    fn term(&mut self, s: &Sym, line: usize) -> Term<NoColumn> {
        Term::Scalar(self.scalar_of(s, line, "branch condition"))
    }

    /// Concrete outcome and, when the condition depends on symbolic
    /// inputs, its predicate.
    fn cond(
        &mut self,
        c: &Cond,
        line: usize,
    ) -> Result<(bool, Option<Predicate<NoColumn>>), ExecError> {
        Ok(match c {
            Cond::Eq(a, b) => {
                let (x, y) = (self.arg(a)?, self.arg(b)?);
                let v = x.value.is_some() && x.value == y.value;
                let p = (x.is_symbolic() || y.is_symbolic())
                    .then(|| Predicate::eq(self.term(&x, line), self.term(&y, line)));
                (v, p)
            }
            Cond::Truthy(a) => {
                let x = self.arg(a)?;
                let v = x.value.is_some_and(|v| v != 0);
                (
                    v,
                    x.is_symbolic()
                        .then(|| Predicate::Truthy(self.term(&x, line))),
                )
            }
            Cond::IsNull(a) => {
                let x = self.arg(a)?;
                (
                    x.value.is_none(),
                    x.is_symbolic()
                        .then(|| Predicate::IsNull(self.term(&x, line))),
                )
            }
            Cond::Not(inner) => {
                let (v, p) = self.cond(inner, line)?;
                (!v, p.map(Predicate::not))
            }
            Cond::NonEmpty(b) => (!self.lookup(b).rows.is_empty(), None),
        })
    }

    fn partial(&self, outcome: Outcome) -> Transcript {
        Transcript {
            meta: TranscriptMeta {
                handler: self.compiled.name().to_string(),
                input: self.input.id.clone(),
                config: None,
                outcome,
                warnings: self.warnings.clone(),
            },
            records: self.records.clone(),
            lines: self.lines.clone(),
        }
    }

    fn block(&mut self, body: &[Stmt]) -> Result<Flow, ExecError> {
        self.scopes.push(BTreeMap::new());
        let r = self.stmts(body);
        self.scopes.pop();
        r
    }

    fn stmts(&mut self, body: &[Stmt]) -> Result<Flow, ExecError> {
        for s in body {
            let line = s.line;
            match &s.kind {
                StmtKind::Let { name, sql, args } => {
                    let vals = args
                        .iter()
                        .map(|a| self.arg(a))
                        .collect::<Result<Vec<_>, _>>()?;
                    let params: Vec<Scalar> = vals
                        .iter()
                        .map(|v| self.scalar_of(v, line, "query argument"))
                        .collect();
                    let rq = &self.compiled.queries[sql];
                    let mut env = Env::new(self.strings);
                    env.session = self.input.session.clone();
                    env.request = self.input.request.clone();
                    env.args = vals.iter().map(|v| v.value).collect();
                    let rows = eval_resolved(rq, self.schema, &self.input.db, &|x| env.value(x));
                    let index = self.query_count() + 1;
                    self.records.push(Record::Query {
                        i: index,
                        sql: sql.clone(),
                        params,
                        empty: rows.is_empty(),
                    });
                    self.lines.push(line);
                    if rows.len() > 1 {
                        return Err(ExecError::MultiRow {
                            query: index,
                            rows: rows.len(),
                            partial: self.partial(Outcome::Returned),
                        });
                    }
                    let bound = Bound {
                        index,
                        rows,
                        count: rq.output == Output::Count,
                        sql: sql.clone(),
                    };
                    self.scopes
                        .last_mut()
                        .expect("scope")
                        .insert(name.clone(), bound);
                }
                StmtKind::AbortIfEmpty { binding, code } => {
                    if self.lookup(binding).rows.is_empty() {
                        return Ok(Flow::Stop(Outcome::Aborted(*code)));
                    }
                }
                StmtKind::If {
                    cond,
                    then,
                    otherwise,
                } => {
                    let (taken, pred) = self.cond(cond, line)?;
                    if let Some(p) = pred {
                        self.records.push(Record::branch(p, taken));
                        self.lines.push(line);
                    }
                    let flow = self.block(if taken { then } else { otherwise })?;
                    if let Flow::Stop(_) = flow {
                        return Ok(flow);
                    }
                }
                StmtKind::Abort(code) => return Ok(Flow::Stop(Outcome::Aborted(*code))),
                StmtKind::Render(_) => {}
            }
        }
        Ok(Flow::Next)
    }

    fn query_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| matches!(r, Record::Query { .. }))
            .count()
    }
}

/// Runs `compiled` on `input`, recording every query and every branch on a
/// symbolic condition.
pub fn execute(
    compiled: &CompiledHandler,
    input: &ConcreteInput,
    schema: &Schema,
    strings: &Interner,
) -> Result<Transcript, ExecError> {
    let mut run = Run {
        compiled,
        input,
        schema,
        strings,
        records: Vec::new(),
        lines: Vec::new(),
        warnings: Vec::new(),
        scopes: Vec::new(),
    };
    let outcome = match run.block(&compiled.handler.body)? {
        Flow::Next => Outcome::Returned,
        Flow::Stop(o) => o,
    };
    Ok(run.partial(outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::handlers::parse_handler;

    const GRADE_SHEET: &str = r#"
handler view_grade_sheet(CourseId: int) {
  let role = query("SELECT * FROM roles WHERE user_id = ? AND course_id = ?", MyUserId, CourseId);
  abort_if_empty(role, 404);
  if (!role.is_instructor) { abort(403); }
  let grades = query("SELECT * FROM grades WHERE course_id = ?", role.course_id);
  render(grades);
}
"#;

    fn schema() -> Schema {
        Schema::parse(
            "table roles { user_id int, course_id int, is_instructor bool, unique(user_id, course_id) }
             table grades { student_id int, course_id int fk courses.id, grade int nullable }
             table courses { id int unique }",
        )
        .unwrap()
    }

    fn input(db: Database) -> ConcreteInput {
        ConcreteInput {
            id: "t".into(),
            db,
            session: [
                ("MyUserId".to_string(), Some(1)),
                ("Now".to_string(), Some(0)),
            ]
            .into(),
            request: [("CourseId".to_string(), Some(5))].into(),
        }
    }

    fn run(db: Database) -> Result<Transcript, ExecError> {
        let s = schema();
        let h = compile(parse_handler(GRADE_SHEET).unwrap(), &s).unwrap();
        execute(&h, &input(db), &s, &Interner::default())
    }

    #[test]
    fn instructor_path_has_three_records() {
        let mut db = Database::default();
        db.insert("roles", vec![Some(1), Some(5), Some(1)]);
        db.insert("grades", vec![Some(2), Some(5), Some(90)]);
        db.insert("courses", vec![Some(5)]);
        let t = run(db).unwrap();
        let text: Vec<String> = t
            .records
            .iter()
            .map(|r| serde_json::to_string(r).unwrap())
            .collect();
        assert_eq!(
            text,
            vec![
                r#"{"t":"Q","i":1,"sql":"SELECT * FROM roles WHERE user_id = ? AND course_id = ?","params":[{"session":"MyUserId"},{"request":"CourseId"}],"empty":false}"#,
                r#"{"t":"B","cond":{"truthy":{"scalar":{"row_col":{"query":1,"column":2}}}},"out":true}"#,
                r#"{"t":"Q","i":2,"sql":"SELECT * FROM grades WHERE course_id = ?","params":[{"row_col":{"query":1,"column":1}}],"empty":false}"#,
            ]
        );
        assert_eq!(t.meta.outcome, Outcome::Returned);
        assert_eq!(t.lines, vec![3, 5, 6]);
    }

    #[test]
    fn no_role_aborts_after_one_query() {
        let t = run(Database::default()).unwrap();
        assert_eq!(t.records.len(), 1);
        assert!(matches!(t.records[0], Record::Query { empty: true, .. }));
        assert_eq!(t.meta.outcome, Outcome::Aborted(404));
    }

    #[test]
    fn multi_row_results_are_reported() {
        let mut db = Database::default();
        db.insert("roles", vec![Some(1), Some(5), Some(1)]);
        db.insert("grades", vec![Some(2), Some(5), Some(90)]);
        db.insert("grades", vec![Some(3), Some(5), Some(80)]);
        match run(db) {
            Err(ExecError::MultiRow {
                query: 2,
                rows: 2,
                partial,
            }) => assert_eq!(partial.records.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_program_has_empty_transcript() {
        let s = schema();
        let h = compile(parse_handler("handler noop() {}").unwrap(), &s).unwrap();
        let t = execute(&h, &input(Database::default()), &s, &Interner::default()).unwrap();
        assert!(t.records.is_empty());
    }

    #[test]
    fn count_values_used_in_branches_are_reported() {
        let s = schema();
        let h = parse_handler(
            r#"handler h(n: int) {
                 let c = query("SELECT COUNT(*) FROM grades");
                 abort_if_empty(c, 500);
                 if (c.count = n) { abort(1); }
               }"#,
        )
        .unwrap();
        let h = compile(h, &s).unwrap();
        let mut i = input(Database::default());
        i.request = [("n".to_string(), Some(0))].into();
        let t = execute(&h, &i, &s, &Interner::default()).unwrap();
        assert_eq!(t.meta.outcome, Outcome::Aborted(1));
        assert_eq!(t.meta.warnings.len(), 1);
        assert_eq!(t.records.len(), 2);
    }
}
