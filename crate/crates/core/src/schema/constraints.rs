use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::text::{self, Tok};
use super::{Schema, SchemaError};
use crate::relational::{
    eval_normal_form, parse_sql, rewrite_to_psj, Database, Env, Interner, NormalFormQuery,
    Predicate, Scalar, Term, Value,
};

/// Right side of a containment constraint.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainmentRhs {
    Query(NormalFormQuery),
    /// A literal relation; `Rows(vec![])` is the empty relation.
    Rows(Vec<Vec<Scalar>>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// No two present rows agree (non-null) on all of `columns`.
    Unique { table: String, columns: Vec<usize> },
    /// The result of `lhs` is a subset of `rhs` on every instance.
    Containment {
        lhs: NormalFormQuery,
        rhs: ContainmentRhs,
    },
}

impl Constraint {
    /// Tables mentioned by either side.
    pub fn tables(&self) -> BTreeSet<&str> {
        match self {
            Constraint::Unique { table, .. } => std::iter::once(table.as_str()).collect(),
            Constraint::Containment { lhs, rhs } => {
                let mut out: BTreeSet<&str> = lhs.sources.iter().map(String::as_str).collect();
                if let ContainmentRhs::Query(q) = rhs {
                    out.extend(q.sources.iter().map(String::as_str));
                }
                out
            }
        }
    }

    pub fn describe(&self, schema: &Schema) -> String {
        match self {
            Constraint::Unique { table, columns } => {
                let t = schema.table(table);
                let names: Vec<String> = columns
                    .iter()
                    .map(|&c| t.map_or(c.to_string(), |t| t.columns[c].name.clone()))
                    .collect();
                format!("unique {table}({})", names.join(", "))
            }
            Constraint::Containment { lhs, rhs } => {
                let l = lhs.to_sql(schema);
                match rhs {
                    ContainmentRhs::Query(q) => format!("contain {l} in {}", q.to_sql(schema)),
                    ContainmentRhs::Rows(rows) => format!("contain {l} in {}", render_rows(rows)),
                }
            }
        }
    }
}

fn render_rows(rows: &[Vec<Scalar>]) -> String {
    if rows.is_empty() {
        return "empty".into();
    }
    let parts: Vec<String> = rows
        .iter()
        .map(|r| {
            let vals: Vec<String> = r.iter().map(|s| s.to_string()).collect();
            format!("({})", vals.join(", "))
        })
        .collect();
    format!("{{{}}}", parts.join(", "))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintShorthand {
    NonNull {
        table: String,
        column: String,
    },
    ForeignKey {
        table: String,
        column: String,
        ref_table: String,
        ref_column: String,
    },
    Domain {
        table: String,
        column: String,
        values: Vec<Scalar>,
    },
    Fixed {
        table: String,
        column: String,
        value: Scalar,
    },
}

/// One line of a constraint config file.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintEntry {
    Unique { table: String, columns: Vec<String> },
    Shorthand(ConstraintShorthand),
    Contain { lhs: String, rhs: Option<String> },
}

impl fmt::Display for ConstraintEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintEntry::Unique { table, columns } => {
                write!(f, "unique {table}({})", columns.join(", "))
            }
            ConstraintEntry::Shorthand(s) => match s {
                ConstraintShorthand::NonNull { table, column } => {
                    write!(f, "nonnull {table}.{column}")
                }
                ConstraintShorthand::ForeignKey {
                    table,
                    column,
                    ref_table,
                    ref_column,
                } => write!(f, "fk {table}.{column} -> {ref_table}.{ref_column}"),
                ConstraintShorthand::Domain {
                    table,
                    column,
                    values,
                } => {
                    let vals: Vec<String> = values.iter().map(|v| v.to_string()).collect();
                    write!(f, "domain {table}.{column} in {{{}}}", vals.join(", "))
                }
                ConstraintShorthand::Fixed {
                    table,
                    column,
                    value,
                } => {
                    write!(f, "fixed {table}.{column} = {value}")
                }
            },
            ConstraintEntry::Contain { lhs, rhs } => match rhs {
                Some(r) => write!(f, "contain {lhs} in {r}"),
                None => write!(f, "contain {lhs} in empty"),
            },
        }
    }
}

/// Parsed constraint config: the source entries and their expansion.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub entries: Vec<ConstraintEntry>,
    pub constraints: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn from_entries(
        entries: Vec<ConstraintEntry>,
        schema: &Schema,
    ) -> Result<Self, SchemaError> {
        let mut constraints = Vec::new();
        for e in &entries {
            for c in expand_entry(e, schema)? {
                if !constraints.contains(&c) {
                    constraints.push(c);
                }
            }
        }
        Ok(ConstraintSet {
            entries,
            constraints,
        })
    }

    /// String literals used by the constraints (for interning).
    pub fn string_literals(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut add = |s: &Scalar| {
            if let Scalar::Str(v) = s {
                out.insert(v.clone());
            }
        };
        for c in &self.constraints {
            if let Constraint::Containment { lhs, rhs } = c {
                lhs.filter.scalars().into_iter().for_each(&mut add);
                match rhs {
                    ContainmentRhs::Query(q) => q.filter.scalars().into_iter().for_each(&mut add),
                    ContainmentRhs::Rows(rows) => rows.iter().flatten().for_each(&mut add),
                }
            }
        }
        out
    }
}

fn column_checked<'s>(
    schema: &'s Schema,
    table: &str,
    column: &str,
) -> Result<(&'s super::Table, usize), SchemaError> {
    schema.column(table, column)
}

/// Single-column scan `SELECT col FROM table [WHERE col IS NOT NULL]`.
fn column_scan(
    schema: &Schema,
    table: &str,
    column: &str,
    not_null: bool,
) -> Result<NormalFormQuery, SchemaError> {
    let (_, i) = column_checked(schema, table, column)?;
    let filter = if not_null {
        Predicate::IsNull(Term::Col(i)).not()
    } else {
        Predicate::True
    };
    Ok(NormalFormQuery {
        sources: vec![table.to_string()],
        projection: vec![i],
        filter,
    })
}

/// Expands a shorthand into the two general constraint kinds.
pub fn expand_shorthand(
    s: &ConstraintShorthand,
    schema: &Schema,
) -> Result<Vec<Constraint>, SchemaError> {
    Ok(match s {
        ConstraintShorthand::NonNull { table, column } => {
            let (t, i) = column_checked(schema, table, column)?;
            if !t.columns[i].nullable {
                Vec::new()
            } else {
                vec![Constraint::Containment {
                    lhs: NormalFormQuery {
                        sources: vec![table.clone()],
                        projection: Vec::new(),
                        filter: Predicate::IsNull(Term::Col(i)),
                    },
                    rhs: ContainmentRhs::Rows(Vec::new()),
                }]
            }
        }
        ConstraintShorthand::ForeignKey {
            table,
            column,
            ref_table,
            ref_column,
        } => vec![Constraint::Containment {
            lhs: column_scan(schema, table, column, true)?,
            rhs: ContainmentRhs::Query(column_scan(schema, ref_table, ref_column, false)?),
        }],
        ConstraintShorthand::Domain {
            table,
            column,
            values,
        } => {
            let (t, i) = column_checked(schema, table, column)?;
            vec![Constraint::Containment {
                lhs: column_scan(schema, table, column, t.columns[i].nullable)?,
                rhs: ContainmentRhs::Rows(values.iter().map(|v| vec![v.clone()]).collect()),
            }]
        }
        ConstraintShorthand::Fixed {
            table,
            column,
            value,
        } => {
            let (t, i) = column_checked(schema, table, column)?;
            vec![Constraint::Containment {
                lhs: column_scan(schema, table, column, t.columns[i].nullable)?,
                rhs: ContainmentRhs::Rows(vec![vec![value.clone()]]),
            }]
        }
    })
}

fn constraint_query(text: &str, schema: &Schema) -> Result<NormalFormQuery, SchemaError> {
    let wrap = |source| SchemaError::Sql {
        text: text.to_string(),
        source,
    };
    let ast = parse_sql(text).map_err(wrap)?;
    let mut rewrites = rewrite_to_psj(&ast, schema).map_err(wrap)?;
    if rewrites.len() != 1 || !rewrites[0].lossless {
        return Err(SchemaError::Invalid(format!(
            "constraint query `{text}` has no exact project-select-join form"
        )));
    }
    let q = rewrites.pop().unwrap().query;
    if let Some(s) = q.filter.scalars().into_iter().find(|s| !s.is_literal()) {
        return Err(SchemaError::Invalid(format!(
            "constraint query `{text}` mentions `{s}`; only literals are allowed"
        )));
    }
    Ok(q)
}

fn expand_entry(e: &ConstraintEntry, schema: &Schema) -> Result<Vec<Constraint>, SchemaError> {
    match e {
        ConstraintEntry::Unique { table, columns } => {
            let mut idx = Vec::new();
            for c in columns {
                idx.push(schema.column(table, c)?.1);
            }
            Ok(vec![Constraint::Unique {
                table: table.clone(),
                columns: idx,
            }])
        }
        ConstraintEntry::Shorthand(s) => expand_shorthand(s, schema),
        ConstraintEntry::Contain { lhs, rhs } => {
            let l = constraint_query(lhs, schema)?;
            let r = match rhs {
                Some(r) => {
                    let r = constraint_query(r, schema)?;
                    if r.projection.len() != l.projection.len() {
                        return Err(SchemaError::Invalid(format!(
                            "containment sides differ in arity: `{lhs}` in `{}`",
                            rhs.as_deref().unwrap_or("")
                        )));
                    }
                    ContainmentRhs::Query(r)
                }
                None => ContainmentRhs::Rows(Vec::new()),
            };
            Ok(vec![Constraint::Containment { lhs: l, rhs: r }])
        }
    }
}

/// The simple constraints implied by the schema declarations: keys,
/// foreign keys and non-null columns.
pub fn generate_constraints(schema: &Schema) -> Vec<ConstraintEntry> {
    let mut out = Vec::new();
    for t in &schema.tables {
        for key in t.keys() {
            out.push(ConstraintEntry::Unique {
                table: t.name.clone(),
                columns: key.iter().map(|&k| t.columns[k].name.clone()).collect(),
            });
        }
    }
    for t in &schema.tables {
        for c in &t.columns {
            if let Some(fk) = &c.foreign_key {
                out.push(ConstraintEntry::Shorthand(
                    ConstraintShorthand::ForeignKey {
                        table: t.name.clone(),
                        column: c.name.clone(),
                        ref_table: fk.table.clone(),
                        ref_column: fk.column.clone(),
                    },
                ));
            }
        }
    }
    for t in &schema.tables {
        for c in &t.columns {
            if !c.nullable {
                out.push(ConstraintEntry::Shorthand(ConstraintShorthand::NonNull {
                    table: t.name.clone(),
                    column: c.name.clone(),
                }));
            }
        }
    }
    out
}

pub fn render_constraints(entries: &[ConstraintEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}

fn literal(tok: &Tok) -> Option<Scalar> {
    Some(match tok {
        Tok::Int(v) => Scalar::Int(*v),
        Tok::Str(s) => Scalar::Str(s.clone()),
        Tok::Word(w) if w.eq_ignore_ascii_case("true") => Scalar::Bool(true),
        Tok::Word(w) if w.eq_ignore_ascii_case("false") => Scalar::Bool(false),
        _ => return None,
    })
}

fn table_dot_column(cur: &mut text::Cursor<'_>) -> Result<(String, String), SchemaError> {
    let t = cur.ident("table name")?;
    cur.expect_punct('.')?;
    let c = cur.ident("column name")?;
    Ok((t, c))
}

fn parse_line(line_no: usize, line: &str) -> Result<Option<ConstraintEntry>, SchemaError> {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    let syntax = |message: String| SchemaError::Syntax {
        line: line_no,
        message,
    };
    let (keyword, rest) = trimmed
        .split_once(char::is_whitespace)
        .ok_or_else(|| syntax(format!("incomplete constraint `{trimmed}`")))?;
    if keyword == "contain" {
        // split at the last ` in ` followed by a query or `empty`
        let lower = rest.to_ascii_lowercase();
        let split = lower
            .match_indices(" in ")
            .map(|(i, _)| i)
            .filter(|&i| {
                let tail = lower[i + 4..].trim_start();
                tail.starts_with("select") || tail == "empty"
            })
            .last()
            .ok_or_else(|| syntax("expected `contain <query> in <query>`".into()))?;
        let lhs = rest[..split].trim().to_string();
        let rhs = rest[split + 4..].trim();
        let rhs = (!rhs.eq_ignore_ascii_case("empty")).then(|| rhs.to_string());
        return Ok(Some(ConstraintEntry::Contain { lhs, rhs }));
    }
    let toks = text::tokenize(rest).map_err(|e| match e {
        SchemaError::Syntax { message, .. } => syntax(message),
        e => e,
    })?;
    let mut cur = text::Cursor::new(&toks);
    let relabel = |e: SchemaError| match e {
        SchemaError::Syntax { message, .. } => syntax(message),
        e => e,
    };
    let entry = (|| -> Result<ConstraintEntry, SchemaError> {
        Ok(match keyword {
            "unique" => {
                let table = cur.ident("table name")?;
                cur.expect_punct('(')?;
                let mut columns = vec![cur.ident("column name")?];
                while cur.eat_punct(',') {
                    columns.push(cur.ident("column name")?);
                }
                cur.expect_punct(')')?;
                ConstraintEntry::Unique { table, columns }
            }
            "nonnull" => {
                let (table, column) = table_dot_column(&mut cur)?;
                ConstraintEntry::Shorthand(ConstraintShorthand::NonNull { table, column })
            }
            "fk" => {
                let (table, column) = table_dot_column(&mut cur)?;
                cur.expect_punct('-')?;
                cur.expect_punct('>')?;
                let (ref_table, ref_column) = table_dot_column(&mut cur)?;
                ConstraintEntry::Shorthand(ConstraintShorthand::ForeignKey {
                    table,
                    column,
                    ref_table,
                    ref_column,
                })
            }
            "domain" => {
                let (table, column) = table_dot_column(&mut cur)?;
                cur.expect_word("in")?;
                cur.expect_punct('{')?;
                let mut values = Vec::new();
                loop {
                    let tok = cur
                        .bump()
                        .ok_or_else(|| cur.error("unterminated value list"))?;
                    if tok == Tok::Punct('}') {
                        break;
                    }
                    if tok == Tok::Punct(',') {
                        continue;
                    }
                    values
                        .push(literal(&tok).ok_or_else(|| cur.error("expected a literal value"))?);
                }
                ConstraintEntry::Shorthand(ConstraintShorthand::Domain {
                    table,
                    column,
                    values,
                })
            }
            "fixed" => {
                let (table, column) = table_dot_column(&mut cur)?;
                cur.expect_punct('=')?;
                let tok = cur
                    .bump()
                    .ok_or_else(|| cur.error("expected a literal value"))?;
                let value = literal(&tok).ok_or_else(|| cur.error("expected a literal value"))?;
                ConstraintEntry::Shorthand(ConstraintShorthand::Fixed {
                    table,
                    column,
                    value,
                })
            }
            other => return Err(cur.error(format!("unknown constraint kind `{other}`"))),
        })
    })()
    .map_err(relabel)?;
    if !cur.done() {
        return Err(syntax("trailing input".into()));
    }
    Ok(Some(entry))
}

/// Parses a constraint config file and expands it against `schema`.
pub fn parse_constraints(text: &str, schema: &Schema) -> Result<ConstraintSet, SchemaError> {
    let mut entries = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        if let Some(e) = parse_line(n + 1, line)? {
            entries.push(e);
        }
    }
    ConstraintSet::from_entries(entries, schema)
}

/// First constraint violated by a database, with a readable description.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub description: String,
}

fn literal_env(strings: &Interner) -> Env<'_> {
    Env::new(strings)
}

/// Checks every constraint by direct evaluation.
pub fn validate_instance(
    db: &Database,
    constraints: &[Constraint],
    schema: &Schema,
    strings: &Interner,
) -> Result<(), Violation> {
    let env = literal_env(strings);
    for (index, c) in constraints.iter().enumerate() {
        let ok = match c {
            Constraint::Unique { table, columns } => {
                let rows: BTreeSet<&Vec<Value>> = db.rows(table).iter().collect();
                let rows: Vec<&Vec<Value>> = rows.into_iter().collect();
                let mut ok = true;
                for i in 0..rows.len() {
                    for j in i + 1..rows.len() {
                        if columns
                            .iter()
                            .all(|&k| rows[i][k].is_some() && rows[i][k] == rows[j][k])
                        {
                            ok = false;
                        }
                    }
                }
                ok
            }
            Constraint::Containment { lhs, rhs } => {
                let l = eval_normal_form(lhs, schema, db, &|s| env.value(s));
                let r: BTreeSet<Vec<Value>> = match rhs {
                    ContainmentRhs::Query(q) => eval_normal_form(q, schema, db, &|s| env.value(s)),
                    ContainmentRhs::Rows(rows) => rows
                        .iter()
                        .map(|r| r.iter().map(|s| env.value(s)).collect())
                        .collect(),
                };
                l.is_subset(&r)
            }
        };
        if !ok {
            return Err(Violation {
                index,
                description: c.describe(schema),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::parse(
            "table roles { user_id int, course_id int, is_instructor bool, unique(user_id, course_id) }
             table grades { student_id int, course_id int fk courses.id, grade int nullable }
             table courses { id int unique }",
        )
        .unwrap()
    }

    #[test]
    fn generated_constraints_for_grade_sheet() {
        let entries = generate_constraints(&schema());
        let uniques = entries
            .iter()
            .filter(|e| matches!(e, ConstraintEntry::Unique { .. }))
            .count();
        let fks = entries
            .iter()
            .filter(|e| {
                matches!(
                    e,
                    ConstraintEntry::Shorthand(ConstraintShorthand::ForeignKey { .. })
                )
            })
            .count();
        let nonnull = entries
            .iter()
            .filter(|e| {
                matches!(
                    e,
                    ConstraintEntry::Shorthand(ConstraintShorthand::NonNull { .. })
                )
            })
            .count();
        assert_eq!((uniques, fks, nonnull), (2, 1, 6));
    }

    #[test]
    fn config_round_trips() {
        let s = schema();
        let text = "unique roles(user_id, course_id)\nfk grades.course_id -> courses.id\nnonnull grades.grade\n\
                    domain grades.grade in {0, 1, 'x'}\nfixed roles.is_instructor = TRUE\n\
                    contain SELECT course_id FROM roles in SELECT id FROM courses\n\
                    contain SELECT 1 FROM grades WHERE grade = 3 in empty\n";
        let set = parse_constraints(text, &s).unwrap();
        assert_eq!(set.entries.len(), 7);
        let again = parse_constraints(&render_constraints(&set.entries), &s).unwrap();
        assert_eq!(again, set);
    }

    #[test]
    fn nonnull_on_non_nullable_column_is_noop() {
        let s = schema();
        let c = ConstraintShorthand::NonNull {
            table: "roles".into(),
            column: "user_id".into(),
        };
        assert!(expand_shorthand(&c, &s).unwrap().is_empty());
    }

    #[test]
    fn unknown_column_is_reported() {
        let s = schema();
        let err = parse_constraints("nonnull roles.nope", &s).unwrap_err();
        assert!(matches!(err, SchemaError::UnknownColumn { .. }));
    }

    #[test]
    fn unique_violation_detected() {
        let s = schema();
        let set = parse_constraints("unique roles(user_id, course_id)", &s).unwrap();
        let mut db = Database::default();
        db.insert("roles", vec![Some(1), Some(2), Some(0)]);
        db.insert("roles", vec![Some(1), Some(2), Some(1)]);
        let v = validate_instance(&db, &set.constraints, &s, &Interner::default()).unwrap_err();
        assert_eq!(v.index, 0);
        assert!(validate_instance(
            &Database::default(),
            &set.constraints,
            &s,
            &Interner::default()
        )
        .is_ok());
    }

    #[test]
    fn foreign_key_violation_detected() {
        let s = schema();
        let set = ConstraintSet::from_entries(generate_constraints(&s), &s).unwrap();
        let mut db = Database::default();
        db.insert("grades", vec![Some(1), Some(5), None]);
        assert!(validate_instance(&db, &set.constraints, &s, &Interner::default()).is_err());
        db.insert("courses", vec![Some(5)]);
        assert!(validate_instance(&db, &set.constraints, &s, &Interner::default()).is_ok());
    }
}
