//! Database schema, the constraint vocabulary and instance validation.

mod constraints;
mod text;

pub use constraints::{
    expand_shorthand, generate_constraints, parse_constraints, render_constraints,
    validate_instance, Constraint, ConstraintEntry, ConstraintSet, ConstraintShorthand,
    ContainmentRhs, Violation,
};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::relational::SqlError;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("duplicate table `{0}`")]
    DuplicateTable(String),
    #[error("duplicate column `{table}.{column}`")]
    DuplicateColumn { table: String, column: String },
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{table}.{column}`")]
    UnknownColumn { table: String, column: String },
    #[error("foreign key target `{table}.{column}` is not declared unique")]
    ForeignKeyNotUnique { table: String, column: String },
    #[error("{0}")]
    Invalid(String),
    #[error("in constraint `{text}`: {source}")]
    Sql {
        text: String,
        #[source]
        source: SqlError,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Int,
    Bool,
    /// Stored as an integer.
    Timestamp,
    /// Interned to an integer.
    String,
}

impl ColumnType {
    pub fn from_name(s: &str) -> Option<ColumnType> {
        Some(match s {
            "int" | "integer" => ColumnType::Int,
            "bool" | "boolean" => ColumnType::Bool,
            "timestamp" => ColumnType::Timestamp,
            "string" | "text" => ColumnType::String,
            _ => return None,
        })
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnType::Int => "int",
            ColumnType::Bool => "bool",
            ColumnType::Timestamp => "timestamp",
            ColumnType::String => "string",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForeignKey {
    pub table: String,
    pub column: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub ty: ColumnType,
    pub nullable: bool,
    pub unique: bool,
    pub foreign_key: Option<ForeignKey>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    /// Composite keys declared with `unique(a, b)`, as column indices.
    pub unique_keys: Vec<Vec<usize>>,
}

impl Table {
    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Every key (single unique columns first, then composite keys).
    pub fn keys(&self) -> Vec<Vec<usize>> {
        let mut keys: Vec<Vec<usize>> = self
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.unique)
            .map(|(i, _)| vec![i])
            .collect();
        keys.extend(self.unique_keys.iter().cloned());
        keys
    }

    /// Whether `cols` contains some declared key.
    pub fn is_key(&self, cols: &[usize]) -> bool {
        self.keys()
            .iter()
            .any(|k| k.iter().all(|c| cols.contains(c)))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Schema {
    pub tables: Vec<Table>,
}

impl Schema {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn arity(&self, table: &str) -> usize {
        self.table(table).map_or(0, Table::arity)
    }

    pub fn column(&self, table: &str, column: &str) -> Result<(&Table, usize), SchemaError> {
        let t = self
            .table(table)
            .ok_or_else(|| SchemaError::UnknownTable(table.to_string()))?;
        let i = t
            .column_index(column)
            .ok_or_else(|| SchemaError::UnknownColumn {
                table: table.to_string(),
                column: column.to_string(),
            })?;
        Ok((t, i))
    }

    /// Parses the schema file format:
    ///
    /// ```text
    /// table roles {
    ///   user_id int
    ///   course_id int
    ///   is_instructor bool
    ///   unique(user_id, course_id)
    /// }
    /// ```
    ///
    /// Columns take the modifiers `nullable`, `unique` and `fk table.col`;
    /// entries may be separated by newlines, `,` or `;`.
    pub fn parse(text: &str) -> Result<Schema, SchemaError> {
        let toks = text::tokenize(text)?;
        let mut p = text::Cursor::new(&toks);
        let mut tables: Vec<Table> = Vec::new();
        let mut pending_keys: Vec<(usize, Vec<String>)> = Vec::new();
        while !p.done() {
            p.expect_word("table")?;
            let name = p.ident("table name")?;
            if tables.iter().any(|t| t.name == name) {
                return Err(SchemaError::DuplicateTable(name));
            }
            p.expect_punct('{')?;
            let mut table = Table {
                name: name.clone(),
                columns: Vec::new(),
                unique_keys: Vec::new(),
            };
            loop {
                p.skip_separators();
                if p.eat_punct('}') {
                    break;
                }
                if p.peek_word("unique") && p.peek_punct_at(1, '(') {
                    p.bump();
                    p.bump();
                    let mut cols = vec![p.ident("column name")?];
                    while p.eat_punct(',') {
                        cols.push(p.ident("column name")?);
                    }
                    p.expect_punct(')')?;
                    pending_keys.push((tables.len(), cols));
                    continue;
                }
                let col = p.ident("column name")?;
                if table.columns.iter().any(|c| c.name == col) {
                    return Err(SchemaError::DuplicateColumn {
                        table: name.clone(),
                        column: col,
                    });
                }
                let ty_name = p.ident("column type")?;
                let ty = ColumnType::from_name(&ty_name)
                    .ok_or_else(|| p.error(format!("unknown column type `{ty_name}`")))?;
                let mut column = Column {
                    name: col,
                    ty,
                    nullable: false,
                    unique: false,
                    foreign_key: None,
                };
                loop {
                    if p.peek_word("nullable") {
                        p.bump();
                        column.nullable = true;
                    } else if p.peek_word("unique") && !p.peek_punct_at(1, '(') {
                        p.bump();
                        column.unique = true;
                    } else if p.peek_word("fk") {
                        p.bump();
                        let t = p.ident("table name")?;
                        p.expect_punct('.')?;
                        let c = p.ident("column name")?;
                        column.foreign_key = Some(ForeignKey {
                            table: t,
                            column: c,
                        });
                    } else {
                        break;
                    }
                }
                table.columns.push(column);
            }
            tables.push(table);
        }
        for (ti, cols) in pending_keys {
            let table = &mut tables[ti];
            let mut key = Vec::new();
            for c in cols {
                let i = table
                    .column_index(&c)
                    .ok_or_else(|| SchemaError::UnknownColumn {
                        table: table.name.clone(),
                        column: c.clone(),
                    })?;
                key.push(i);
            }
            if key.len() == 1 {
                table.columns[key[0]].unique = true;
            } else {
                table.unique_keys.push(key);
            }
        }
        let schema = Schema { tables };
        schema.check()?;
        Ok(schema)
    }

    fn check(&self) -> Result<(), SchemaError> {
        for t in &self.tables {
            for c in &t.columns {
                if let Some(fk) = &c.foreign_key {
                    let (target, i) = self.column(&fk.table, &fk.column)?;
                    if !target.columns[i].unique {
                        return Err(SchemaError::ForeignKeyNotUnique {
                            table: fk.table.clone(),
                            column: fk.column.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tables.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            writeln!(f, "table {} {{", t.name)?;
            for c in &t.columns {
                write!(f, "  {} {}", c.name, c.ty)?;
                if c.nullable {
                    f.write_str(" nullable")?;
                }
                if c.unique {
                    f.write_str(" unique")?;
                }
                if let Some(fk) = &c.foreign_key {
                    write!(f, " fk {}.{}", fk.table, fk.column)?;
                }
                writeln!(f)?;
            }
            for key in &t.unique_keys {
                let names: Vec<&str> = key.iter().map(|&k| t.columns[k].name.as_str()).collect();
                writeln!(f, "  unique({})", names.join(", "))?;
            }
            writeln!(f, "}}")?;
        }
        Ok(())
    }
}
