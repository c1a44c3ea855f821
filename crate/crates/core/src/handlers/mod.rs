//! The handler language: a small loop-free imperative language whose only
//! effects are parameterized queries, branches, aborts and renders.
//!
//! ```text
//! handler view_grade_sheet(CourseId: int) {
//!   let role = query("SELECT * FROM roles WHERE user_id = ? AND course_id = ?", MyUserId, CourseId);
//!   abort_if_empty(role, 404);
//!   if (!role.is_instructor) { abort(403); }
//!   let grades = query("SELECT * FROM grades WHERE course_id = ?", role.course_id);
//!   render(grades);
//! }
//! ```

mod interp;
mod parse;
mod transcript;

pub use interp::{compile, execute, CompiledHandler, ConcreteInput, ExecError};
pub use parse::parse_handler;
pub use transcript::{Outcome, Record, RunStamp, Transcript, TranscriptMeta};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::relational::{Scalar, SqlError};
use crate::schema::ColumnType;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HandlerDecl {
    pub name: String,
    pub params: Vec<(String, ColumnType)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Handler {
    pub decl: HandlerDecl,
    pub body: Vec<Stmt>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stmt {
    pub line: usize,
    pub kind: StmtKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StmtKind {
    Let {
        name: String,
        sql: String,
        args: Vec<Arg>,
    },
    AbortIfEmpty {
        binding: String,
        code: u16,
    },
    If {
        cond: Cond,
        then: Vec<Stmt>,
        otherwise: Vec<Stmt>,
    },
    Abort(u16),
    Render(Vec<String>),
}

/// A query argument or comparison operand.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arg {
    Session(String),
    Request(String),
    Literal(Scalar),
    Field { binding: String, column: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Cond {
    Eq(Arg, Arg),
    Truthy(Arg),
    IsNull(Arg),
    Not(Box<Cond>),
    NonEmpty(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum HandlerError {
    #[error("line {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: `{binding}.{column}` is read where `{binding}` may be empty; guard it with abort_if_empty or nonempty()")]
    Unguarded {
        line: usize,
        binding: String,
        column: String,
    },
    #[error("line {line}: query arguments must be parameters, literals or fields, found a computed expression")]
    ComputedArgument { line: usize },
    #[error("line {line}: unknown name `{name}`")]
    UnknownName { line: usize, name: String },
    #[error("parameter `{0}` is declared twice or shadows a session parameter")]
    DuplicateParam(String),
    #[error("line {line}: query takes {expected} arguments, {found} given")]
    ArgumentCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {source}")]
    Sql {
        line: usize,
        #[source]
        source: SqlError,
    },
}

impl Handler {
    /// Number of top-level statements.
    pub fn len(&self) -> usize {
        self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }
}
