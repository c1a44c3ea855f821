//! The supported SQL subset: parsing, name resolution, the normal form,
//! rewrites into it, evaluation and output.

mod ast;
mod eval;
mod normal;
mod parser;
mod predicate;
mod scalar;
mod unparse;

pub use ast::{
    ColumnName, JoinClause, JoinKind, QueryAst, QueryShape, SelectItem, SelectList, TableRef,
};
pub use eval::{eval_normal_form, eval_resolved, Database, Env};
pub use normal::{
    resolve, rewrite_resolved, rewrite_to_psj, to_normal_form, NormalFormQuery, Output,
    ResolvedJoin, ResolvedQuery, Rewrite,
};
pub use parser::parse_sql;
pub use predicate::{CmpOp, NoColumn, Predicate, Term};
pub use scalar::{
    is_session_param, Interner, Scalar, Value, MY_USER_ID, NOW, SESSION_PARAMS, UNKNOWN_STRING,
};
pub use unparse::{cleanup_view, unparse_view};

use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SqlError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported SQL feature: {0}")]
    Unsupported(String),
    #[error("table alias `{0}` is used twice")]
    DuplicateAlias(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("ambiguous column `{0}`")]
    AmbiguousColumn(String),
    #[error("query shape `{0}` needs a rewrite before normalization")]
    NotPsj(QueryShape),
    #[error("internal error: {0}")]
    Internal(String),
}
