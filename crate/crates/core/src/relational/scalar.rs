use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A database value. `None` is SQL `NULL`; every other value (booleans,
/// timestamps and interned strings included) is an integer.
pub type Value = Option<i64>;

/// Session parameter holding the authenticated user's id.
pub const MY_USER_ID: &str = "MyUserId";
/// Session parameter holding the request timestamp.
pub const NOW: &str = "Now";
/// All session parameters, in declaration order.
pub const SESSION_PARAMS: [&str; 2] = [MY_USER_ID, NOW];

pub fn is_session_param(name: &str) -> bool {
    SESSION_PARAMS.contains(&name)
}

/// A leaf operand that is not a column of the enclosing query.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scalar {
    Int(i64),
    Bool(bool),
    Null,
    Str(String),
    Session(String),
    Request(String),
    /// Column `column` (0-based, result-column order) of the row returned by
    /// the query with transcript index `query` (1-based).
    RowCol {
        query: usize,
        column: usize,
    },
    /// The `n`-th `?` of a parameterized query (1-based).
    Placeholder(usize),
}

impl Scalar {
    pub fn is_literal(&self) -> bool {
        matches!(
            self,
            Scalar::Int(_) | Scalar::Bool(_) | Scalar::Null | Scalar::Str(_)
        )
    }

    /// True for the scalars that carry a symbolic input (parameters and
    /// earlier query results).
    pub fn is_symbolic(&self) -> bool {
        matches!(
            self,
            Scalar::Session(_) | Scalar::Request(_) | Scalar::RowCol { .. }
        )
    }

    /// The concrete value of a literal, if this is one.
    pub fn literal_value(&self, strings: &Interner) -> Option<Value> {
        match self {
            Scalar::Int(v) => Some(Some(*v)),
            Scalar::Bool(b) => Some(Some(i64::from(*b))),
            Scalar::Null => Some(None),
            Scalar::Str(s) => Some(Some(strings.id(s))),
            _ => None,
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Int(v) => write!(f, "{v}"),
            Scalar::Bool(true) => f.write_str("TRUE"),
            Scalar::Bool(false) => f.write_str("FALSE"),
            Scalar::Null => f.write_str("NULL"),
            Scalar::Str(s) => write!(f, "'{}'", s.replace('\'', "''")),
            Scalar::Session(name) => f.write_str(name),
            Scalar::Request(name) => write!(f, ":{name}"),
            Scalar::RowCol { query, column } => write!(f, "r{query}[{column}]"),
            Scalar::Placeholder(_) => f.write_str("?"),
        }
    }
}

/// Maps string literals to integers. Ids are assigned in sorted order so
/// the table only depends on the set of strings, not the order they were
/// seen in.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interner {
    ids: BTreeMap<String, i64>,
}

/// Id given to strings missing from the table. It lies outside every value
/// range, so it compares unequal to everything a solver can produce.
pub const UNKNOWN_STRING: i64 = i64::MIN / 2;

impl Interner {
    pub fn from_strings<I, S>(strings: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut sorted: Vec<String> = strings.into_iter().map(Into::into).collect();
        sorted.sort();
        sorted.dedup();
        let ids = sorted
            .into_iter()
            .enumerate()
            .map(|(i, s)| (s, i as i64))
            .collect();
        Interner { ids }
    }

    pub fn id(&self, s: &str) -> i64 {
        self.ids.get(s).copied().unwrap_or(UNKNOWN_STRING)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, i64)> {
        self.ids.iter().map(|(s, i)| (s.as_str(), *i))
    }
}
