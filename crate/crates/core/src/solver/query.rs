//! Queries with symbolic parameters and result rows.

use std::collections::BTreeMap;

use super::encode::{encode_resolved, fresh_value, SymInstance};
use super::formula::{Formula, SymValue, Vocab};
use crate::relational::{Interner, Output, ResolvedQuery, Scalar};
use crate::schema::Schema;

/// Symbolic values of everything a query parameter can refer to.
#[derive(Clone, Debug)]
pub struct SymEnv<'a> {
    pub strings: &'a Interner,
    pub session: BTreeMap<String, SymValue>,
    pub request: BTreeMap<String, SymValue>,
    /// Result row symbols by 1-based query index.
    pub rows: BTreeMap<usize, Vec<SymValue>>,
}

impl<'a> SymEnv<'a> {
    pub fn new(strings: &'a Interner) -> Self {
        SymEnv {
            strings,
            session: BTreeMap::new(),
            request: BTreeMap::new(),
            rows: BTreeMap::new(),
        }
    }

    /// Value of `s`; placeholders are looked up in `args`.
    pub fn value(&self, s: &Scalar, args: &[Scalar]) -> SymValue {
        match s {
            Scalar::Session(n) => self.session.get(n).cloned().unwrap_or_else(SymValue::null),
            Scalar::Request(n) => self.request.get(n).cloned().unwrap_or_else(SymValue::null),
            Scalar::RowCol { query, column } => self
                .rows
                .get(query)
                .and_then(|r| r.get(*column).cloned())
                .unwrap_or_else(SymValue::null),
            Scalar::Placeholder(i) => match args.get(i - 1) {
                Some(a) => self.value(a, &[]),
                None => SymValue::null(),
            },
            lit => SymValue::constant(lit.literal_value(self.strings).expect("literal")),
        }
    }
}

/// A query issued with symbolic parameters.
#[derive(Clone, Debug)]
pub struct QueryEncoding {
    pub non_empty: Formula,
    /// Fresh symbols for the returned row.
    pub row: Vec<SymValue>,
    /// `row` is one of the result tuples (implies `non_empty`).
    pub row_def: Formula,
    pub at_most_one: Formula,
}

/// Encodes `rq` with placeholder arguments `args`, naming the result row
/// symbols `name[k]`. `COUNT(*)` results are always non-empty and have no
/// symbolic row.
#[allow(clippy::too_many_arguments)]
pub fn encode_query(
    rq: &ResolvedQuery,
    args: &[Scalar],
    env: &SymEnv<'_>,
    inst: &SymInstance,
    schema: &Schema,
    vocab: &mut Vocab,
    name: &str,
) -> QueryEncoding {
    if rq.output == Output::Count {
        return QueryEncoding {
            non_empty: Formula::tt(),
            row: Vec::new(),
            row_def: Formula::tt(),
            at_most_one: Formula::tt(),
        };
    }
    let enc = encode_resolved(rq, inst, schema, &|s| env.value(s, args));
    let row: Vec<SymValue> = (0..rq.result_arity())
        .map(|k| fresh_value(vocab, &format!("{name}[{k}]"), true))
        .collect();
    QueryEncoding {
        non_empty: enc.non_empty(),
        row_def: enc.contains(&row),
        at_most_one: enc.at_most_one(),
        row,
    }
}
