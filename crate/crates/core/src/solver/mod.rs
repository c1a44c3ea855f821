//! Symbolic encodings and the decision procedure behind exploration and
//! pruning.

mod encode;
mod formula;
mod query;
mod sat;

pub use encode::{
    bool_domain, decode_instance, encode_instance, encode_nf, encode_predicate, encode_resolved,
    fresh_value, Candidate, Encoded, SymInstance, SymRow,
};
pub use formula::{BoolVar, Formula, IntTerm, IntVar, Model, Node, SymValue, Vocab};
pub use query::{encode_query, QueryEncoding, SymEnv};
pub use sat::{check, CheckOptions, Verdict};
