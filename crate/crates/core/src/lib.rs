//! Policy extraction for database-backed web handlers.
//!
//! Handlers written in a small DSL are explored concolically over a bounded
//! symbolic database. The queries they issue, together with the conditions
//! under which they were issued, are turned into SQL views; redundant views
//! are pruned with a bounded determinacy check.

pub mod explorer;
pub mod handlers;
pub mod pipeline;
pub mod policygen;
pub mod pruner;
pub mod relational;
pub mod schema;
pub mod solver;

pub use explorer::{explore, Exploration, ExploreConfig};
pub use handlers::{CompiledHandler, Transcript};
pub use pipeline::{Project, RunDir, RunError};
pub use policygen::{Policy, PolicyError, PolicyView, SimplifyConfig};
pub use pruner::{is_allowed, ContainmentVerdict, Context, PruneConfig};
pub use relational::{
    parse_sql, rewrite_to_psj, to_normal_form, unparse_view, Database, NormalFormQuery, Predicate,
    QueryAst, Scalar, SqlError, Value,
};
pub use schema::{Constraint, ConstraintSet, Schema, SchemaError};
