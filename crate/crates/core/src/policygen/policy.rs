use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::relational::{parse_sql, to_normal_form, unparse_view, NormalFormQuery};
use crate::schema::Schema;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyView {
    pub query: NormalFormQuery,
    /// Rendered text; this is what policy files store and compare.
    pub sql: String,
    pub handler: String,
    pub witness: String,
    /// Kept by pruning regardless of redundancy.
    pub pinned: bool,
}

impl PolicyView {
    pub fn new(query: NormalFormQuery, schema: &Schema, handler: &str, witness: &str) -> Self {
        PolicyView {
            sql: unparse_view(&query, schema),
            query,
            handler: handler.to_string(),
            witness: witness.to_string(),
            pinned: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub views: Vec<PolicyView>,
}

impl Policy {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn queries(&self) -> Vec<NormalFormQuery> {
        self.views.iter().map(|v| v.query.clone()).collect()
    }
}

pub fn render_policy(p: &Policy) -> String {
    let mut out = String::new();
    for (k, v) in p.views.iter().enumerate() {
        let _ = write!(out, "-- view {}", k + 1);
        if !v.handler.is_empty() {
            let _ = write!(out, "  handler={}", v.handler);
        }
        if !v.witness.is_empty() {
            let _ = write!(out, "  witness={}", v.witness);
        }
        if v.pinned {
            out.push_str("  pinned");
        }
        let _ = writeln!(out, "\n{};\n", v.sql);
    }
    out
}

struct Header {
    handler: String,
    witness: String,
    pinned: bool,
}

fn parse_header(line: &str) -> Option<Header> {
    let rest = line.strip_prefix("--")?.trim();
    let mut words = rest.split_whitespace();
    if words.next() != Some("view") {
        return None;
    }
    let mut h = Header {
        handler: String::new(),
        witness: String::new(),
        pinned: false,
    };
    for w in words {
        if let Some(v) = w.strip_prefix("handler=") {
            h.handler = v.to_string();
        } else if let Some(v) = w.strip_prefix("witness=") {
            h.witness = v.to_string();
        } else if w == "pinned" {
            h.pinned = true;
        }
    }
    Some(h)
}

/// Reads a policy file: statements end with `;`, each optionally preceded
/// by a `-- view` header. Other comment lines are ignored.
pub fn parse_policy(text: &str, schema: &Schema) -> Result<Policy, PolicyError> {
    let mut views = Vec::new();
    let mut header: Option<Header> = None;
    let mut buf = String::new();
    let mut start = 0;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if buf.is_empty() {
            if line.is_empty() {
                continue;
            }
            if line.starts_with("--") {
                if let Some(h) = parse_header(line) {
                    header = Some(h);
                }
                continue;
            }
            start = n + 1;
        }
        if !buf.is_empty() {
            buf.push('\n');
        }
        buf.push_str(line);
        if let Some(stmt) = buf.strip_suffix(';') {
            let query = parse_sql(stmt)
                .and_then(|ast| to_normal_form(&ast, schema))
                .map_err(|e| PolicyError::Format {
                    line: start,
                    message: e.to_string(),
                })?;
            let h = header.take().unwrap_or(Header {
                handler: String::new(),
                witness: String::new(),
                pinned: false,
            });
            views.push(PolicyView {
                sql: unparse_view(&query, schema),
                query,
                handler: h.handler,
                witness: h.witness,
                pinned: h.pinned,
            });
            buf.clear();
        }
    }
    if !buf.trim().is_empty() {
        return Err(PolicyError::Format {
            line: start,
            message: "statement is missing its terminating `;`".into(),
        });
    }
    Ok(Policy { views })
}
