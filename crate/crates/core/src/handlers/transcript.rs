use serde::{Deserialize, Serialize};

use crate::relational::{NoColumn, Predicate, Scalar};

/// One observable event of a run.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "t")]
pub enum Record {
    /// The `i`-th query (1-based) was issued with `params` and its result
    /// was empty or not.
    #[serde(rename = "Q")]
    Query {
        i: usize,
        sql: String,
        params: Vec<Scalar>,
        empty: bool,
    },
    /// The handler branched on `cond` and took the `out` side.
    #[serde(rename = "B")]
    Branch {
        cond: Predicate<NoColumn>,
        out: bool,
    },
}

impl Record {
    /// Branch records are kept with any top-level negation folded into the
    /// outcome.
    pub fn branch(cond: Predicate<NoColumn>, out: bool) -> Record {
        match cond {
            Predicate::Not(inner) => Record::branch(*inner, !out),
            cond => Record::Branch { cond, out },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Returned,
    Aborted(u16),
}

/// Exploration settings a transcript was produced under.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStamp {
    pub bound: usize,
    pub range: (i64, i64),
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptMeta {
    pub handler: String,
    pub input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RunStamp>,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transcript {
    pub meta: TranscriptMeta,
    pub records: Vec<Record>,
    /// Handler source line that produced each record.
    pub lines: Vec<usize>,
}

impl Transcript {
    pub fn to_jsonl(&self) -> String {
        self.render(None)
    }

    /// Like `to_jsonl`, with each record suffixed by ` @<file>:<line>`.
    pub fn to_jsonl_annotated(&self, file: &str) -> String {
        self.render(Some(file))
    }

    fn render(&self, file: Option<&str>) -> String {
        let mut out = serde_json::to_string(&self.meta).expect("serializable");
        out.push('\n');
        for (k, r) in self.records.iter().enumerate() {
            out.push_str(&serde_json::to_string(r).expect("serializable"));
            if let Some(f) = file {
                out.push_str(&format!(
                    " @{f}:{}",
                    self.lines.get(k).copied().unwrap_or(0)
                ));
            }
            out.push('\n');
        }
        out
    }

    /// Reads a transcript written by `to_jsonl`. Source lines are not
    /// stored and come back as 0.
    pub fn from_jsonl(text: &str) -> Result<Transcript, serde_json::Error> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let meta: TranscriptMeta = match lines.next() {
            Some(l) => serde_json::from_str(l)?,
            None => serde_json::from_str("")?,
        };
        let records = lines
            .map(serde_json::from_str)
            .collect::<Result<Vec<Record>, _>>()?;
        Ok(Transcript {
            meta,
            lines: vec![0; records.len()],
            records,
        })
    }

    pub fn query_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| matches!(r, Record::Query { .. }))
            .count()
    }
}
