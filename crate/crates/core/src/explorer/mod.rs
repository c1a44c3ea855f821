//! Concolic exploration: pick an unexplored prefix, solve for an input that
//! follows it, run the handler on that input and merge the transcript.

mod path;
mod tree;

pub use path::{encode_path, PathEncoding};
pub use tree::{flipped, Extend, Node, PrefixTree, Status};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Duration;

use crate::handlers::{
    execute, CompiledHandler, ConcreteInput, ExecError, Record, RunStamp, Transcript,
};
use crate::relational::{Interner, MY_USER_ID, NOW};
use crate::schema::{validate_instance, Constraint, Schema};
use crate::solver::{check, CheckOptions, Verdict};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExploreConfig {
    /// Rows per table in the symbolic database.
    pub bound: usize,
    /// Inclusive range of every integer symbol.
    pub range: (i64, i64),
    pub executors: usize,
    pub timeout: Duration,
    /// Stop after this many transcripts.
    pub max_paths: usize,
    pub seed: u64,
    /// Attempts per prefix at repairing a multi-row result.
    pub repair_limit: usize,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            bound: 2,
            range: (0, 7),
            executors: 1,
            timeout: Duration::from_secs(30),
            max_paths: 1000,
            seed: 0,
            repair_limit: 4,
        }
    }
}

/// Something the driver reports while exploring.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    NewQuery {
        sql: String,
        input: String,
    },
    /// A concrete value ended up in a condition or query argument.
    NewConstant {
        message: String,
        input: String,
    },
    Infeasible {
        prefix_len: usize,
        core_len: usize,
        cached: bool,
    },
    Abandoned {
        prefix_len: usize,
        reason: String,
    },
    Repaired {
        input: String,
        query: usize,
    },
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::NewQuery { sql, input } => write!(f, "new query ({input}): {sql}"),
            Event::NewConstant { message, input } => write!(f, "new constant ({input}): {message}"),
            Event::Infeasible {
                prefix_len,
                core_len,
                cached,
            } => write!(
                f,
                "infeasible prefix of length {prefix_len} ({} core of {core_len} records)",
                if *cached { "cached" } else { "new" }
            ),
            Event::Abandoned { prefix_len, reason } => {
                write!(f, "abandoned prefix of length {prefix_len}: {reason}")
            }
            Event::Repaired { input, query } => {
                write!(
                    f,
                    "query {query} returned several rows on {input}; regenerating"
                )
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub solver_calls: usize,
    pub cache_hits: usize,
    pub repairs: usize,
}

#[derive(Clone, Debug)]
pub struct Exploration {
    pub transcripts: Vec<Transcript>,
    pub inputs: Vec<ConcreteInput>,
    pub tree: PrefixTree,
    /// False when `max_paths` stopped exploration early.
    pub complete: bool,
    pub events: Vec<Event>,
    pub stats: Stats,
}

impl Exploration {
    /// Record lists of all transcripts, as a set.
    pub fn path_set(&self) -> BTreeSet<Vec<Record>> {
        self.transcripts.iter().map(|t| t.records.clone()).collect()
    }
}

/// Static inputs of an exploration.
#[derive(Clone, Copy)]
pub struct Subject<'a> {
    pub handler: &'a CompiledHandler,
    pub schema: &'a Schema,
    pub constraints: &'a [Constraint],
    pub strings: &'a Interner,
}

enum Prepared {
    Ready(ConcreteInput),
    Infeasible { core: Vec<Record>, cached: bool },
    Abandoned(String),
}

struct Driver<'a> {
    subject: Subject<'a>,
    config: &'a ExploreConfig,
    tree: PrefixTree,
    conflicts: Vec<Vec<Record>>,
    /// Record prefixes ending in a query that must return at most one row.
    lemmas: Vec<Vec<Record>>,
    repairs: BTreeMap<usize, usize>,
    next_input: usize,
    stats: Stats,
    events: Vec<Event>,
}

impl Driver<'_> {
    fn input_id(&mut self) -> String {
        self.next_input += 1;
        format!("{}-{:04}", self.subject.handler.name(), self.next_input)
    }

    /// Empty tables and every parameter set to the low end of the range.
    fn default_input(&mut self) -> ConcreteInput {
        let lo = self.config.range.0;
        ConcreteInput {
            id: String::new(),
            db: Default::default(),
            session: [
                (MY_USER_ID.to_string(), Some(lo)),
                (NOW.to_string(), Some(lo)),
            ]
            .into(),
            request: self
                .subject
                .handler
                .handler
                .decl
                .params
                .iter()
                .map(|(n, _)| (n.clone(), Some(lo)))
                .collect(),
        }
    }

    fn prepare(&mut self, target: usize) -> Prepared {
        let path = self.tree.path(target);
        if target == PrefixTree::ROOT && self.lemmas.is_empty() {
            let input = self.default_input();
            let s = self.subject;
            if validate_instance(&input.db, s.constraints, s.schema, s.strings).is_ok() {
                return Prepared::Ready(ConcreteInput {
                    id: self.input_id(),
                    ..input
                });
            }
        }
        if let Some(core) = self
            .conflicts
            .iter()
            .find(|c| c.iter().all(|r| path.contains(r)))
        {
            self.stats.cache_hits += 1;
            return Prepared::Infeasible {
                core: core.clone(),
                cached: true,
            };
        }
        let enc = encode_path(self.subject, self.config, &path, &self.lemmas);
        let opts = CheckOptions {
            timeout: Some(self.config.timeout),
            seed: self.config.seed,
            minimize_core: true,
        };
        self.stats.solver_calls += 1;
        match check(&enc.vocab, &enc.hard, &enc.labeled, &opts) {
            Verdict::Sat(m) => {
                let mut input = enc.decode(&m);
                input.id = self.input_id();
                Prepared::Ready(input)
            }
            Verdict::Unsat(labels) => {
                let core: Vec<Record> = labels.into_iter().map(|k| path[k].clone()).collect();
                self.conflicts.push(core.clone());
                Prepared::Infeasible {
                    core,
                    cached: false,
                }
            }
            Verdict::Unknown => Prepared::Abandoned("solver timed out".into()),
        }
    }
}

fn run_batch(
    subject: Subject<'_>,
    batch: &[(usize, ConcreteInput)],
) -> Vec<Result<Transcript, ExecError>> {
    let run =
        |input: &ConcreteInput| execute(subject.handler, input, subject.schema, subject.strings);
    if batch.len() == 1 {
        return vec![run(&batch[0].1)];
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .iter()
            .map(|(_, input)| s.spawn(move || run(input)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("executor thread panicked"))
            .collect()
    })
}

/// Explores `subject.handler` until every prefix is visited, infeasible or
/// abandoned, or until `config.max_paths` transcripts exist.
pub fn explore(subject: Subject<'_>, config: &ExploreConfig) -> Exploration {
    assert!(config.bound >= 1 && config.max_paths >= 1 && config.executors >= 1);
    let mut d = Driver {
        subject,
        config,
        tree: PrefixTree::default(),
        conflicts: Vec::new(),
        lemmas: Vec::new(),
        repairs: BTreeMap::new(),
        next_input: 0,
        stats: Stats::default(),
        events: Vec::new(),
    };
    let stamp = RunStamp {
        bound: config.bound,
        range: config.range,
        seed: config.seed,
    };
    let mut transcripts = Vec::new();
    let mut inputs = Vec::new();
    let mut seen_queries = BTreeSet::new();
    let mut seen_warnings = BTreeSet::new();
    let mut complete = true;
    loop {
        let mut batch = Vec::new();
        while batch.len() < config.executors {
            if transcripts.len() + batch.len() >= config.max_paths {
                break;
            }
            let Some(target) = d.tree.next_target() else {
                break;
            };
            let prefix_len = d.tree.path(target).len();
            match d.prepare(target) {
                Prepared::Ready(input) => {
                    d.tree.set_status(target, Status::Scheduled);
                    batch.push((target, input));
                }
                Prepared::Infeasible { core, cached } => {
                    d.tree.set_status(target, Status::Infeasible);
                    d.events.push(Event::Infeasible {
                        prefix_len,
                        core_len: core.len(),
                        cached,
                    });
                }
                Prepared::Abandoned(reason) => {
                    d.tree.set_status(target, Status::Abandoned);
                    d.events.push(Event::Abandoned { prefix_len, reason });
                }
            }
        }
        if batch.is_empty() {
            if d.tree.next_target().is_some() {
                complete = false;
            }
            break;
        }
        let results = run_batch(subject, &batch);
        for ((target, input), result) in batch.into_iter().zip(results) {
            let prefix_len = d.tree.path(target).len();
            match result {
                Ok(mut t) => match d.tree.extend(&t.records, Some(target)) {
                    Extend::Ok { .. } => {
                        for r in &t.records {
                            if let Record::Query { sql, .. } = r {
                                if seen_queries.insert(sql.clone()) {
                                    d.events.push(Event::NewQuery {
                                        sql: sql.clone(),
                                        input: input.id.clone(),
                                    });
                                }
                            }
                        }
                        for w in &t.meta.warnings {
                            if seen_warnings.insert(w.clone()) {
                                d.events.push(Event::NewConstant {
                                    message: w.clone(),
                                    input: input.id.clone(),
                                });
                            }
                        }
                        t.meta.config = Some(stamp.clone());
                        transcripts.push(t);
                        inputs.push(input);
                    }
                    Extend::Diverged { depth } => {
                        d.tree.set_status(target, Status::Abandoned);
                        d.events.push(Event::Abandoned {
                            prefix_len,
                            reason: format!(
                                "run on {} left the prefix at record {}",
                                input.id,
                                depth + 1
                            ),
                        });
                    }
                },
                Err(ExecError::MultiRow { query, partial, .. }) => {
                    let n = d.repairs.entry(target).or_insert(0);
                    *n += 1;
                    if *n > config.repair_limit {
                        d.tree.set_status(target, Status::Abandoned);
                        d.events.push(Event::Abandoned {
                            prefix_len,
                            reason: format!("query {query} keeps returning several rows"),
                        });
                    } else {
                        d.stats.repairs += 1;
                        d.lemmas.push(partial.records);
                        d.tree.set_status(target, Status::Pending);
                        d.events.push(Event::Repaired {
                            input: input.id.clone(),
                            query,
                        });
                    }
                }
                Err(e) => {
                    d.tree.set_status(target, Status::Abandoned);
                    d.events.push(Event::Abandoned {
                        prefix_len,
                        reason: format!("executor failed on {}: {e}", input.id),
                    });
                }
            }
        }
    }
    Exploration {
        transcripts,
        inputs,
        tree: d.tree,
        complete,
        events: d.events,
        stats: d.stats,
    }
}
