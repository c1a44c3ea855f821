use serde::{Deserialize, Serialize};

use crate::handlers::Record;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    /// Handed to an executor, not yet merged back.
    Scheduled,
    Visited,
    Infeasible,
    Abandoned,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    /// The condition and its outcome; `None` only for the root.
    pub record: Option<Record>,
    pub status: Status,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// Tree of observed record prefixes. Every record is a branch point: a
/// query's sibling has the opposite emptiness, a branch's the opposite
/// outcome.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrefixTree {
    pub nodes: Vec<Node>,
}

impl Default for PrefixTree {
    fn default() -> Self {
        PrefixTree {
            nodes: vec![Node {
                record: None,
                status: Status::Pending,
                parent: None,
                children: Vec::new(),
            }],
        }
    }
}

/// The same condition with the other outcome.
pub fn flipped(r: &Record) -> Record {
    match r {
        Record::Query {
            i,
            sql,
            params,
            empty,
        } => Record::Query {
            i: *i,
            sql: sql.clone(),
            params: params.clone(),
            empty: !empty,
        },
        Record::Branch { cond, out } => Record::Branch {
            cond: cond.clone(),
            out: !out,
        },
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Extend {
    Ok {
        new_pending: usize,
    },
    /// The transcript left the target prefix at this depth.
    Diverged {
        depth: usize,
    },
}

impl PrefixTree {
    pub const ROOT: usize = 0;

    fn child(&self, node: usize, r: &Record) -> Option<usize> {
        self.nodes[node]
            .children
            .iter()
            .copied()
            .find(|&c| self.nodes[c].record.as_ref() == Some(r))
    }

    fn add(&mut self, parent: usize, record: Record, status: Status) -> usize {
        self.nodes.push(Node {
            record: Some(record),
            status,
            parent: Some(parent),
            children: Vec::new(),
        });
        let id = self.nodes.len() - 1;
        self.nodes[parent].children.push(id);
        id
    }

    /// Records from the root down to `node`.
    pub fn path(&self, node: usize) -> Vec<Record> {
        let mut out = Vec::new();
        let mut cur = node;
        while let Some(p) = self.nodes[cur].parent {
            out.push(self.nodes[cur].record.clone().expect("non-root node"));
            cur = p;
        }
        out.reverse();
        out
    }

    pub fn status(&self, node: usize) -> Status {
        self.nodes[node].status
    }

    pub fn set_status(&mut self, node: usize, s: Status) {
        self.nodes[node].status = s;
    }

    /// First pending node in depth-first, creation order.
    pub fn next_target(&self) -> Option<usize> {
        let mut stack = vec![Self::ROOT];
        while let Some(n) = stack.pop() {
            if self.nodes[n].status == Status::Pending {
                return Some(n);
            }
            stack.extend(self.nodes[n].children.iter().rev());
        }
        None
    }

    /// Marks the path of `records` visited, adding pending siblings for
    /// every branch point not seen before. With a `target`, the records must
    /// start with the target's path.
    pub fn extend(&mut self, records: &[Record], target: Option<usize>) -> Extend {
        if let Some(t) = target {
            let prefix = self.path(t);
            if let Some(depth) = (0..prefix.len()).find(|&d| records.get(d) != Some(&prefix[d])) {
                return Extend::Diverged { depth };
            }
        }
        let mut new_pending = 0;
        let mut cur = Self::ROOT;
        self.nodes[cur].status = Status::Visited;
        for r in records {
            let next = match self.child(cur, r) {
                Some(c) => c,
                None => self.add(cur, r.clone(), Status::Visited),
            };
            self.nodes[next].status = Status::Visited;
            let sib = flipped(r);
            if self.child(cur, &sib).is_none() {
                self.add(cur, sib, Status::Pending);
                new_pending += 1;
            }
            cur = next;
        }
        Extend::Ok { new_pending }
    }

    pub fn count(&self, s: Status) -> usize {
        self.nodes.iter().filter(|n| n.status == s).count()
    }

    /// Root-to-leaf visited paths.
    pub fn visited_paths(&self) -> Vec<Vec<Record>> {
        (0..self.nodes.len())
            .filter(|&n| {
                self.nodes[n].status == Status::Visited
                    && !self.nodes[n]
                        .children
                        .iter()
                        .any(|&c| self.nodes[c].status == Status::Visited)
            })
            .map(|n| self.path(n))
            .collect()
    }
}
