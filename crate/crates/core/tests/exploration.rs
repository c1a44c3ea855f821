mod common;

use std::collections::BTreeMap;

use common::{corpus, eval_with, holds, Bindings};
use polext::explorer::{explore, ExploreConfig, Status, Subject};
use polext::handlers::{execute, Record};
use polext::pipeline::{Project, RunDir};
use polext::relational::NoColumn;
use polext::{parse_sql, to_normal_form, Scalar};

fn projects() -> Vec<Project> {
    ["gradesheet", "coursework"]
        .iter()
        .map(|c| RunDir::new(corpus(c)).load((0, 7)).expect("corpus loads"))
        .collect()
}

fn subject<'a>(p: &'a Project, h: &str) -> Subject<'a> {
    Subject {
        handler: p.handler(h).unwrap(),
        schema: &p.schema,
        constraints: &p.constraints.constraints,
        strings: &p.strings,
    }
}

fn config(p: &Project, executors: usize) -> ExploreConfig {
    ExploreConfig {
        range: p.fit_range((0, 7)),
        executors,
        ..ExploreConfig::default()
    }
}

#[test]
fn exploration_terminates_and_covers_every_sibling() {
    for p in projects() {
        for h in p.handlers.keys() {
            let ex = explore(subject(&p, h), &config(&p, 1));
            assert!(ex.complete, "{h}");
            for (i, n) in ex.tree.nodes.iter().enumerate() {
                assert!(
                    matches!(n.status, Status::Visited | Status::Infeasible),
                    "{h}: node {i} left {:?}",
                    n.status
                );
            }
        }
    }
}

#[test]
fn visited_paths_do_not_depend_on_executor_count() {
    for p in projects() {
        for h in p.handlers.keys() {
            let one = explore(subject(&p, h), &config(&p, 1)).path_set();
            let three = explore(subject(&p, h), &config(&p, 3)).path_set();
            let again = explore(subject(&p, h), &config(&p, 1)).path_set();
            assert_eq!(one, three, "{h}");
            assert_eq!(one, again, "{h}");
        }
    }
}

/// Replays every explored input twice, and checks each record against a
/// direct evaluation of the input: query emptiness and branch outcomes.
#[test]
fn transcripts_agree_with_concrete_evaluation() {
    for p in projects() {
        for h in p.handlers.keys() {
            let compiled = p.handler(h).unwrap();
            let ex = explore(subject(&p, h), &config(&p, 1));
            for (t, input) in ex.transcripts.iter().zip(&ex.inputs) {
                let first = execute(compiled, input, &p.schema, &p.strings).unwrap();
                let second = execute(compiled, input, &p.schema, &p.strings).unwrap();
                assert_eq!(first.to_jsonl(), second.to_jsonl());
                assert_eq!(first.records, t.records);

                let mut params = BTreeMap::new();
                for (k, v) in &input.session {
                    params.insert(k.clone(), *v);
                }
                for (k, v) in &input.request {
                    params.insert(format!(":{k}"), *v);
                }
                let mut b = Bindings {
                    params,
                    rows: BTreeMap::new(),
                    strings: Some(&p.strings),
                };
                // Rows of queries outside the project-select-join class are
                // not recomputed; branches that read them are skipped.
                let mut opaque = Vec::new();
                for r in &t.records {
                    match r {
                        Record::Query {
                            i,
                            sql,
                            params,
                            empty,
                        } => {
                            for s in params {
                                assert!(
                                    matches!(
                                        s,
                                        Scalar::Session(_)
                                            | Scalar::Request(_)
                                            | Scalar::RowCol { .. }
                                    ),
                                    "{h}: concrete parameter {s:?}"
                                );
                            }
                            let nf = parse_sql(sql).and_then(|a| to_normal_form(&a, &p.schema));
                            let Ok(nf) = nf else {
                                opaque.push(*i);
                                continue;
                            };
                            let rows = eval_with(&nf.bind(params), &input.db, &b);
                            assert!(
                                rows.len() <= 1,
                                "{h} {}: query {i} returned {} rows",
                                input.id,
                                rows.len()
                            );
                            assert_eq!(rows.is_empty(), *empty, "{h} {}: query {i}", input.id);
                            if let Some(row) = rows.into_iter().next() {
                                b.rows.insert(*i, row);
                            }
                        }
                        Record::Branch { cond, out } => {
                            let reads_opaque = cond
                                .scalars()
                                .iter()
                                .any(|s| matches!(s, Scalar::RowCol { query, .. } if opaque.contains(query)));
                            if !reads_opaque {
                                assert_eq!(
                                    holds(cond, &|c: &NoColumn| match *c {}, &b),
                                    *out,
                                    "{h} {}: branch {cond:?}",
                                    input.id
                                );
                            }
                        }
                    }
                }
            }
        }
    }
}
