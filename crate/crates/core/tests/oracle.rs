mod common;

use common::random::{case, DOMAIN};
use common::{eval, satisfies, witness_pair, Params};
use polext::pruner::{is_allowed, verify_counterexample, ContainmentVerdict, Context, PruneConfig};
use polext::relational::{eval_normal_form, Interner};
use polext::schema::validate_instance;
use polext::{Scalar, Value};
use proptest::test_runner::{RngAlgorithm, TestRng};

fn rng(seed: u8) -> TestRng {
    TestRng::from_seed(RngAlgorithm::ChaCha, &[seed; 32])
}

#[test]
fn pruner_agrees_with_enumeration() {
    let strings = Interner::default();
    let mut rng = rng(7);
    let mut unknown = 0;
    for i in 0..100 {
        let c = case(&mut rng);
        let ctx = Context {
            schema: &c.schema,
            constraints: &c.constraints,
            strings: &strings,
        };
        let config = PruneConfig {
            bound: c.bound,
            range: (0, 2),
            ..PruneConfig::default()
        };
        let dbs = c.instances(&strings);
        let expected = witness_pair(&c.query, &c.views, &dbs, &DOMAIN, &strings);
        match is_allowed(ctx, &c.query, &c.views, &config) {
            ContainmentVerdict::Unknown => unknown += 1,
            ContainmentVerdict::Allowed => assert!(
                expected.is_none(),
                "case {i}: solver says allowed, enumeration found {expected:?}\n{}\nq: {}\nviews: {:?}",
                c.schema_text,
                c.query_sql,
                c.view_sqls
            ),
            ContainmentVerdict::NotAllowed(cx) => {
                assert!(
                    expected.is_some(),
                    "case {i}: solver says not allowed, enumeration disagrees\n{}\nq: {}\nviews: {:?}",
                    c.schema_text,
                    c.query_sql,
                    c.view_sqls
                );
                assert!(verify_counterexample(ctx, &c.query, &c.views, &cx));
                let params: Params = cx.params.clone();
                assert!(satisfies(&cx.first, &c.constraints, &strings));
                assert!(satisfies(&cx.second, &c.constraints, &strings));
                assert_ne!(
                    eval(&c.query, &cx.first, &params, &strings),
                    eval(&c.query, &cx.second, &params, &strings)
                );
            }
        }
    }
    assert!(unknown <= 2, "{unknown} unknown verdicts");
}

#[test]
fn evaluators_agree() {
    let strings = Interner::default();
    let mut rng = rng(11);
    for _ in 0..40 {
        let c = case(&mut rng);
        let dbs = c.instances(&strings);
        let step = (dbs.len() / 50).max(1);
        for db in dbs.iter().step_by(step) {
            for uid in DOMAIN {
                let params: Params = [("MyUserId".to_string(), Some(uid))].into_iter().collect();
                let scalar = |s: &Scalar| -> Value {
                    match s {
                        Scalar::Session(_) => Some(uid),
                        lit => lit.literal_value(&strings).unwrap_or(None),
                    }
                };
                for q in c.views.iter().chain([&c.query]) {
                    let ours = eval(q, db, &params, &strings);
                    let theirs: std::collections::BTreeSet<Vec<Value>> =
                        eval_normal_form(q, &c.schema, db, &scalar)
                            .into_iter()
                            .collect();
                    assert_eq!(ours, theirs);
                }
            }
        }
    }
}

#[test]
fn instance_validation_agrees() {
    let strings = Interner::default();
    let mut rng = rng(13);
    for _ in 0..30 {
        let c = case(&mut rng);
        let all_tables: Vec<&str> = c.schema.tables.iter().map(|t| t.name.as_str()).collect();
        // Enumerate without filtering, then compare the two checkers.
        let dbs = common::instances(&c.schema, &all_tables, 1, &DOMAIN, &[], &strings);
        for db in &dbs {
            assert_eq!(
                satisfies(db, &c.constraints, &strings),
                validate_instance(db, &c.constraints, &c.schema, &strings).is_ok(),
                "{}\n{db:?}",
                c.schema_text
            );
        }
    }
}
