use std::collections::BTreeMap;

use super::{ExploreConfig, Subject};
use crate::handlers::{ConcreteInput, Record};
use crate::relational::{NoColumn, SESSION_PARAMS};
use crate::schema::ColumnType;
use crate::solver::{
    bool_domain, decode_instance, encode_instance, encode_predicate, encode_query, fresh_value,
    Formula, Model, SymEnv, SymInstance, SymValue, Vocab,
};

/// Path condition of a record prefix over one symbolic input.
pub struct PathEncoding {
    pub vocab: Vocab,
    /// Instance axioms, parameter domains and multi-row lemmas.
    pub hard: Vec<Formula>,
    /// One formula per record, labeled by its position in the prefix.
    pub labeled: Vec<(usize, Formula)>,
    pub inst: SymInstance,
    pub session: BTreeMap<String, SymValue>,
    pub request: BTreeMap<String, SymValue>,
}

impl PathEncoding {
    /// The concrete input described by a model. The id is left empty.
    pub fn decode(&self, m: &Model) -> ConcreteInput {
        let eval = |vs: &BTreeMap<String, SymValue>| {
            vs.iter().map(|(k, v)| (k.clone(), v.eval(m))).collect()
        };
        ConcreteInput {
            id: String::new(),
            db: decode_instance(&self.inst, m),
            session: eval(&self.session),
            request: eval(&self.request),
        }
    }
}

/// Formulas for `records` in order. Result rows get symbols under `ns`.
fn encode_records(
    subject: Subject<'_>,
    records: &[Record],
    base: &SymEnv<'_>,
    inst: &SymInstance,
    vocab: &mut Vocab,
    ns: &str,
) -> Vec<(Formula, Formula)> {
    let mut env = base.clone();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        match r {
            Record::Query {
                i,
                sql,
                params,
                empty,
            } => {
                let rq = &subject.handler.queries[sql];
                let q = encode_query(
                    rq,
                    params,
                    &env,
                    inst,
                    subject.schema,
                    vocab,
                    &format!("{ns}r{i}"),
                );
                env.rows.insert(*i, q.row.clone());
                let f = if *empty {
                    q.non_empty.not()
                } else {
                    Formula::and_all([
                        q.non_empty.clone(),
                        q.row_def.clone(),
                        q.at_most_one.clone(),
                    ])
                };
                out.push((f, q.at_most_one));
            }
            Record::Branch { cond, out: taken } => {
                let f = encode_predicate(cond, &|c: &NoColumn| match *c {}, &|s| env.value(s, &[]));
                out.push((if *taken { f } else { f.not() }, Formula::tt()));
            }
        }
    }
    out
}

/// Encodes `path` together with the at-most-one-row lemmas learned so far.
pub fn encode_path(
    subject: Subject<'_>,
    config: &ExploreConfig,
    path: &[Record],
    lemmas: &[Vec<Record>],
) -> PathEncoding {
    let mut vocab = Vocab::new(config.range);
    let tables = subject
        .schema
        .tables
        .iter()
        .map(|t| t.name.clone())
        .collect();
    let inst = encode_instance(
        &mut vocab,
        subject.schema,
        subject.constraints,
        subject.strings,
        config.bound,
        &tables,
        "",
    );
    let mut hard = inst.axioms.clone();
    let mut env = SymEnv::new(subject.strings);
    for p in SESSION_PARAMS {
        env.session
            .insert(p.to_string(), fresh_value(&mut vocab, p, false));
    }
    for (name, ty) in &subject.handler.handler.decl.params {
        let v = fresh_value(&mut vocab, &format!(":{name}"), false);
        if *ty == ColumnType::Bool {
            hard.push(bool_domain(&v));
        }
        env.request.insert(name.clone(), v);
    }
    for (k, lemma) in lemmas.iter().enumerate() {
        let Some((last, before)) = lemma.split_last() else {
            continue;
        };
        let fs = encode_records(subject, lemma, &env, &inst, &mut vocab, &format!("l{k}."));
        let premise = Formula::and_all(fs[..before.len()].iter().map(|(f, _)| f.clone()));
        debug_assert!(matches!(last, Record::Query { .. }));
        hard.push(premise.implies(&fs[before.len()].1));
    }
    let labeled = encode_records(subject, path, &env, &inst, &mut vocab, "")
        .into_iter()
        .map(|(f, _)| f)
        .enumerate()
        .collect();
    PathEncoding {
        vocab,
        hard,
        labeled,
        inst,
        session: env.session,
        request: env.request,
    }
}
