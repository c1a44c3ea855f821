//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::random::{case, DOMAIN};
use common::{conditioned_rows, corpus, eval, instances, witness_pair, Params};
use polext::explorer::ExploreConfig;
use polext::handlers::{Outcome, Record, Transcript, TranscriptMeta};
use polext::pipeline::{policy_from_transcripts, Project, RunDir, POLICIES_DIR, POLICY_FILE};
use polext::policygen::{
    generate_view, remove_request_params, simplify, to_conditioned_queries, Policy, SimplifyConfig,
    Steps,
};
use polext::pruner::{is_allowed, verify_counterexample, ContainmentVerdict, Context, PruneConfig};
use polext::relational::{Interner, Term};
use polext::{parse_sql, to_normal_form, NormalFormQuery, Predicate, Scalar, Schema};
use proptest::test_runner::{RngAlgorithm, TestRng};
use tempfile::TempDir;

const ROLE_SQL: &str = "SELECT * FROM roles WHERE user_id = ? AND course_id = ?";
const GRADES_SQL: &str = "SELECT * FROM grades WHERE course_id = ?";

/// The handwritten grade-sheet policy.
const HANDWRITTEN: [&str; 2] = [
    "SELECT * FROM roles WHERE user_id = MyUserId",
    "SELECT grades.* FROM roles, grades WHERE roles.user_id = MyUserId AND roles.is_instructor \
     AND grades.course_id = roles.course_id",
];

/// Expected text of the extracted instructor view.
const EXTRACTED_GRADES_VIEW: &str = "SELECT * FROM roles, grades\nWHERE roles.user_id = MyUserId\n  AND roles.is_instructor\n  AND grades.course_id = roles.course_id";

/// Accumulators after the role query, after the instructor branch, and
/// the full view, with the request parameter still in place.
const ACCUMULATORS: [&str; 3] = [
    "SELECT * FROM roles WHERE user_id = MyUserId AND course_id = :CourseId",
    "SELECT * FROM roles WHERE user_id = MyUserId AND course_id = :CourseId AND is_instructor",
    "SELECT roles.*, grades.* FROM roles, grades WHERE roles.user_id = MyUserId \
     AND roles.course_id = :CourseId AND roles.is_instructor AND grades.course_id = roles.course_id",
];

type Outcome2 = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn nf(sql: &str, schema: &Schema) -> NormalFormQuery {
    let ast = parse_sql(sql).unwrap_or_else(|e| panic!("{sql}: {e}"));
    to_normal_form(&ast, schema).unwrap_or_else(|e| panic!("{sql}: {e}"))
}

/// The issued-query transcript of an instructor viewing a grade sheet.
fn instructor_transcript() -> Transcript {
    Transcript {
        meta: TranscriptMeta {
            handler: "view_grade_sheet".into(),
            input: "instructor".into(),
            config: None,
            outcome: Outcome::Returned,
            warnings: vec![],
        },
        records: instructor_records(),
        lines: vec![2, 4, 5],
    }
}

fn instructor_records() -> Vec<Record> {
    vec![
        Record::Query {
            i: 1,
            sql: ROLE_SQL.into(),
            params: vec![
                Scalar::Session("MyUserId".into()),
                Scalar::Request("CourseId".into()),
            ],
            empty: false,
        },
        Record::Branch {
            cond: Predicate::Truthy(Term::Scalar(Scalar::RowCol {
                query: 1,
                column: 2,
            })),
            out: true,
        },
        Record::Query {
            i: 2,
            sql: GRADES_SQL.into(),
            params: vec![Scalar::RowCol {
                query: 1,
                column: 1,
            }],
            empty: false,
        },
    ]
}

/// Copies the inputs of a corpus directory (schema, constraints, handlers).
fn stage(name: &str) -> TempDir {
    let src = corpus(name);
    let tmp = TempDir::new().expect("temp dir");
    for f in ["schema.txt", "constraints.txt", "narrow.sql", "broader.sql"] {
        if src.join(f).exists() {
            fs::copy(src.join(f), tmp.path().join(f)).expect("copy");
        }
    }
    if src.join("handlers").is_dir() {
        fs::create_dir_all(tmp.path().join("handlers")).unwrap();
        for e in fs::read_dir(src.join("handlers")).unwrap() {
            let p = e.unwrap().path();
            fs::copy(&p, tmp.path().join("handlers").join(p.file_name().unwrap())).unwrap();
        }
    }
    tmp
}

struct Run {
    _tmp: TempDir,
    dir: RunDir,
    project: Project,
    merged: Policy,
    paths: BTreeMap<String, usize>,
}

fn prune_config(project: &Project) -> PruneConfig {
    PruneConfig {
        range: project.fit_range((0, 7)),
        ..PruneConfig::default()
    }
}

/// Explore every handler, generate per-handler policies and merge them.
fn run_pipeline(name: &str, seed: u64) -> Run {
    let tmp = stage(name);
    let dir = RunDir::new(tmp.path());
    let project = dir.load((0, 7)).expect("load");
    let config = ExploreConfig {
        seed,
        ..ExploreConfig::default()
    };
    let mut paths = BTreeMap::new();
    let names: Vec<String> = project.handlers.keys().cloned().collect();
    for h in &names {
        let ex = dir.explore(&project, h, &config).expect("explore");
        assert!(ex.complete, "{h}: exploration cut off");
        paths.insert(h.clone(), ex.transcripts.len());
        let simplify = SimplifyConfig {
            range: project.fit_range((0, 7)),
            ..SimplifyConfig::default()
        };
        dir.policy_gen(&project, h, &simplify, &prune_config(&project))
            .unwrap_or_else(|e| panic!("{h}: {e}"));
    }
    let merged = dir
        .merge(&project, &[], &prune_config(&project))
        .expect("merge");
    Run {
        _tmp: tmp,
        dir,
        project,
        merged,
        paths,
    }
}

fn mutually_allowed(
    ctx: Context<'_>,
    a: &[NormalFormQuery],
    b: &[NormalFormQuery],
    config: &PruneConfig,
) -> Result<(), String> {
    for (x, ys, label) in [(a, b, "first by second"), (b, a, "second by first")] {
        for q in x {
            let v = is_allowed(ctx, q, ys, config);
            ensure(
                v.is_allowed(),
                format!(
                    "{label}: {} gave {}",
                    q.to_sql(ctx.schema),
                    verdict_name(&v)
                ),
            )?;
        }
    }
    Ok(())
}

fn verdict_name(v: &ContainmentVerdict) -> &'static str {
    match v {
        ContainmentVerdict::Allowed => "allowed",
        ContainmentVerdict::NotAllowed(_) => "not allowed",
        ContainmentVerdict::Unknown => "unknown",
    }
}

fn golden() -> Outcome2 {
    let start = Instant::now();
    let run = run_pipeline("gradesheet", 0);
    let paths = run.paths["view_grade_sheet"];
    ensure(paths == 4, format!("{paths} paths explored, expected 4"))?;
    let transcripts = run
        .dir
        .transcripts(Some("view_grade_sheet"))
        .map_err(|e| e.to_string())?;
    ensure(
        transcripts
            .iter()
            .any(|t| t.records == instructor_records()),
        "instructor transcript not among the explored paths",
    )?;
    let policy = &run.merged;
    ensure(
        policy.len() == 2,
        format!("{} views, expected 2", policy.len()),
    )?;
    let schema = &run.project.schema;
    let handwritten: Vec<NormalFormQuery> = HANDWRITTEN.iter().map(|s| nf(s, schema)).collect();
    mutually_allowed(
        run.project.context(),
        &policy.queries(),
        &handwritten,
        &prune_config(&run.project),
    )?;
    ensure(
        policy.views.iter().any(|v| v.sql == EXTRACTED_GRADES_VIEW),
        format!("no view reads\n{EXTRACTED_GRADES_VIEW}"),
    )?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!("4 paths, instructor transcript found, 2 views equivalent to the handwritten pair, {secs:.2}s"))
}

fn accumulators() -> Outcome2 {
    let schema =
        Schema::parse(&fs::read_to_string(corpus("gradesheet").join("schema.txt")).unwrap())
            .unwrap();
    let strings = Interner::default();
    let cqs =
        to_conditioned_queries(&[instructor_transcript()], &schema).map_err(|e| e.to_string())?;
    let cq = &cqs[1];
    let (v, trace) = generate_view(cq, &schema).map_err(|e| e.to_string())?;
    ensure(
        trace.len() == 2,
        format!("trace has {} entries", trace.len()),
    )?;
    let ours = [&trace[0], &trace[1], &v];
    let names = vec!["MyUserId".to_string(), ":CourseId".to_string()];
    let assignments = common::param_assignments(&names, &DOMAIN);
    let roles_only = instances(&schema, &["roles"], 2, &DOMAIN, &[], &strings);
    let with_grades = instances(&schema, &["roles", "grades"], 2, &DOMAIN, &[], &strings);
    let mut checked = 0usize;
    for (k, (mine, text)) in ours.iter().zip(ACCUMULATORS).enumerate() {
        let expected = nf(text, &schema);
        let dbs = if k < 2 { &roles_only } else { &with_grades };
        for db in dbs {
            for p in &assignments {
                let a = eval(mine, db, p, &strings);
                ensure(
                    a == eval(&expected, db, p, &strings),
                    format!("accumulator {} differs on {db:?} {p:?}", k + 1),
                )?;
                if k == 2 {
                    ensure(
                        a == conditioned_rows(cq, db, p, &strings),
                        "view differs from its definition",
                    )?;
                }
                checked += 1;
            }
        }
    }
    Ok(format!(
        "3 accumulators equal on {checked} instance/parameter pairs"
    ))
}

fn completeness(run: &Run) -> Outcome2 {
    let ctx = run.project.context();
    let config = prune_config(&run.project);
    let views = run.merged.queries();
    let mut checked = 0;
    let mut violations = Vec::new();
    for h in run.project.handlers.keys() {
        let transcripts = run.dir.transcripts(Some(h)).map_err(|e| e.to_string())?;
        let raw =
            to_conditioned_queries(&transcripts, &run.project.schema).map_err(|e| e.to_string())?;
        let simplified = simplify(
            raw.clone(),
            &run.project.schema,
            ctx.constraints,
            ctx.strings,
            &SimplifyConfig {
                range: config.range,
                ..SimplifyConfig::default()
            },
        );
        for cq in raw.iter().chain(&simplified) {
            let (v, _) = generate_view(cq, &run.project.schema).map_err(|e| e.to_string())?;
            let v =
                remove_request_params(&v, &run.project.schema).map_err(|e| format!("{h}: {e}"))?;
            let verdict = is_allowed(ctx, &v, &views, &config);
            if !verdict.is_allowed() {
                violations.push(format!(
                    "{h} {}: {}",
                    cq.provenance.input,
                    verdict_name(&verdict)
                ));
            }
            checked += 1;
        }
    }
    ensure(run.project.handlers.len() >= 5, "fewer than 5 handlers")?;
    ensure(violations.is_empty(), violations.join("; "))?;
    Ok(format!(
        "{} handlers, {checked} conditioned-query views allowed by the {}-view merged policy",
        run.project.handlers.len(),
        run.merged.len()
    ))
}

fn pruner_oracle() -> Outcome2 {
    const CASES: usize = 250;
    let strings = Interner::default();
    let mut rng = TestRng::from_seed(RngAlgorithm::ChaCha, &[42; 32]);
    let (mut allowed, mut refused, mut unknown) = (0, 0, 0);
    for i in 0..CASES {
        let c = case(&mut rng);
        let ctx = Context {
            schema: &c.schema,
            constraints: &c.constraints,
            strings: &strings,
        };
        let config = PruneConfig {
            bound: c.bound,
            range: (0, 2),
            timeout: Duration::from_secs(5),
            ..PruneConfig::default()
        };
        let dbs = c.instances(&strings);
        let expected = witness_pair(&c.query, &c.views, &dbs, &DOMAIN, &strings);
        let describe = || format!("case {i}: {} | {:?}", c.query_sql, c.view_sqls);
        match is_allowed(ctx, &c.query, &c.views, &config) {
            ContainmentVerdict::Unknown => unknown += 1,
            ContainmentVerdict::Allowed => {
                ensure(
                    expected.is_none(),
                    format!("{}: allowed, enumerator disagrees", describe()),
                )?;
                allowed += 1;
            }
            ContainmentVerdict::NotAllowed(cx) => {
                ensure(
                    expected.is_some(),
                    format!("{}: not allowed, enumerator disagrees", describe()),
                )?;
                ensure(
                    verify_counterexample(ctx, &c.query, &c.views, &cx),
                    "counterexample does not verify",
                )?;
                let p: Params = cx.params.clone();
                ensure(
                    eval(&c.query, &cx.first, &p, &strings)
                        != eval(&c.query, &cx.second, &p, &strings),
                    format!(
                        "{}: counterexample instances agree on the query",
                        describe()
                    ),
                )?;
                refused += 1;
            }
        }
    }
    let rate = unknown as f64 / CASES as f64;
    ensure(rate < 0.05, format!("unknown rate {:.1}%", rate * 100.0))?;
    Ok(format!(
        "{CASES} cases: {allowed} allowed, {refused} not allowed, {unknown} unknown, all agree with enumeration"
    ))
}

const STEP_NAMES: [&str; 6] = [
    "vacuous-branches",
    "propagate-equalities",
    "duplicate-queries",
    "vacuous-queries",
    "merge-branches",
    "subsumed",
];

fn flag<'a>(s: &'a mut Steps, step: &str) -> &'a mut bool {
    match step {
        "vacuous-branches" => &mut s.vacuous_branches,
        "propagate-equalities" => &mut s.propagate_equalities,
        "duplicate-queries" => &mut s.duplicate_queries,
        "vacuous-queries" => &mut s.vacuous_queries,
        "merge-branches" => &mut s.merge_branches,
        "subsumed" => &mut s.subsumed,
        _ => unreachable!(),
    }
}

fn without(step: &str) -> Steps {
    let mut s = Steps::default();
    *flag(&mut s, step) = false;
    s
}

fn only(step: &str) -> Steps {
    let mut s = Steps::none();
    *flag(&mut s, step) = true;
    s
}

fn simplification(runs: &[&Run]) -> Outcome2 {
    let mut compared = 0;
    let mut changed = std::collections::BTreeSet::new();
    for run in runs {
        let config = prune_config(&run.project);
        let ctx = run.project.context();
        for h in run.project.handlers.keys() {
            let transcripts = run.dir.transcripts(Some(h)).map_err(|e| e.to_string())?;
            let cfg = |steps| SimplifyConfig {
                steps,
                range: config.range,
                ..SimplifyConfig::default()
            };
            let (full, _) = policy_from_transcripts(
                &run.project,
                &transcripts,
                &cfg(Steps::default()),
                &config,
            )
            .map_err(|e| e.to_string())?;
            for step in STEP_NAMES {
                let (other, _) = policy_from_transcripts(
                    &run.project,
                    &transcripts,
                    &cfg(without(step)),
                    &config,
                )
                .map_err(|e| format!("{h} without {step}: {e}"))?;
                mutually_allowed(ctx, &full.queries(), &other.queries(), &config)
                    .map_err(|e| format!("{h} without {step}: {e}"))?;
                compared += 1;
                let cqs = to_conditioned_queries(&transcripts, &run.project.schema)
                    .map_err(|e| e.to_string())?;
                let simp = |steps| {
                    simplify(
                        cqs.clone(),
                        &run.project.schema,
                        ctx.constraints,
                        ctx.strings,
                        &cfg(steps),
                    )
                };
                if simp(Steps::none()) != simp(only(step))
                    || simp(Steps::default()) != simp(without(step))
                {
                    changed.insert(step);
                }
            }
        }
    }

    // Two conditioned queries that differ only in one branch outcome.
    let schema =
        Schema::parse(&fs::read_to_string(corpus("gradesheet").join("schema.txt")).unwrap())
            .unwrap();
    let a = instructor_transcript();
    let mut b = instructor_transcript();
    b.meta.input = "student".into();
    if let Record::Branch { out, .. } = &mut b.records[1] {
        *out = false;
    }
    let cqs: Vec<_> = to_conditioned_queries(&[a, b], &schema)
        .map_err(|e| e.to_string())?
        .into_iter()
        .filter(|cq| cq.sql == GRADES_SQL)
        .collect();
    let before = cqs.len();
    let steps = Steps {
        merge_branches: true,
        ..Steps::none()
    };
    let after = simplify(
        cqs,
        &schema,
        &[],
        &Interner::default(),
        &SimplifyConfig {
            steps,
            ..SimplifyConfig::default()
        },
    )
    .len();
    ensure(
        before == 2 && after == 1,
        format!("branch merge went from {before} to {after}"),
    )?;
    Ok(format!(
        "{compared} handler/step pairs mutually allowed (steps that fire on the corpus: {}); branch merge 2 -> 1",
        changed.into_iter().collect::<Vec<_>>().join(", ")
    ))
}

fn broadening() -> Outcome2 {
    let tmp = stage("profiles");
    let dir = RunDir::new(tmp.path());
    let project = dir.load((0, 2)).map_err(|e| e.to_string())?;
    let schema = &project.schema;
    let narrow_path = tmp.path().join("narrow.sql");
    let narrow = dir
        .load_policy(&narrow_path, schema)
        .map_err(|e| e.to_string())?;
    let broader = dir
        .load_policy(&tmp.path().join("broader.sql"), schema)
        .map_err(|e| e.to_string())?;
    ensure(
        narrow.len() == 6 && broader.len() == 2,
        "scenario must have 6 narrow and 2 broader views",
    )?;
    let config = PruneConfig {
        range: (0, 2),
        ..PruneConfig::default()
    };
    let (result, _) = dir
        .broaden(
            &project,
            &narrow_path,
            &tmp.path().join("broader.sql"),
            &config,
        )
        .map_err(|e| e.to_string())?;
    let pinned: Vec<_> = result.views.iter().filter(|v| v.pinned).collect();
    let kept: Vec<_> = result.views.iter().filter(|v| !v.pinned).collect();
    ensure(
        pinned.len() == 2 && kept.len() == 1,
        format!(
            "{} pinned and {} other views remain",
            pinned.len(),
            kept.len()
        ),
    )?;
    ensure(
        kept[0].query == nf("SELECT * FROM profiles WHERE owner_id = MyUserId", schema),
        format!("unexpected surviving view {}", kept[0].sql),
    )?;

    let strings = &project.strings;
    let dbs = instances(
        schema,
        &["profiles"],
        2,
        &DOMAIN,
        &project.constraints.constraints,
        strings,
    );
    let pinned_q = broader.queries();
    let final_q = result.queries();
    for v in &narrow.views {
        let survives = result.views.iter().any(|r| r.query == v.query);
        let determined = common::determined(&v.query, &pinned_q, &dbs, &DOMAIN, strings);
        ensure(
            determined != survives,
            format!(
                "oracle disagrees about {} (survives {survives}, determined {determined})",
                v.sql
            ),
        )?;
        ensure(
            common::determined(&v.query, &final_q, &dbs, &DOMAIN, strings),
            format!("{} not answerable from the result", v.sql),
        )?;
    }
    Ok(format!(
        "6 narrow + 2 pinned -> 2 pinned + 1, oracle agrees on {} instances",
        dbs.len()
    ))
}

fn policy_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    out.insert(
        POLICY_FILE.to_string(),
        fs::read(root.join(POLICY_FILE)).unwrap(),
    );
    for e in fs::read_dir(root.join(POLICIES_DIR)).unwrap() {
        let p = e.unwrap().path();
        out.insert(
            p.file_name().unwrap().to_string_lossy().into_owned(),
            fs::read(&p).unwrap(),
        );
    }
    out
}

fn determinism(first: &Run) -> Outcome2 {
    let second = run_pipeline("coursework", 0);
    let a = policy_files(&first.dir.root);
    let b = policy_files(&second.dir.root);
    ensure(a.keys().eq(b.keys()), "different policy file sets")?;
    for (name, bytes) in &a {
        ensure(*bytes == b[name], format!("{name} differs between runs"))?;
    }
    Ok(format!(
        "{} policy files byte-identical across two runs",
        a.len()
    ))
}

fn guarded(f: impl FnOnce() -> Outcome2) -> Outcome2 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(e) => Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |name: &str, start: Instant, r: Outcome2| {
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{secs:.1}s]");
            }
        }
    };

    let t = Instant::now();
    report("C1 golden grade-sheet run", t, guarded(golden));
    let t = Instant::now();
    report("C2 view accumulator fidelity", t, guarded(accumulators));

    let t = Instant::now();
    let coursework = catch_unwind(|| run_pipeline("coursework", 0));
    let gradesheet = catch_unwind(|| run_pipeline("gradesheet", 0));
    match (&coursework, &gradesheet) {
        (Ok(cw), Ok(gs)) => {
            report(
                "C3 completeness on the corpus",
                t,
                guarded(|| completeness(cw)),
            );
            let t = Instant::now();
            report("C4 pruner vs enumeration", t, guarded(pruner_oracle));
            let t = Instant::now();
            report(
                "C5 simplification soundness",
                t,
                guarded(|| simplification(&[gs, cw])),
            );
            let t = Instant::now();
            report("C6 broadening scenario", t, guarded(broadening));
            let t = Instant::now();
            report("C7 determinism", t, guarded(|| determinism(cw)));
        }
        _ => {
            for name in [
                "C3 completeness on the corpus",
                "C5 simplification soundness",
                "C7 determinism",
            ] {
                report(name, t, Err("corpus pipeline run failed".into()));
            }
            let t = Instant::now();
            report("C4 pruner vs enumeration", t, guarded(pruner_oracle));
            let t = Instant::now();
            report("C6 broadening scenario", t, guarded(broadening));
        }
    }

    if failed == 0 {
        println!("acceptance: all 7 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
