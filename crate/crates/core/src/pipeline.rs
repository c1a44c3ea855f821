//! On-disk run directories and the end-to-end steps over them.
//!
//! ```text
//! <run>/schema.txt          table declarations
//! <run>/constraints.txt     editable constraint list (generated if absent)
//! <run>/handlers/*.dsl      one handler per file
//! <run>/transcripts/<id>.jsonl
//! <run>/inputs/<id>.json
//! <run>/policies/<handler>.sql
//! <run>/policy.sql          merged policy
//! <run>/reports/
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::explorer::{explore, Exploration, ExploreConfig, Subject};
use crate::handlers::{
    compile, execute, parse_handler, CompiledHandler, ConcreteInput, ExecError, HandlerError,
    Transcript,
};
use crate::policygen::{
    generate_view, parse_policy, remove_request_params, render_policy, simplify,
    to_conditioned_queries, Policy, PolicyError, PolicyView, SimplifyConfig,
};
use crate::pruner::{self, BroadenReport, Context, PruneConfig};
use crate::relational::{Interner, Scalar};
use crate::schema::{
    generate_constraints, parse_constraints, render_constraints, ConstraintSet, Schema, SchemaError,
};

pub const SCHEMA_FILE: &str = "schema.txt";
pub const CONSTRAINTS_FILE: &str = "constraints.txt";
pub const HANDLERS_DIR: &str = "handlers";
pub const TRANSCRIPTS_DIR: &str = "transcripts";
pub const INPUTS_DIR: &str = "inputs";
pub const POLICIES_DIR: &str = "policies";
pub const REPORTS_DIR: &str = "reports";
pub const POLICY_FILE: &str = "policy.sql";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Schema {
        path: PathBuf,
        #[source]
        source: SchemaError,
    },
    #[error("{path}: {source}")]
    Handler {
        path: PathBuf,
        #[source]
        source: HandlerError,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    PolicyFile {
        path: PathBuf,
        #[source]
        source: PolicyError,
    },
    #[error("no handler named `{0}`")]
    UnknownHandler(String),
    #[error("no input with id `{0}`")]
    UnknownInput(String),
    #[error("handler `{0}` is defined twice")]
    DuplicateHandler(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("replaying `{input}`: {source}")]
    Exec {
        input: String,
        #[source]
        source: ExecError,
    },
}

impl RunError {
    /// Errors caused by the policy-generation preconditions rather than by
    /// malformed input files.
    pub fn is_refusal(&self) -> bool {
        matches!(self, RunError::Policy(_))
    }
}

fn read(path: &Path) -> Result<String, RunError> {
    fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), RunError> {
    let io = |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, text).map_err(io)
}

/// Files in `dir` with extension `ext`, sorted by name.
fn list(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, RunError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let entries = fs::read_dir(dir).map_err(|source| RunError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    out.sort();
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

/// Everything loaded from a run directory.
#[derive(Clone, Debug)]
pub struct Project {
    pub schema: Schema,
    pub constraints: ConstraintSet,
    /// Compiled handlers by name, with the file each came from.
    pub handlers: BTreeMap<String, (CompiledHandler, PathBuf)>,
    pub strings: Interner,
    /// Value range wide enough for every literal.
    pub range: (i64, i64),
}

impl Project {
    pub fn context(&self) -> Context<'_> {
        Context {
            schema: &self.schema,
            constraints: &self.constraints.constraints,
            strings: &self.strings,
        }
    }

    pub fn handler(&self, name: &str) -> Result<&CompiledHandler, RunError> {
        self.handlers
            .get(name)
            .map(|(h, _)| h)
            .ok_or_else(|| RunError::UnknownHandler(name.to_string()))
    }

    /// `base` widened so that every integer literal and interned string id
    /// is representable.
    pub fn fit_range(&self, base: (i64, i64)) -> (i64, i64) {
        let (mut lo, mut hi) = base;
        lo = lo.min(self.range.0);
        hi = hi.max(self.range.1);
        (lo, hi)
    }
}

/// Counts reported by policy generation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PolicyGenStats {
    pub transcripts: usize,
    pub cqs_before: usize,
    pub cqs_after: usize,
    pub views_before: usize,
    pub views_after: usize,
}

impl std::fmt::Display for PolicyGenStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "transcripts {}  conditioned queries {} -> {}  views {} -> {}",
            self.transcripts, self.cqs_before, self.cqs_after, self.views_before, self.views_after
        )
    }
}

/// Turns transcripts into a pruned policy.
pub fn policy_from_transcripts(
    project: &Project,
    transcripts: &[Transcript],
    simplify_config: &SimplifyConfig,
    prune_config: &PruneConfig,
) -> Result<(Policy, PolicyGenStats), PolicyError> {
    let cqs = to_conditioned_queries(transcripts, &project.schema)?;
    let mut stats = PolicyGenStats {
        transcripts: transcripts.len(),
        cqs_before: cqs.len(),
        ..PolicyGenStats::default()
    };
    let cqs = simplify(
        cqs,
        &project.schema,
        &project.constraints.constraints,
        &project.strings,
        simplify_config,
    );
    stats.cqs_after = cqs.len();
    let mut views = Vec::new();
    for cq in &cqs {
        let (v, _) = generate_view(cq, &project.schema)?;
        let v = remove_request_params(&v, &project.schema)?;
        views.push(PolicyView::new(
            v,
            &project.schema,
            &cq.provenance.handler,
            &cq.provenance.input,
        ));
    }
    let policy = pruner::union(&[Policy { views }]);
    stats.views_before = policy.len();
    let pruned = pruner::prune(project.context(), &policy, prune_config);
    stats.views_after = pruned.len();
    Ok((pruned, stats))
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn transcript_path(&self, id: &str) -> PathBuf {
        self.root.join(TRANSCRIPTS_DIR).join(format!("{id}.jsonl"))
    }

    pub fn input_path(&self, id: &str) -> PathBuf {
        self.root.join(INPUTS_DIR).join(format!("{id}.json"))
    }

    pub fn handler_policy_path(&self, handler: &str) -> PathBuf {
        self.root.join(POLICIES_DIR).join(format!("{handler}.sql"))
    }

    pub fn load_schema(&self) -> Result<Schema, RunError> {
        let path = self.path(SCHEMA_FILE);
        Schema::parse(&read(&path)?).map_err(|source| RunError::Schema { path, source })
    }

    /// Writes the generated constraint list for the schema.
    pub fn generate_constraints(&self) -> Result<String, RunError> {
        let schema = self.load_schema()?;
        let text = render_constraints(&generate_constraints(&schema));
        write(&self.path(CONSTRAINTS_FILE), &text)?;
        Ok(text)
    }

    pub fn load(&self, base_range: (i64, i64)) -> Result<Project, RunError> {
        let schema = self.load_schema()?;
        let cpath = self.path(CONSTRAINTS_FILE);
        let constraints = if cpath.exists() {
            parse_constraints(&read(&cpath)?, &schema)
        } else {
            ConstraintSet::from_entries(generate_constraints(&schema), &schema)
        }
        .map_err(|source| RunError::Schema {
            path: cpath,
            source,
        })?;
        let mut handlers = BTreeMap::new();
        let mut literals: Vec<Scalar> = Vec::new();
        for path in list(&self.path(HANDLERS_DIR), "dsl")? {
            let text = read(&path)?;
            let compiled = parse_handler(&text)
                .and_then(|h| compile(h, &schema))
                .map_err(|source| RunError::Handler {
                    path: path.clone(),
                    source,
                })?;
            literals.extend(compiled.literals());
            let name = compiled.name().to_string();
            if handlers.insert(name.clone(), (compiled, path)).is_some() {
                return Err(RunError::DuplicateHandler(name));
            }
        }
        let mut strings: Vec<String> = constraints.string_literals().into_iter().collect();
        strings.extend(literals.iter().filter_map(|s| match s {
            Scalar::Str(v) => Some(v.clone()),
            _ => None,
        }));
        let strings = Interner::from_strings(strings);
        let (mut lo, mut hi) = base_range;
        for s in &literals {
            if let Scalar::Int(v) = s {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        if !strings.is_empty() {
            hi = hi.max(strings.len() as i64 - 1);
        }
        Ok(Project {
            schema,
            constraints,
            handlers,
            strings,
            range: (lo, hi),
        })
    }

    /// Explores `handler`, replacing its earlier transcripts and inputs.
    pub fn explore(
        &self,
        project: &Project,
        handler: &str,
        config: &ExploreConfig,
    ) -> Result<Exploration, RunError> {
        let compiled = project.handler(handler)?;
        let mut config = config.clone();
        config.range = project.fit_range(config.range);
        let subject = Subject {
            handler: compiled,
            schema: &project.schema,
            constraints: &project.constraints.constraints,
            strings: &project.strings,
        };
        let result = explore(subject, &config);
        for dir in [TRANSCRIPTS_DIR, INPUTS_DIR] {
            for ext in ["jsonl", "json"] {
                for p in list(&self.path(dir), ext)? {
                    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("");
                    if stem.rsplit_once('-').is_some_and(|(h, _)| h == handler) {
                        fs::remove_file(&p).map_err(|source| RunError::Io {
                            path: p.clone(),
                            source,
                        })?;
                    }
                }
            }
        }
        for (t, input) in result.transcripts.iter().zip(&result.inputs) {
            write(&self.transcript_path(&input.id), &t.to_jsonl())?;
            let json = serde_json::to_string_pretty(input).expect("serializable");
            write(&self.input_path(&input.id), &(json + "\n"))?;
        }
        Ok(result)
    }

    /// Stored transcripts, optionally only those of one handler, in file
    /// name order.
    pub fn transcripts(&self, handler: Option<&str>) -> Result<Vec<Transcript>, RunError> {
        let mut out = Vec::new();
        for path in list(&self.path(TRANSCRIPTS_DIR), "jsonl")? {
            let t = Transcript::from_jsonl(&read(&path)?).map_err(|source| RunError::Json {
                path: path.clone(),
                source,
            })?;
            if handler.is_none_or(|h| h == t.meta.handler) {
                out.push(t);
            }
        }
        Ok(out)
    }

    pub fn load_policy(&self, path: &Path, schema: &Schema) -> Result<Policy, RunError> {
        parse_policy(&read(path)?, schema).map_err(|source| RunError::PolicyFile {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Generates and writes the policy of one handler.
    pub fn policy_gen(
        &self,
        project: &Project,
        handler: &str,
        simplify_config: &SimplifyConfig,
        prune_config: &PruneConfig,
    ) -> Result<(Policy, PolicyGenStats), RunError> {
        project.handler(handler)?;
        let transcripts = self.transcripts(Some(handler))?;
        let (policy, stats) = policy_from_transcripts(
            project,
            &transcripts,
            simplify_config,
            &self.prune_config(project, prune_config),
        )?;
        write(&self.handler_policy_path(handler), &render_policy(&policy))?;
        write(
            &self
                .path(REPORTS_DIR)
                .join(format!("policy-gen-{handler}.txt")),
            &format!("{stats}\n"),
        )?;
        Ok((policy, stats))
    }

    fn prune_config(&self, project: &Project, config: &PruneConfig) -> PruneConfig {
        PruneConfig {
            range: project.fit_range(config.range),
            ..config.clone()
        }
    }

    /// Merges the per-handler policies of `handlers` (all with a policy
    /// file when empty) and writes the final policy.
    pub fn merge(
        &self,
        project: &Project,
        handlers: &[String],
        config: &PruneConfig,
    ) -> Result<Policy, RunError> {
        let names: Vec<String> = if handlers.is_empty() {
            list(&self.path(POLICIES_DIR), "sql")?
                .iter()
                .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
                .collect()
        } else {
            handlers.to_vec()
        };
        let mut policies = Vec::new();
        for h in &names {
            let path = self.handler_policy_path(h);
            if !path.exists() {
                return Err(RunError::UnknownHandler(h.clone()));
            }
            policies.push(self.load_policy(&path, &project.schema)?);
        }
        let merged = pruner::merge_and_prune(
            project.context(),
            &policies,
            &self.prune_config(project, config),
        );
        write(&self.path(POLICY_FILE), &render_policy(&merged))?;
        Ok(merged)
    }

    /// Adds the views in `added` as pinned views to the policy at
    /// `policy_path`, re-prunes and writes the policy back with a report.
    pub fn broaden(
        &self,
        project: &Project,
        policy_path: &Path,
        added: &Path,
        config: &PruneConfig,
    ) -> Result<(Policy, BroadenReport), RunError> {
        let policy = self.load_policy(policy_path, &project.schema)?;
        let mut user = self.load_policy(added, &project.schema)?;
        for v in &mut user.views {
            if v.handler.is_empty() {
                v.handler = "user".into();
            }
        }
        let (result, report) = pruner::broaden(
            project.context(),
            &policy,
            &user,
            &self.prune_config(project, config),
        );
        write(policy_path, &render_policy(&result))?;
        write(
            &self.path(REPORTS_DIR).join("broaden.txt"),
            &render_broaden_report(&report),
        )?;
        Ok((result, report))
    }

    /// Re-executes a stored input. The result is checked against the stored
    /// transcript; with `verbose` each record carries its source line.
    pub fn replay(
        &self,
        project: &Project,
        input_id: &str,
        verbose: bool,
    ) -> Result<(String, bool), RunError> {
        let tpath = self.transcript_path(input_id);
        let ipath = self.input_path(input_id);
        if !tpath.exists() || !ipath.exists() {
            return Err(RunError::UnknownInput(input_id.to_string()));
        }
        let stored_text = read(&tpath)?;
        let stored = Transcript::from_jsonl(&stored_text).map_err(|source| RunError::Json {
            path: tpath.clone(),
            source,
        })?;
        let input: ConcreteInput =
            serde_json::from_str(&read(&ipath)?).map_err(|source| RunError::Json {
                path: ipath,
                source,
            })?;
        let compiled = project.handler(&stored.meta.handler)?;
        let mut t =
            execute(compiled, &input, &project.schema, &project.strings).map_err(|source| {
                RunError::Exec {
                    input: input_id.to_string(),
                    source,
                }
            })?;
        t.meta.config = stored.meta.config.clone();
        let matches = t.to_jsonl() == stored_text;
        let file = project.handlers[&stored.meta.handler]
            .1
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("handler.dsl")
            .to_string();
        let text = if verbose {
            t.to_jsonl_annotated(&file)
        } else {
            t.to_jsonl()
        };
        Ok((text, matches))
    }
}

fn one_line(sql: &str) -> String {
    sql.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn render_broaden_report(r: &BroadenReport) -> String {
    let mut out = String::new();
    for (view, removed) in &r.by_view {
        out.push_str(&format!(
            "added view:\n{view}\nmakes redundant {} view(s)\n",
            removed.len()
        ));
        for v in removed {
            out.push_str(&format!("  - {}\n", one_line(v)));
        }
    }
    if !r.jointly.is_empty() {
        out.push_str(&format!("redundant only jointly: {}\n", r.jointly.len()));
        for v in &r.jointly {
            out.push_str(&format!("  - {}\n", one_line(v)));
        }
    }
    out
}
