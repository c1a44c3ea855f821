//! `polext`: explore handlers, generate and merge policies, broaden them,
//! replay inputs and check single queries.
//!
//! Exit codes: 0 success, 1 replay mismatch or query not allowed, 2 bad
//! input (files, names, syntax), 3 partial result (exploration cut off or
//! an unknown containment verdict), 4 policy generation refused.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand};
use polext::explorer::ExploreConfig;
use polext::pipeline::{render_broaden_report, RunDir, RunError};
use polext::policygen::{SimplifyConfig, Steps};
use polext::pruner::{is_allowed, ContainmentVerdict, PruneConfig};
use polext::{parse_sql, to_normal_form};

#[derive(Parser)]
#[command(
    name = "polext",
    version,
    about = "Extract view-based access policies from web handlers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Bounds {
    /// Rows per table in symbolic databases.
    #[arg(long, default_value_t = 2)]
    bound: usize,
    /// Largest integer value considered (widened to fit literals).
    #[arg(long, default_value_t = 7)]
    max_value: i64,
    /// Solver timeout per check, in seconds.
    #[arg(long)]
    timeout: Option<u64>,
}

impl Bounds {
    fn prune(&self) -> PruneConfig {
        let d = PruneConfig::default();
        PruneConfig {
            bound: self.bound,
            range: (0, self.max_value),
            timeout: self.timeout.map_or(d.timeout, Duration::from_secs),
            ..d
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write constraints.txt generated from schema.txt.
    ConstraintsGen { run: PathBuf },
    /// Explore one handler, writing transcripts and inputs.
    Explore {
        run: PathBuf,
        handler: String,
        #[command(flatten)]
        bounds: Bounds,
        #[arg(long, default_value_t = 1000)]
        max_paths: usize,
        #[arg(long, default_value_t = 1)]
        executors: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate the policy of one handler from its transcripts.
    PolicyGen {
        run: PathBuf,
        handler: String,
        #[command(flatten)]
        bounds: Bounds,
        /// Skip a simplification step (repeatable): vacuous-branches,
        /// propagate-equalities, duplicate-queries, vacuous-queries,
        /// merge-branches, subsumed.
        #[arg(long = "skip", value_name = "STEP")]
        skip: Vec<String>,
    },
    /// Merge per-handler policies (all of them by default) into policy.sql.
    Merge {
        run: PathBuf,
        handlers: Vec<String>,
        #[command(flatten)]
        bounds: Bounds,
    },
    /// Add pinned views to a policy and prune again.
    Broaden {
        run: PathBuf,
        policy: PathBuf,
        added: PathBuf,
        #[command(flatten)]
        bounds: Bounds,
    },
    /// Re-run a stored input and print its transcript.
    Replay {
        run: PathBuf,
        input: String,
        /// Suffix each record with the handler line that produced it.
        #[arg(long)]
        verbose: bool,
    },
    /// Check whether a query is answerable from a policy's views.
    IsAllowed {
        run: PathBuf,
        policy: PathBuf,
        query: String,
        /// Directory for the two counterexample instances.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[command(flatten)]
        bounds: Bounds,
    },
}

fn steps(skip: &[String]) -> Result<Steps> {
    let mut s = Steps::default();
    for name in skip {
        let flag = match name.as_str() {
            "vacuous-branches" => &mut s.vacuous_branches,
            "propagate-equalities" => &mut s.propagate_equalities,
            "duplicate-queries" => &mut s.duplicate_queries,
            "vacuous-queries" => &mut s.vacuous_queries,
            "merge-branches" => &mut s.merge_branches,
            "subsumed" => &mut s.subsumed,
            other => anyhow::bail!("unknown simplification step `{other}`"),
        };
        *flag = false;
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::ConstraintsGen { run } => {
            print!("{}", RunDir::new(run).generate_constraints()?);
            Ok(0)
        }
        Command::Explore {
            run,
            handler,
            bounds,
            max_paths,
            executors,
            seed,
        } => {
            let dir = RunDir::new(run);
            let project = dir.load((0, bounds.max_value))?;
            let d = ExploreConfig::default();
            let config = ExploreConfig {
                bound: bounds.bound,
                range: (0, bounds.max_value),
                executors,
                timeout: bounds.timeout.map_or(d.timeout, Duration::from_secs),
                max_paths,
                seed,
                ..d
            };
            let start = Instant::now();
            let ex = dir.explore(&project, &handler, &config)?;
            for e in &ex.events {
                eprintln!("{e}");
            }
            println!(
                "{handler}: {} paths, {} solver calls, {} cache hits, {:.2}s{}",
                ex.transcripts.len(),
                ex.stats.solver_calls,
                ex.stats.cache_hits,
                start.elapsed().as_secs_f64(),
                if ex.complete { "" } else { " (cut off)" }
            );
            Ok(if ex.complete { 0 } else { 3 })
        }
        Command::PolicyGen {
            run,
            handler,
            bounds,
            skip,
        } => {
            let dir = RunDir::new(run);
            let project = dir.load((0, bounds.max_value))?;
            let simplify = SimplifyConfig {
                steps: steps(&skip)?,
                bound: bounds.bound,
                range: project.fit_range((0, bounds.max_value)),
                ..SimplifyConfig::default()
            };
            let (policy, stats) = dir.policy_gen(&project, &handler, &simplify, &bounds.prune())?;
            eprintln!("{handler}: {stats}");
            print!("{}", polext::policygen::render_policy(&policy));
            Ok(0)
        }
        Command::Merge {
            run,
            handlers,
            bounds,
        } => {
            let dir = RunDir::new(run);
            let project = dir.load((0, bounds.max_value))?;
            let policy = dir.merge(&project, &handlers, &bounds.prune())?;
            print!("{}", polext::policygen::render_policy(&policy));
            Ok(0)
        }
        Command::Broaden {
            run,
            policy,
            added,
            bounds,
        } => {
            let dir = RunDir::new(run);
            let project = dir.load((0, bounds.max_value))?;
            let (result, report) = dir.broaden(&project, &policy, &added, &bounds.prune())?;
            eprint!("{}", render_broaden_report(&report));
            print!("{}", polext::policygen::render_policy(&result));
            Ok(0)
        }
        Command::Replay {
            run,
            input,
            verbose,
        } => {
            let dir = RunDir::new(run);
            let project = dir.load((0, 7))?;
            let (text, matches) = dir.replay(&project, &input, verbose)?;
            print!("{text}");
            if !matches {
                eprintln!("replay of {input} differs from the stored transcript");
                return Ok(1);
            }
            Ok(0)
        }
        Command::IsAllowed {
            run,
            policy,
            query,
            dump,
            bounds,
        } => {
            let dir = RunDir::new(run);
            let project = dir.load((0, bounds.max_value))?;
            let p = dir.load_policy(&policy, &project.schema)?;
            let q = parse_sql(&query)
                .and_then(|ast| to_normal_form(&ast, &project.schema))
                .with_context(|| format!("query `{query}`"))?;
            let mut config = bounds.prune();
            config.range = project.fit_range(config.range);
            match is_allowed(project.context(), &q, &p.queries(), &config) {
                ContainmentVerdict::Allowed => {
                    println!("allowed");
                    Ok(0)
                }
                ContainmentVerdict::Unknown => {
                    println!("unknown (timeout)");
                    Ok(3)
                }
                ContainmentVerdict::NotAllowed(cx) => {
                    println!("not allowed");
                    if let Some(d) = dump {
                        std::fs::create_dir_all(&d).with_context(|| d.display().to_string())?;
                        std::fs::write(d.join("first.txt"), render_instance(&cx.first))?;
                        std::fs::write(d.join("second.txt"), render_instance(&cx.second))?;
                        println!("counterexample written to {}", d.display());
                    } else {
                        println!("first instance:  {}", render_instance(&cx.first).trim());
                        println!("second instance: {}", render_instance(&cx.second).trim());
                    }
                    println!("parameters: {:?}", cx.params);
                    Ok(1)
                }
            }
        }
    }
}

/// One `table(v1, v2, ...)` line per row.
fn render_instance(db: &polext::Database) -> String {
    let mut out = String::new();
    for (table, rows) in &db.tables {
        for r in rows {
            let vals: Vec<String> = r
                .iter()
                .map(|v| v.map_or("NULL".into(), |x| x.to_string()))
                .collect();
            out.push_str(&format!("{table}({})\n", vals.join(", ")));
        }
    }
    if out.is_empty() {
        out.push_str("(empty)\n");
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let refused = e
                .downcast_ref::<RunError>()
                .is_some_and(RunError::is_refusal);
            ExitCode::from(if refused { 4 } else { 2 })
        }
    }
}
