//! `ctxmine` command-line interface.

mod serve;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};
use ctxmine::context::{load_contexts, Context};
use ctxmine::corpus::{companion_users_path, timestamp, Archive};
use ctxmine::discovery::{monitor_recurring, review, Decision, ReviewEdits};
use ctxmine::ids::{CandidateId, ContextId};
use ctxmine::pipeline::{
    comparison_from_reports, queue_discoveries, step, table_detectors, table_networks,
    table_repeat_users, PipelineConfig, Workspace,
};
use ctxmine::ranking::{rank, RankFn, RankOptions};
use ctxmine::store::{MergePolicy, ProfileStore};
use ctxmine::synth::{generate, SynthParams};
use tracing::{info, warn};

const CONFIG_FILE: &str = "ctxmine.toml";

#[derive(Debug, Parser)]
#[command(
    name = "ctxmine",
    version,
    about = "Context-scoped user discovery over micro-blog archives"
)]
struct Cli {
    /// Workspace root holding the archive, store and run artifacts.
    #[arg(long, short = 'w', global = true, default_value = ".")]
    workspace: PathBuf,
    /// Pipeline configuration; defaults to <workspace>/ctxmine.toml when present.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,
    /// Store file, overriding the configured one.
    #[arg(long, global = true, env = "CTXMINE_STORE")]
    store: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate an archive and copy it into the workspace.
    Ingest(IngestArgs),
    /// Run one context, a batch file, or every pending context.
    Run(RunArgs),
    /// Rank users in the store.
    Rank(RankArgs),
    /// Propose new contexts from a processed one.
    Discover(DiscoverArgs),
    /// Approve or reject a candidate context.
    Review(ReviewArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Write report tables, the store snapshot and the archive.
    Export(ExportArgs),
    /// Write a seeded synthetic archive.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Posts file, one JSON record per line.
    posts: PathBuf,
    /// User file; defaults to the `.users.jsonl` sibling of the posts file.
    #[arg(long)]
    users: Option<PathBuf>,
    /// Seed contexts to add to the store.
    #[arg(long)]
    contexts: Option<PathBuf>,
    /// Fail when any line is malformed.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "target")]
struct RunTarget {
    /// A context already in the store.
    #[arg(long)]
    context: Option<String>,
    /// Contexts file; unknown contexts are added, then all run in file order.
    #[arg(long)]
    batch: Option<PathBuf>,
    /// Every approved context not yet processed.
    #[arg(long)]
    pending: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    target: RunTarget,
    /// Queue discovery candidates from each committed context.
    #[arg(long)]
    discover: bool,
}

#[derive(Debug, Args)]
struct RankArgs {
    /// rank1, rank2, rank3 or expr:<expression>.
    #[arg(long = "fn")]
    function: Option<String>,
    #[arg(long)]
    top: Option<usize>,
    /// append, latest-wins or mean.
    #[arg(long)]
    policy: Option<MergePolicy>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiscoverArgs {
    #[arg(long)]
    context: String,
    #[arg(long = "top-k")]
    top_k: Option<usize>,
    /// Also propose later editions of year-suffixed contexts.
    #[arg(long)]
    recurring: bool,
}

#[derive(Debug, Args)]
#[group(id = "decision", required = true, multiple = false)]
struct DecisionFlag {
    #[arg(long)]
    approve: bool,
    #[arg(long)]
    reject: bool,
}

#[derive(Debug, Args)]
struct ReviewArgs {
    #[arg(long)]
    candidate: String,
    #[command(flatten)]
    decision: DecisionFlag,
    #[arg(long, default_value = "")]
    note: String,
    /// Replacement window start, RFC 3339.
    #[arg(long, value_parser = parse_ts)]
    t1: Option<chrono::DateTime<chrono::Utc>>,
    /// Replacement window end, RFC 3339.
    #[arg(long, value_parser = parse_ts)]
    t2: Option<chrono::DateTime<chrono::Utc>>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 4)]
    threads: usize,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Rows in the repeat-user table.
    #[arg(long, default_value_t = 20)]
    top: usize,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory for posts.jsonl, users.jsonl and contexts.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    topics: usize,
}

fn parse_ts(s: &str) -> Result<chrono::DateTime<chrono::Utc>, String> {
    timestamp::parse(s).map_err(|e| e.to_string())
}

struct Env {
    config: PipelineConfig,
    workspace: Workspace,
}

impl Env {
    fn load(cli: &Cli) -> Result<Self> {
        let default_path = cli.workspace.join(CONFIG_FILE);
        let config = match &cli.config {
            Some(p) => PipelineConfig::load(p)?,
            None if default_path.exists() => PipelineConfig::load(&default_path)?,
            None => PipelineConfig::default(),
        };
        let mut workspace = Workspace::new(&cli.workspace, &config);
        if let Some(s) = &cli.store {
            workspace = workspace.with_store(s);
        }
        Ok(Self { config, workspace })
    }

    fn archive(&self) -> Result<Archive> {
        self.workspace
            .load_archive(&self.config)
            .context("loading the workspace archive; run `ctxmine ingest` first")
    }

    fn store(&self) -> Result<ProfileStore> {
        Ok(self.workspace.load_store()?)
    }

    fn save(&self, store: &ProfileStore) -> Result<()> {
        self.workspace.save_store(store)?;
        info!(path = %self.workspace.store_path.display(), "store saved");
        Ok(())
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn ingest(env: &Env, args: &IngestArgs) -> Result<()> {
    let users = args
        .users
        .clone()
        .or_else(|| companion_users_path(&args.posts).filter(|p| p.exists()));
    let (archive, report) = Archive::load_files(&args.posts, users.as_deref())?;
    for d in report
        .malformed
        .iter()
        .chain(&report.duplicates)
        .chain(&report.warnings)
    {
        warn!("{}:{}: {}", d.file, d.line, d.message);
    }
    if args.strict && report.error_count() > 0 {
        bail!("{} malformed or duplicate lines", report.error_count());
    }
    let dir = env.workspace.archive_dir();
    fs::create_dir_all(&dir)?;
    let lines = |it: &mut dyn Iterator<Item = String>| it.map(|l| l + "\n").collect::<String>();
    let posts_path = env.workspace.root.join(&env.config.archive.posts);
    let users_path = env.workspace.root.join(
        env.config
            .archive
            .users
            .clone()
            .unwrap_or_else(|| PathBuf::from("archive/users.jsonl")),
    );
    for p in [&posts_path, &users_path] {
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(&posts_path, lines(&mut archive.posts_record_lines()))?;
    fs::write(&users_path, lines(&mut archive.user_record_lines()))?;
    let mut added = 0;
    if let Some(path) = &args.contexts {
        let mut store = env.store()?;
        for ctx in load_contexts(path)? {
            if store.context(&ctx.context_id).is_none() {
                store.add_context(ctx)?;
                added += 1;
            }
        }
        env.save(&store)?;
    }
    println!(
        "ingested {} posts, {} users ({} unresolved), {} contexts added, {} problems",
        report.posts_loaded,
        archive.user_count(),
        archive.unresolved_users().len(),
        added,
        report.error_count()
    );
    Ok(())
}

fn run(env: &Env, args: &RunArgs) -> Result<()> {
    let archive = env.archive()?;
    let mut store = env.store()?;
    let ids: Option<Vec<ContextId>> = if let Some(id) = &args.target.context {
        Some(vec![ContextId::from(id.as_str())])
    } else if let Some(path) = &args.target.batch {
        let contexts: Vec<Context> = load_contexts(path)?;
        for ctx in &contexts {
            if store.context(&ctx.context_id).is_none() {
                store.add_context(ctx.clone())?;
            }
        }
        Some(contexts.into_iter().map(|c| c.context_id).collect())
    } else {
        None
    };
    let result = step(
        &env.workspace,
        &mut store,
        &archive,
        ids.as_deref(),
        args.discover,
        &env.config,
    )?;
    env.save(&store)?;
    for r in &result.reports {
        for w in &r.warnings {
            warn!(context = %r.context_id, "{w}");
        }
        println!("{}", serde_json::to_string(r)?);
    }
    for c in &result.candidates {
        println!("candidate {c}");
    }
    for f in &result.failures {
        warn!(context = %f.context_id, "{}", f.message);
    }
    if !result.failures.is_empty() && result.reports.is_empty() {
        bail!("no context could be run");
    }
    Ok(())
}

fn rank_cmd(env: &Env, args: &RankArgs) -> Result<()> {
    let store = env.store()?;
    let f: RankFn = args
        .function
        .as_deref()
        .unwrap_or(&env.config.ranking.function)
        .parse()?;
    let opts = RankOptions {
        policy: args.policy.unwrap_or(env.config.ranking.policy),
        ..env.config.rank_options()
    };
    let list = rank(
        &store,
        &f,
        &opts,
        Some(args.top.unwrap_or(env.config.ranking.top)),
    )?;
    write_out(args.out.as_deref(), &list.to_csv())
}

fn discover_cmd(env: &Env, args: &DiscoverArgs) -> Result<()> {
    let archive = env.archive()?;
    let mut store = env.store()?;
    let mut config = env.config.clone();
    if let Some(k) = args.top_k {
        config.discovery.top_k = k;
    }
    let mut ids = queue_discoveries(&mut store, &archive, &args.context.as_str().into(), &config)?;
    if args.recurring {
        let found = monitor_recurring(&store, &archive, config.discovery.padding_days);
        ids.extend(found.iter().map(|c| c.candidate_id.clone()));
        store.add_candidates(found);
    }
    env.save(&store)?;
    for id in &ids {
        let c = store.candidate(id).expect("just queued");
        println!("{}", serde_json::to_string(c)?);
    }
    info!(queued = ids.len(), "discovery finished");
    Ok(())
}

fn review_cmd(env: &Env, args: &ReviewArgs) -> Result<()> {
    let mut store = env.store()?;
    let decision = if args.decision.approve {
        Decision::Approve
    } else {
        Decision::Reject
    };
    let edits = ReviewEdits {
        start: args.t1,
        end: args.t2,
        bbox: None,
    };
    let id = CandidateId::from(args.candidate.as_str());
    let created = review(&mut store, &id, decision, &args.note, edits)?;
    env.save(&store)?;
    match created {
        Some(ctx) => println!("approved {id}; added context {}", ctx.context_id),
        None => println!("rejected {id}"),
    }
    Ok(())
}

fn export(env: &Env, args: &ExportArgs) -> Result<()> {
    let store = env.store()?;
    let reports = env.workspace.reports();
    fs::create_dir_all(&args.out)?;
    let out = |name: &str, text: &str| -> Result<()> {
        fs::write(args.out.join(name), text).with_context(|| format!("writing {name}"))
    };
    out("networks.csv", &table_networks(&store, &reports))?;
    out(
        "detectors.csv",
        &table_detectors(&comparison_from_reports(&store, &reports)),
    )?;
    out("repeat_users.csv", &table_repeat_users(&store, args.top))?;
    store.snapshot(&args.out.join("store.jsonl"))?;
    if let Ok(archive) = env.archive() {
        let lines = |it: &mut dyn Iterator<Item = String>| it.map(|l| l + "\n").collect::<String>();
        out("posts.jsonl", &lines(&mut archive.posts_record_lines()))?;
        out("users.jsonl", &lines(&mut archive.user_record_lines()))?;
    }
    println!("exported to {}", args.out.display());
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let s = generate(&SynthParams {
        seed: args.seed,
        topics: args.topics,
        ..SynthParams::default()
    });
    s.write(&args.out)?;
    println!(
        "wrote {} posts, {} users, {} contexts to {}",
        s.posts.len(),
        s.users.len(),
        s.contexts.len(),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("CTXMINE_LOG")
                .unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the error chain, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.contains(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn dispatch(cli: &Cli) -> Result<()> {
    if let Command::Synth(args) = &cli.command {
        return synth(args);
    }
    let env = Env::load(cli)?;
    match &cli.command {
        Command::Ingest(a) => ingest(&env, a),
        Command::Run(a) => run(&env, a),
        Command::Rank(a) => rank_cmd(&env, a),
        Command::Discover(a) => discover_cmd(&env, a),
        Command::Review(a) => review_cmd(&env, a),
        Command::Serve(a) => serve::serve(env.workspace, env.config, a),
        Command::Export(a) => export(&env, a),
        Command::Synth(_) => unreachable!("handled above"),
    }
}
