//! One iteration per context: select posts, build the network, detect
//! communities, compute metrics, and commit the retained users to the store.
//!
//! [`compute`] is pure and may run for several contexts at once; [`commit`]
//! applies results to the store one context at a time in declared order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::community::{
    compare, demon, infomap, Algorithm, CommunityAssignment, ComparisonSummary, DemonParams,
    DetectionReport, DetectionSummary, FlowModel, InfomapParams,
};
use crate::context::{
    evaluate, evaluate_complement, Context, ContextError, ContextStatus, QueryOptions,
};
use crate::corpus::{load_archive, Archive, CorpusError, UserSnapshot};
use crate::discovery::{discover, monitor_recurring, CandidateContext, DiscoveryParams};
use crate::ids::{CandidateId, ContextId, UserId};
use crate::metrics::{context_rows, UserRow};
use crate::network::{build, stats, ContextNetwork, EdgeDirection, NetworkStats};
use crate::par::Execution;
use crate::ranking::{rank, RankError, RankFn, RankOptions};
use crate::store::{hex_sha256, ContextRecord, MergePolicy, ProfileStore, RunRecord, StoreError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot read config {path}: {source}")]
    ConfigIo { path: PathBuf, source: io::Error },
    #[error("invalid config {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error("invalid config value {field}: {message}")]
    ConfigValue {
        field: &'static str,
        message: String,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error("context {id} has status {status}; only approved or processed contexts can run")]
    NotRunnable {
        id: ContextId,
        status: ContextStatus,
    },
    #[error("context {0} is not in the store")]
    UnknownContext(ContextId),
    #[error("cannot write artifact {path}: {source}")]
    Artifact { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchiveConfig {
    pub posts: PathBuf,
    /// Defaults to the `<stem>.users.jsonl` sibling of `posts`.
    pub users: Option<PathBuf>,
}

impl Default for ArchiveConfig {
    fn default() -> Self {
        Self {
            posts: PathBuf::from("archive/posts.jsonl"),
            users: Some(PathBuf::from("archive/users.jsonl")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Most recent on-context posts used for the network; 0 disables the cap.
    pub post_cap: usize,
    pub strict_geo: bool,
    pub reverse_edges: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            post_cap: crate::context::DEFAULT_POST_CAP,
            strict_geo: false,
            reverse_edges: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommunityConfig {
    pub algorithm: Algorithm,
    pub min_size: usize,
    /// Also run the other detector and report it alongside.
    pub compare: bool,
    pub epsilon: f64,
    pub label_sweeps: usize,
    pub trials: usize,
    pub max_sweeps: usize,
    /// `None` for undirected degree flow, else PageRank teleportation.
    pub teleportation: Option<f64>,
}

impl Default for CommunityConfig {
    fn default() -> Self {
        let d = DemonParams::default();
        let i = InfomapParams::default();
        Self {
            algorithm: Algorithm::Demon,
            min_size: crate::community::DEFAULT_MIN_SIZE,
            compare: false,
            epsilon: d.epsilon,
            label_sweeps: d.max_sweeps,
            trials: i.trials,
            max_sweeps: i.max_sweeps,
            teleportation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankingConfig {
    pub function: String,
    pub policy: MergePolicy,
    pub inactive_threshold: f64,
    pub top: usize,
}

impl Default for RankingConfig {
    fn default() -> Self {
        Self {
            function: "rank3".into(),
            policy: MergePolicy::Append,
            inactive_threshold: crate::ranking::INACTIVE_THRESHOLD,
            top: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExecutionConfig {
    /// Data-parallel loops inside each stage.
    pub parallel: bool,
    /// Compute several contexts at once before the ordered commits.
    pub concurrent_contexts: bool,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        Self {
            parallel: true,
            concurrent_contexts: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Store file; relative to the workspace root.
    pub store: PathBuf,
    pub archive: ArchiveConfig,
    pub network: NetworkConfig,
    pub communities: CommunityConfig,
    pub ranking: RankingConfig,
    pub discovery: DiscoveryParams,
    pub execution: ExecutionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            store: PathBuf::from("store.jsonl"),
            archive: ArchiveConfig::default(),
            network: NetworkConfig::default(),
            communities: CommunityConfig::default(),
            ranking: RankingConfig::default(),
            discovery: DiscoveryParams::default(),
            execution: ExecutionConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::ConfigParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|source| PipelineError::ConfigIo {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |field, message: &str| {
            Err(PipelineError::ConfigValue {
                field,
                message: message.to_string(),
            })
        };
        let c = &self.communities;
        if c.min_size == 0 {
            return bad("communities.min_size", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&c.epsilon) {
            return bad("communities.epsilon", "must lie in [0, 1]");
        }
        if c.trials == 0 || c.max_sweeps == 0 || c.label_sweeps == 0 {
            return bad(
                "communities",
                "trials, max_sweeps and label_sweeps must be positive",
            );
        }
        if let Some(t) = c.teleportation {
            if !(t > 0.0 && t < 1.0) {
                return bad("communities.teleportation", "must lie in (0, 1)");
            }
        }
        if self.discovery.top_k == 0 {
            return bad("discovery.top_k", "must be at least 1");
        }
        if self.discovery.padding_days < 0 {
            return bad("discovery.padding_days", "must not be negative");
        }
        let t = self.ranking.inactive_threshold;
        if t.is_nan() || t < 0.0 {
            return bad(
                "ranking.inactive_threshold",
                "must be a non-negative number",
            );
        }
        self.rank_fn()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the configuration. Execution
    /// settings and the store path do not change results and are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.execution = ExecutionConfig::default();
        c.store = PathBuf::new();
        hex_sha256(
            serde_json::to_string(&c)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    pub fn rank_fn(&self) -> Result<RankFn, PipelineError> {
        Ok(self.ranking.function.parse()?)
    }

    pub fn exec(&self) -> Execution {
        if self.execution.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn query_options(&self) -> QueryOptions {
        QueryOptions {
            cap: (self.network.post_cap > 0).then_some(self.network.post_cap),
            strict_geo: self.network.strict_geo,
        }
    }

    pub fn direction(&self) -> EdgeDirection {
        if self.network.reverse_edges {
            EdgeDirection::Reversed
        } else {
            EdgeDirection::Verbatim
        }
    }

    pub fn rank_options(&self) -> RankOptions {
        RankOptions {
            policy: self.ranking.policy,
            inactive_threshold: self.ranking.inactive_threshold,
            users: None,
            exec: self.exec(),
        }
    }

    /// Detector seed for one context, derived from the root seed.
    pub fn context_seed(&self, id: &ContextId) -> u64 {
        let h = hex_sha256(format!("{}:{}", self.seed, id).as_bytes());
        u64::from_str_radix(&h[..16], 16).expect("hex digest")
    }

    pub fn detect(&self, net: &ContextNetwork, algorithm: Algorithm) -> CommunityAssignment {
        let c = &self.communities;
        match algorithm {
            Algorithm::Demon => demon(
                net,
                &DemonParams {
                    epsilon: c.epsilon,
                    min_size: c.min_size,
                    max_sweeps: c.label_sweeps,
                },
                self.exec(),
            ),
            Algorithm::Infomap => {
                let params = InfomapParams {
                    seed: self.context_seed(&net.context_id),
                    min_size: c.min_size,
                    trials: c.trials,
                    flow: match c.teleportation {
                        None => FlowModel::UndirectedDegree,
                        Some(teleportation) => FlowModel::DirectedPagerank { teleportation },
                    },
                    max_sweeps: c.max_sweeps,
                };
                infomap(net, &params, self.exec()).assignment
            }
        }
    }
}

/// Per-context outcome; reports are written as artifacts, never into the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub context_id: ContextId,
    pub config_hash: String,
    /// In-window posts matching the context, before the cap.
    pub posts_on: usize,
    /// Posts used to build the network.
    pub posts_network: usize,
    pub posts_off: usize,
    pub network: Option<NetworkStats>,
    pub detection: Option<DetectionReport>,
    /// The other detector, when comparison is enabled.
    pub alternative: Option<DetectionSummary>,
    pub users_added: usize,
    pub users_updated: usize,
    pub duration_ms: u64,
    pub warnings: Vec<String>,
}

/// Everything [`compute`] produces for one context.
#[derive(Debug, Clone)]
pub struct Computed {
    pub context: Context,
    pub report: IterationReport,
    pub network: ContextNetwork,
    pub assignment: Option<CommunityAssignment>,
    pub alternative: Option<CommunityAssignment>,
    pub rows: Vec<UserRow>,
    /// Users that go into the store.
    pub added: BTreeSet<UserId>,
}

impl Computed {
    pub fn is_empty(&self) -> bool {
        self.network.node_count() == 0
    }
}

fn retained_or_all(net: &ContextNetwork, a: &CommunityAssignment) -> BTreeSet<UserId> {
    if a.is_null() {
        net.nodes.clone()
    } else {
        a.retained_users()
    }
}

/// Steps 2 to 5 for one context, without touching the store.
pub fn compute(context: &Context, archive: &Archive, config: &PipelineConfig) -> Computed {
    let started = Instant::now();
    let capped = evaluate(context, archive, config.query_options());
    let full = evaluate(
        context,
        archive,
        QueryOptions {
            cap: None,
            ..config.query_options()
        },
    );
    let off = evaluate_complement(context, archive, config.network.strict_geo);
    let mut report = IterationReport {
        context_id: context.context_id.clone(),
        config_hash: config.hash(),
        posts_on: full.len(),
        posts_network: capped.len(),
        posts_off: off.len(),
        network: None,
        detection: None,
        alternative: None,
        users_added: 0,
        users_updated: 0,
        duration_ms: 0,
        warnings: Vec::new(),
    };
    let net = build(&capped, config.direction());
    if capped.is_empty() {
        report
            .warnings
            .push("no posts match the context; store left unchanged".into());
        report.duration_ms = started.elapsed().as_millis() as u64;
        return Computed {
            context: context.clone(),
            report,
            network: net,
            assignment: None,
            alternative: None,
            rows: Vec::new(),
            added: BTreeSet::new(),
        };
    }
    report.network = stats(&net).ok();
    let algorithm = config.communities.algorithm;
    let assignment = config.detect(&net, algorithm);
    report.detection = Some(assignment.report(&net));
    let alternative = config
        .communities
        .compare
        .then(|| config.detect(&net, algorithm.other()));
    report.alternative = alternative.as_ref().map(|a| DetectionSummary {
        context_id: context.context_id.clone(),
        report: a.report(&net),
        added_users: retained_or_all(&net, a),
    });
    if assignment.is_null() {
        report.warnings.push(format!(
            "{algorithm} found no communities; in-degree uses the whole network"
        ));
    }
    let scope = (!assignment.is_null()).then_some(&assignment);
    let snapshot = |u: &UserId| {
        archive
            .user(u)
            .cloned()
            .unwrap_or_else(|| UserSnapshot::placeholder(u))
    };
    let rows = context_rows(&net, scope, &full, &off, snapshot, config.exec());
    let added = retained_or_all(&net, &assignment);
    report.users_added = added.len();
    report.duration_ms = started.elapsed().as_millis() as u64;
    Computed {
        context: context.clone(),
        report,
        network: net,
        assignment: Some(assignment),
        alternative,
        rows,
        added,
    }
}

/// Applies one computed context to the store. Empty results leave it untouched.
pub fn commit(
    store: &mut ProfileStore,
    archive: &Archive,
    computed: &mut Computed,
) -> Result<(), PipelineError> {
    if computed.is_empty() {
        return Ok(());
    }
    let assignment = computed
        .assignment
        .as_ref()
        .expect("non-empty results carry an assignment");
    let id = computed.context.context_id.clone();
    let mut rows = Vec::new();
    let mut updated = 0;
    for row in computed
        .rows
        .iter()
        .filter(|r| computed.added.contains(&r.user_id))
    {
        if store.profile(&row.user_id).is_some() {
            updated += 1;
        }
        let snap = archive
            .user(&row.user_id)
            .cloned()
            .unwrap_or_else(|| UserSnapshot::placeholder(&row.user_id));
        let record = ContextRecord {
            features: row.features,
            metrics: row.metrics,
            communities: assignment
                .membership
                .get(&row.user_id)
                .map(|s| s.iter().copied().collect())
                .unwrap_or_default(),
            posts_on: row.posts_on,
            posts_off: row.posts_off,
        };
        rows.push((snap, record));
    }
    let run = RunRecord {
        context_id: id.clone(),
        algorithm: assignment.algorithm,
        detection: computed
            .report
            .detection
            .clone()
            .expect("set with the assignment"),
        added_users: computed.added.clone(),
        config_hash: computed.report.config_hash.clone(),
    };
    store.put_context(computed.context.clone());
    store.commit_run(run, rows)?;
    computed.report.users_updated = updated;
    computed.report.users_added = computed.added.len() - updated;
    Ok(())
}

fn runnable(store: &ProfileStore, ctx: &Context) -> Result<(), PipelineError> {
    ctx.validate()?;
    let status = store
        .context(&ctx.context_id)
        .map_or(ctx.status, |c| c.status);
    match status {
        ContextStatus::Approved | ContextStatus::Processed => Ok(()),
        status => Err(PipelineError::NotRunnable {
            id: ctx.context_id.clone(),
            status,
        }),
    }
}

/// Runs one context end to end and commits it.
pub fn run_iteration(
    store: &mut ProfileStore,
    archive: &Archive,
    context: &Context,
    config: &PipelineConfig,
) -> Result<Computed, PipelineError> {
    runnable(store, context)?;
    let mut c = compute(context, archive, config);
    commit(store, archive, &mut c)?;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub context_id: ContextId,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct BatchOutcome {
    pub computed: Vec<Computed>,
    pub failures: Vec<Failure>,
}

impl BatchOutcome {
    pub fn reports(&self) -> Vec<&IterationReport> {
        self.computed.iter().map(|c| &c.report).collect()
    }

    /// Primary-detector summaries of the committed contexts.
    pub fn summaries(&self) -> Vec<DetectionSummary> {
        self.computed
            .iter()
            .filter_map(|c| {
                Some(DetectionSummary {
                    context_id: c.context.context_id.clone(),
                    report: c.report.detection.clone()?,
                    added_users: c.added.clone(),
                })
            })
            .collect()
    }

    /// Comparison per algorithm, including the alternative detector when run.
    pub fn comparison(&self) -> Vec<ComparisonSummary> {
        let mut by_algo: BTreeMap<Algorithm, Vec<DetectionSummary>> = BTreeMap::new();
        for s in self.summaries() {
            by_algo.entry(s.report.algorithm).or_default().push(s);
        }
        for c in &self.computed {
            if let Some(alt) = &c.report.alternative {
                by_algo
                    .entry(alt.report.algorithm)
                    .or_default()
                    .push(alt.clone());
            }
        }
        by_algo.values().map(|v| compare(v)).collect()
    }
}

/// Runs `contexts` in declared order. A failing context is recorded and the
/// rest still run. Computation may overlap when configured; commits never do.
pub fn run_batch(
    store: &mut ProfileStore,
    archive: &Archive,
    contexts: &[Context],
    config: &PipelineConfig,
) -> BatchOutcome {
    let mut out = BatchOutcome::default();
    let mut ok = Vec::new();
    for ctx in contexts {
        match runnable(store, ctx) {
            Ok(()) => ok.push(ctx.clone()),
            Err(e) => out.failures.push(Failure {
                context_id: ctx.context_id.clone(),
                message: e.to_string(),
            }),
        }
    }
    let outer = if config.execution.concurrent_contexts {
        Execution::Parallel
    } else {
        Execution::Sequential
    };
    for mut c in outer.map(&ok, |ctx| compute(ctx, archive, config)) {
        match commit(store, archive, &mut c) {
            Ok(()) => out.computed.push(c),
            Err(e) => out.failures.push(Failure {
                context_id: c.context.context_id.clone(),
                message: e.to_string(),
            }),
        }
    }
    out
}

/// Ranks the users who took part in `source` and proposes hashtags from the
/// top-k timelines, excluding everything already in the store's history.
pub fn discover_from(
    store: &ProfileStore,
    archive: &Archive,
    source: &ContextId,
    config: &PipelineConfig,
) -> Result<Vec<CandidateContext>, PipelineError> {
    let ctx = store
        .context(source)
        .ok_or_else(|| PipelineError::UnknownContext(source.clone()))?;
    let participants: BTreeSet<UserId> = store
        .profiles()
        .filter(|e| e.per_context.contains_key(source))
        .map(|e| e.user_id.clone())
        .collect();
    let opts = RankOptions {
        users: Some(participants),
        ..config.rank_options()
    };
    let ranked = rank(
        store,
        &config.rank_fn()?,
        &opts,
        Some(config.discovery.top_k),
    )?;
    Ok(discover(
        &ranked,
        archive,
        &store.history_tags(),
        ctx,
        config.discovery,
    ))
}

/// Runs discovery from `source` and queues the new candidates. Returns the
/// ids that were added.
pub fn queue_discoveries(
    store: &mut ProfileStore,
    archive: &Archive,
    source: &ContextId,
    config: &PipelineConfig,
) -> Result<Vec<CandidateId>, PipelineError> {
    let found = discover_from(store, archive, source, config)?;
    let ids = found.iter().map(|c| c.candidate_id.clone()).collect();
    store.add_candidates(found);
    Ok(ids)
}

/// Result of one loop step: run contexts, then look for new ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoopStep {
    pub reports: Vec<IterationReport>,
    pub failures: Vec<Failure>,
    pub candidates: Vec<CandidateId>,
}

/// Runs `contexts` (all pending ones when `None`), writes their artifacts,
/// and, when `discover` is set, queues candidates from every committed
/// context plus later editions of recurring ones.
pub fn step(
    workspace: &Workspace,
    store: &mut ProfileStore,
    archive: &Archive,
    contexts: Option<&[ContextId]>,
    discover: bool,
    config: &PipelineConfig,
) -> Result<LoopStep, PipelineError> {
    let selected: Vec<Context> = match contexts {
        None => store.pending_contexts().into_iter().cloned().collect(),
        Some(ids) => ids
            .iter()
            .map(|id| {
                store
                    .context(id)
                    .cloned()
                    .ok_or_else(|| PipelineError::UnknownContext(id.clone()))
            })
            .collect::<Result<_, _>>()?,
    };
    let out = run_batch(store, archive, &selected, config);
    for c in &out.computed {
        workspace.write_artifacts(c)?;
    }
    let mut result = LoopStep {
        reports: out.computed.iter().map(|c| c.report.clone()).collect(),
        failures: out.failures,
        candidates: Vec::new(),
    };
    if discover {
        for c in out.computed.iter().filter(|c| !c.is_empty()) {
            result.candidates.extend(queue_discoveries(
                store,
                archive,
                &c.context.context_id,
                config,
            )?);
        }
        let recurring = monitor_recurring(store, archive, config.discovery.padding_days);
        result
            .candidates
            .extend(recurring.iter().map(|c| c.candidate_id.clone()));
        store.add_candidates(recurring);
    }
    Ok(result)
}

/// On-disk layout around a store:
///
/// ```text
/// <root>/store.jsonl
/// <root>/archive/posts.jsonl, users.jsonl
/// <root>/runs/<context>/network.tsv, communities.tsv, features.jsonl, report.json
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Workspace {
    pub root: PathBuf,
    pub store_path: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>, config: &PipelineConfig) -> Self {
        let root = root.into();
        Self {
            store_path: root.join(&config.store),
            root,
        }
    }

    pub fn with_store(mut self, store_path: impl Into<PathBuf>) -> Self {
        self.store_path = store_path.into();
        self
    }

    pub fn archive_dir(&self) -> PathBuf {
        self.root.join("archive")
    }

    pub fn run_dir(&self, id: &ContextId) -> PathBuf {
        self.root.join("runs").join(id.as_str())
    }

    pub fn load_archive(&self, config: &PipelineConfig) -> Result<Archive, PipelineError> {
        let posts = self.root.join(&config.archive.posts);
        let users = config.archive.users.as_ref().map(|u| self.root.join(u));
        let (archive, _) = match users {
            Some(u) if u.exists() => Archive::load_files(&posts, Some(&u))?,
            _ => load_archive(&posts)?,
        };
        Ok(archive)
    }

    pub fn load_store(&self) -> Result<ProfileStore, PipelineError> {
        Ok(ProfileStore::open_or_default(&self.store_path)?)
    }

    pub fn save_store(&self, store: &ProfileStore) -> Result<(), PipelineError> {
        Ok(store.snapshot(&self.store_path)?)
    }

    fn write(&self, path: PathBuf, contents: &str) -> Result<(), PipelineError> {
        let err = |source| PipelineError::Artifact {
            path: path.clone(),
            source,
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(err)?;
        }
        fs::write(&path, contents).map_err(err)
    }

    pub fn write_artifacts(&self, c: &Computed) -> Result<(), PipelineError> {
        let dir = self.run_dir(&c.context.context_id);
        self.write(dir.join("network.tsv"), &c.network.to_edge_list())?;
        let mut communities = c
            .assignment
            .as_ref()
            .map(|a| a.to_export_lines())
            .unwrap_or_default();
        if let Some(alt) = &c.alternative {
            communities.push_str(&alt.to_export_lines());
        }
        self.write(dir.join("communities.tsv"), &communities)?;
        let features: String = c.rows.iter().map(|r| r.to_record() + "\n").collect();
        self.write(dir.join("features.jsonl"), &features)?;
        let report = serde_json::to_string_pretty(&c.report).expect("report serializes");
        self.write(dir.join("report.json"), &(report + "\n"))
    }

    pub fn read_report(&self, id: &ContextId) -> Option<IterationReport> {
        let text = fs::read_to_string(self.run_dir(id).join("report.json")).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn read_network(&self, id: &ContextId) -> Option<ContextNetwork> {
        let text = fs::read_to_string(self.run_dir(id).join("network.tsv")).ok()?;
        ContextNetwork::from_edge_list(id.clone(), &text).ok()
    }

    pub fn read_communities(&self, id: &ContextId) -> Option<Vec<CommunityLine>> {
        let text = fs::read_to_string(self.run_dir(id).join("communities.tsv")).ok()?;
        text.lines().map(CommunityLine::parse).collect()
    }

    /// All reports found under `runs/`, by context id.
    pub fn reports(&self) -> Vec<IterationReport> {
        let Ok(dirs) = fs::read_dir(self.root.join("runs")) else {
            return Vec::new();
        };
        let mut ids: Vec<ContextId> = dirs
            .filter_map(Result::ok)
            .filter_map(|d| d.file_name().to_str().map(ContextId::from))
            .collect();
        ids.sort();
        ids.iter().filter_map(|id| self.read_report(id)).collect()
    }
}

/// One line of `communities.tsv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommunityLine {
    pub context_id: ContextId,
    pub algorithm: Algorithm,
    pub index: usize,
    pub members: Vec<UserId>,
}

impl CommunityLine {
    fn parse(line: &str) -> Option<Self> {
        let mut parts = line.split('\t');
        Some(Self {
            context_id: parts.next()?.into(),
            algorithm: parts.next()?.parse().ok()?,
            index: parts.next()?.parse().ok()?,
            members: parts.next()?.split(',').map(UserId::from).collect(),
        })
    }
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// Per-context network statistics.
pub fn table_networks(store: &ProfileStore, reports: &[IterationReport]) -> String {
    let rows = reports.iter().filter_map(|r| {
        let n = r.network.as_ref()?;
        let ctx = store.context(&r.context_id);
        Some(vec![
            r.context_id.to_string(),
            ctx.map(|c| crate::corpus::timestamp::format(&c.start))
                .unwrap_or_default(),
            ctx.map(|c| crate::corpus::timestamp::format(&c.end))
                .unwrap_or_default(),
            r.posts_network.to_string(),
            n.node_count.to_string(),
            n.edge_count.to_string(),
            n.density.to_string(),
            n.avg_degree.to_string(),
            opt(n.assortativity),
            n.scc_ratio.to_string(),
        ])
    });
    csv_string(
        &[
            "context",
            "t1",
            "t2",
            "posts",
            "nodes",
            "edges",
            "density",
            "avg_degree",
            "assortativity",
            "scc_ratio",
        ],
        rows,
    )
}

/// Detector comparison aggregated over contexts.
pub fn table_detectors(summaries: &[ComparisonSummary]) -> String {
    let rows = summaries.iter().map(|s| {
        vec![
            s.algorithm.map(|a| a.to_string()).unwrap_or_default(),
            s.contexts.to_string(),
            s.null_fraction.to_string(),
            s.mean_communities.to_string(),
            s.mean_fraction_retained.to_string(),
            s.repeat_user_fraction.to_string(),
        ]
    });
    csv_string(
        &[
            "algorithm",
            "contexts",
            "null_fraction",
            "mean_communities",
            "mean_fraction_retained",
            "repeat_user_fraction",
        ],
        rows,
    )
}

/// Repeat users who belong to a community in at least one context.
pub fn table_repeat_users(store: &ProfileStore, top: usize) -> String {
    let rows = store
        .repeat_users(2)
        .into_iter()
        .filter(|e| e.in_community())
        .take(top)
        .map(|e| {
            vec![
                e.user_id.to_string(),
                e.handle.clone(),
                e.participations().to_string(),
                e.follower_rank().to_string(),
            ]
        });
    csv_string(&["user_id", "handle", "participations", "FR"], rows)
}

/// Comparison summaries rebuilt from stored run records and report artifacts.
pub fn comparison_from_reports(
    store: &ProfileStore,
    reports: &[IterationReport],
) -> Vec<ComparisonSummary> {
    let mut by_algo: BTreeMap<Algorithm, Vec<DetectionSummary>> = BTreeMap::new();
    for run in store.runs() {
        by_algo
            .entry(run.algorithm)
            .or_default()
            .push(run.summary());
    }
    for r in reports {
        if let Some(alt) = &r.alternative {
            by_algo
                .entry(alt.report.algorithm)
                .or_default()
                .push(alt.clone());
        }
    }
    by_algo.values().map(|v| compare(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Interval;
    use chrono::{TimeZone, Utc};

    fn smoke() -> Archive {
        load_archive(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/smoke.jsonl"))
            .unwrap()
            .0
    }

    fn january(id: &str, term: &str) -> Context {
        Context::new(
            id,
            [term],
            Interval::new(
                Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap(),
                Utc.with_ymd_and_hms(2018, 1, 31, 23, 59, 59).unwrap(),
            )
            .unwrap(),
        )
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = PipelineConfig::from_toml("", Path::new("x.toml")).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        let cfg = PipelineConfig::from_toml(
            "seed = 7\n[communities]\nalgorithm = \"infomap\"\nmin_size = 3\n[ranking]\nfunction = \"expr:FR\"\n",
            Path::new("x.toml"),
        )
        .unwrap();
        assert_eq!(cfg.communities.algorithm, Algorithm::Infomap);
        assert_ne!(cfg.hash(), PipelineConfig::default().hash());
        assert!(PipelineConfig::from_toml("bogus = 1", Path::new("x.toml")).is_err());
        assert!(
            PipelineConfig::from_toml("[communities]\nepsilon = 2.0", Path::new("x.toml")).is_err()
        );
        assert!(PipelineConfig::from_toml(
            "[ranking]\nfunction = \"expr:1 +\"",
            Path::new("x.toml")
        )
        .is_err());
        assert_ne!(cfg.context_seed(&"a".into()), cfg.context_seed(&"b".into()));
    }

    #[test]
    fn empty_context_leaves_store_unchanged() {
        let archive = smoke();
        let mut store = ProfileStore::default();
        let ctx = january("none", "nothingmatches");
        store.add_context(ctx.clone()).unwrap();
        let before = store.clone();
        let c = run_iteration(&mut store, &archive, &ctx, &PipelineConfig::default()).unwrap();
        assert_eq!(store, before);
        assert_eq!(c.report.posts_on, 0);
        assert_eq!(c.report.warnings.len(), 1);
    }

    #[test]
    fn smoke_iteration_falls_back_to_whole_network() {
        let archive = smoke();
        let mut store = ProfileStore::default();
        let ctx = january("dryjan", "dryjan");
        store.add_context(ctx.clone()).unwrap();
        let c = run_iteration(&mut store, &archive, &ctx, &PipelineConfig::default()).unwrap();
        // Three nodes cannot hold a community of four: all users are added.
        assert!(c.assignment.as_ref().unwrap().is_null());
        assert_eq!(store.profile_count(), 3);
        assert_eq!(c.report.users_added, 3);
        assert_eq!(
            store.context(&"dryjan".into()).unwrap().status,
            ContextStatus::Processed
        );
        let u1 = store.profile(&"u1".into()).unwrap();
        assert_eq!(u1.per_context[&ContextId::from("dryjan")].metrics.ic, 0.5);
    }

    #[test]
    fn batch_isolates_failures_and_keeps_order() {
        let archive = smoke();
        let mut store = ProfileStore::default();
        let mut rejected = january("bad", "running");
        rejected.status = ContextStatus::Rejected;
        let contexts = vec![
            january("dryjan", "dryjan"),
            rejected,
            january("health", "health"),
        ];
        for c in &contexts {
            store.add_context(c.clone()).unwrap();
        }
        let out = run_batch(&mut store, &archive, &contexts, &PipelineConfig::default());
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].context_id.as_str(), "bad");
        let ids: Vec<&str> = out
            .computed
            .iter()
            .map(|c| c.context.context_id.as_str())
            .collect();
        assert_eq!(ids, ["dryjan", "health"]);
        assert!(
            run_batch(&mut store, &archive, &[], &PipelineConfig::default())
                .computed
                .is_empty()
        );
    }

    #[test]
    fn concurrent_and_sequential_batches_agree() {
        let archive = smoke();
        let contexts = vec![
            january("dryjan", "dryjan"),
            january("health", "health"),
            january("run", "running"),
        ];
        let mut snapshots = Vec::new();
        for concurrent in [false, true] {
            let mut cfg = PipelineConfig::default();
            cfg.execution.concurrent_contexts = concurrent;
            cfg.communities.compare = true;
            let mut store = ProfileStore::default();
            for c in &contexts {
                store.add_context(c.clone()).unwrap();
            }
            let out = run_batch(&mut store, &archive, &contexts, &cfg);
            assert_eq!(out.comparison().len(), 2);
            snapshots.push(store.to_canonical_string());
        }
        assert_eq!(snapshots[0], snapshots[1]);
    }

    #[test]
    fn artifacts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::default();
        let ws = Workspace::new(dir.path(), &cfg);
        let archive = smoke();
        let mut store = ProfileStore::default();
        let ctx = january("dryjan", "dryjan");
        store.add_context(ctx.clone()).unwrap();
        let c = run_iteration(&mut store, &archive, &ctx, &cfg).unwrap();
        ws.write_artifacts(&c).unwrap();
        ws.save_store(&store).unwrap();
        assert_eq!(ws.read_network(&ctx.context_id).unwrap(), c.network);
        assert_eq!(ws.read_report(&ctx.context_id).unwrap(), c.report);
        assert_eq!(ws.reports().len(), 1);
        assert_eq!(ws.load_store().unwrap(), store);
        let t1 = table_networks(&store, &ws.reports());
        assert!(t1.starts_with("context,t1,t2,posts,nodes,edges"));
        assert!(t1.contains("dryjan,2018-01-01T00:00:00Z,2018-01-31T23:59:59Z,4,3,2,"));
    }
}
