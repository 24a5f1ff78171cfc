//! File-backed profile database.
//!
//! The store keeps the context catalog, the candidate queue with its
//! decision log, one record per processed context run and one profile per
//! user. [`ProfileStore::snapshot`] writes a canonical JSON-lines file whose
//! first line carries a version, the record count and a SHA-256 of the rest;
//! [`ProfileStore::restore`] refuses files that do not match.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::community::{Algorithm, DetectionReport, DetectionSummary};
use crate::context::{Context, ContextStatus};
use crate::corpus::UserSnapshot;
use crate::discovery::{CandidateContext, DecisionRecord};
use crate::ids::{CandidateId, ContextId, UserId};
use crate::metrics::{follower_rank, CoreFeatures, MetricVector};

pub const FORMAT_NAME: &str = "ctxmine-store";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("cannot access store file {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("store file {path} failed integrity check: {reason}")]
    Integrity { path: PathBuf, reason: String },
    #[error("store file {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("context {0} is not in the catalog")]
    UnknownContext(ContextId),
    #[error("context {0} already exists")]
    DuplicateContext(ContextId),
    #[error("no profile for user {0}")]
    UnknownUser(UserId),
    #[error("unknown label {0:?}; expected individual, professional or association")]
    UnknownLabel(String),
    #[error("unknown merge policy {0:?}; expected append, latest-wins or mean")]
    UnknownPolicy(String),
}

/// Reviewer-assigned account type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Individual,
    Professional,
    Association,
}

impl FromStr for Label {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "individual" => Ok(Self::Individual),
            "professional" => Ok(Self::Professional),
            "association" => Ok(Self::Association),
            _ => Err(StoreError::UnknownLabel(s.to_string())),
        }
    }
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Individual => "individual",
            Self::Professional => "professional",
            Self::Association => "association",
        }
    }
}

/// How per-context records fold into one set of ranking terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergePolicy {
    /// Keep every context record; terms are sums over all of them.
    #[default]
    Append,
    /// Only the most recent context (by interval) contributes.
    LatestWins,
    /// Terms are means over the user's contexts.
    Mean,
}

impl FromStr for MergePolicy {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "append" => Ok(Self::Append),
            "latest-wins" => Ok(Self::LatestWins),
            "mean" => Ok(Self::Mean),
            _ => Err(StoreError::UnknownPolicy(s.to_string())),
        }
    }
}

/// One user's outcome in one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub features: CoreFeatures,
    pub metrics: MetricVector,
    /// Indexes into the context's retained communities.
    pub communities: Vec<usize>,
    pub posts_on: u64,
    pub posts_off: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub user_id: UserId,
    pub handle: String,
    pub snapshot: UserSnapshot,
    pub per_context: BTreeMap<ContextId, ContextRecord>,
    pub first_seen: ContextId,
    pub last_seen: ContextId,
    #[serde(default)]
    pub labels: BTreeSet<Label>,
}

impl ProfileEntry {
    pub fn participations(&self) -> usize {
        self.per_context.len()
    }

    pub fn follower_rank(&self) -> f64 {
        follower_rank(&CoreFeatures {
            f1: self.snapshot.follower_count,
            f2: self.snapshot.followee_count,
            ..Default::default()
        })
    }

    /// Member of a retained community in at least one context.
    pub fn in_community(&self) -> bool {
        self.per_context.values().any(|r| !r.communities.is_empty())
    }

    /// Authored posts, on and off context, over all recorded contexts.
    pub fn total_posts(&self) -> u64 {
        self.per_context
            .values()
            .map(|r| r.posts_on + r.posts_off)
            .sum()
    }
}

/// Outcome of one processed context, kept for aggregate reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub context_id: ContextId,
    pub algorithm: Algorithm,
    pub detection: DetectionReport,
    pub added_users: BTreeSet<UserId>,
    pub config_hash: String,
}

impl RunRecord {
    pub fn summary(&self) -> DetectionSummary {
        DetectionSummary {
            context_id: self.context_id.clone(),
            report: self.detection.clone(),
            added_users: self.added_users.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileStore {
    pub(crate) contexts: BTreeMap<ContextId, Context>,
    pub(crate) candidates: BTreeMap<CandidateId, CandidateContext>,
    pub(crate) decisions: Vec<DecisionRecord>,
    runs: BTreeMap<ContextId, RunRecord>,
    profiles: BTreeMap<UserId, ProfileEntry>,
    policy: MergePolicy,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    records: usize,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Settings { policy: MergePolicy },
    Context(Context),
    Candidate(CandidateContext),
    Decision(DecisionRecord),
    Run(RunRecord),
    Profile(ProfileEntry),
}

pub(crate) fn hex_sha256(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        write!(out, "{b:02x}").expect("writing to a String cannot fail");
    }
    out
}

impl ProfileStore {
    pub fn new(policy: MergePolicy) -> Self {
        Self {
            policy,
            ..Default::default()
        }
    }

    pub fn policy(&self) -> MergePolicy {
        self.policy
    }

    pub fn set_policy(&mut self, policy: MergePolicy) {
        self.policy = policy;
    }

    // Context catalog.

    pub fn contexts(&self) -> impl Iterator<Item = &Context> + '_ {
        self.contexts.values()
    }

    pub fn context(&self, id: &ContextId) -> Option<&Context> {
        self.contexts.get(id)
    }

    /// Adds a context; an id already present is an error.
    pub fn add_context(&mut self, ctx: Context) -> Result<(), StoreError> {
        if self.contexts.contains_key(&ctx.context_id) {
            return Err(StoreError::DuplicateContext(ctx.context_id));
        }
        self.contexts.insert(ctx.context_id.clone(), ctx);
        Ok(())
    }

    /// Adds or replaces a context definition, keeping a processed status.
    pub fn put_context(&mut self, mut ctx: Context) {
        if let Some(old) = self.contexts.get(&ctx.context_id) {
            if old.status == ContextStatus::Processed {
                ctx.status = ContextStatus::Processed;
            }
        }
        self.contexts.insert(ctx.context_id.clone(), ctx);
    }

    /// Approved contexts not yet processed, in id order.
    pub fn pending_contexts(&self) -> Vec<&Context> {
        self.contexts
            .values()
            .filter(|c| c.status == ContextStatus::Approved)
            .collect()
    }

    /// Processed contexts ordered by (start, id).
    pub fn processed_contexts(&self) -> Vec<&Context> {
        let mut v: Vec<&Context> = self
            .contexts
            .values()
            .filter(|c| c.status == ContextStatus::Processed)
            .collect();
        v.sort_by(|a, b| (a.start, &a.context_id).cmp(&(b.start, &b.context_id)));
        v
    }

    // Candidate queue.

    pub fn candidates(&self) -> impl Iterator<Item = &CandidateContext> + '_ {
        self.candidates.values()
    }

    pub fn candidate(&self, id: &CandidateId) -> Option<&CandidateContext> {
        self.candidates.get(id)
    }

    pub fn decisions(&self) -> &[DecisionRecord] {
        &self.decisions
    }

    /// Queues candidates whose id is new; returns how many were added.
    pub fn add_candidates(&mut self, list: impl IntoIterator<Item = CandidateContext>) -> usize {
        let mut added = 0;
        for c in list {
            if !self.candidates.contains_key(&c.candidate_id) {
                self.candidates.insert(c.candidate_id.clone(), c);
                added += 1;
            }
        }
        added
    }

    /// Hashtags that discovery must never propose again: every term of every
    /// known context plus every hashtag that was ever a candidate.
    pub fn history_tags(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self
            .contexts
            .values()
            .flat_map(|c| c.terms.iter().cloned())
            .collect();
        out.extend(self.candidates.values().map(|c| c.hashtag.clone()));
        out
    }

    // Profiles.

    pub fn profiles(&self) -> impl Iterator<Item = &ProfileEntry> + '_ {
        self.profiles.values()
    }

    pub fn profile(&self, user: &UserId) -> Option<&ProfileEntry> {
        self.profiles.get(user)
    }

    pub fn profile_count(&self) -> usize {
        self.profiles.len()
    }

    pub fn runs(&self) -> impl Iterator<Item = &RunRecord> + '_ {
        self.runs.values()
    }

    pub fn run(&self, id: &ContextId) -> Option<&RunRecord> {
        self.runs.get(id)
    }

    fn order_key(&self, id: &ContextId) -> (chrono::DateTime<chrono::Utc>, ContextId) {
        let start = self
            .contexts
            .get(id)
            .map_or(chrono::DateTime::<chrono::Utc>::MIN_UTC, |c| c.start);
        (start, id.clone())
    }

    fn refresh_seen(&self, entry: &mut ProfileEntry) {
        let keys: Vec<_> = entry
            .per_context
            .keys()
            .map(|k| self.order_key(k))
            .collect();
        if let (Some(first), Some(last)) = (keys.iter().min(), keys.iter().max()) {
            entry.first_seen = first.1.clone();
            entry.last_seen = last.1.clone();
        }
    }

    /// Records `user`'s outcome in `context`, replacing any earlier record for
    /// the same context. The snapshot is refreshed when `context` is the
    /// user's latest.
    pub fn upsert(
        &mut self,
        snapshot: &UserSnapshot,
        context: &ContextId,
        record: ContextRecord,
    ) -> Result<&ProfileEntry, StoreError> {
        if !self.contexts.contains_key(context) {
            return Err(StoreError::UnknownContext(context.clone()));
        }
        let user = snapshot.user_id.clone();
        let mut entry = self.profiles.remove(&user).unwrap_or_else(|| ProfileEntry {
            user_id: user.clone(),
            handle: snapshot.handle.clone(),
            snapshot: snapshot.clone(),
            per_context: BTreeMap::new(),
            first_seen: context.clone(),
            last_seen: context.clone(),
            labels: BTreeSet::new(),
        });
        entry.per_context.insert(context.clone(), record);
        self.refresh_seen(&mut entry);
        if &entry.last_seen == context {
            entry.snapshot = snapshot.clone();
            entry.handle = snapshot.handle.clone();
        }
        Ok(self.profiles.entry(user).or_insert(entry))
    }

    /// Removes every per-context record of `context`; profiles left with no
    /// context are dropped.
    fn clear_context(&mut self, context: &ContextId) {
        let touched: Vec<UserId> = self
            .profiles
            .iter()
            .filter(|(_, e)| e.per_context.contains_key(context))
            .map(|(u, _)| u.clone())
            .collect();
        for u in touched {
            let mut e = self.profiles.remove(&u).expect("listed above");
            e.per_context.remove(context);
            if !e.per_context.is_empty() {
                self.refresh_seen(&mut e);
                self.profiles.insert(u, e);
            }
        }
    }

    /// Replaces everything recorded for one context run in a single step and
    /// marks the context processed.
    pub fn commit_run(
        &mut self,
        run: RunRecord,
        rows: Vec<(UserSnapshot, ContextRecord)>,
    ) -> Result<(), StoreError> {
        let id = run.context_id.clone();
        if !self.contexts.contains_key(&id) {
            return Err(StoreError::UnknownContext(id));
        }
        self.clear_context(&id);
        for (snap, rec) in rows {
            self.upsert(&snap, &id, rec)?;
        }
        self.runs.insert(id.clone(), run);
        if let Some(c) = self.contexts.get_mut(&id) {
            c.status = ContextStatus::Processed;
        }
        Ok(())
    }

    /// Profiles with at least `min_participations` contexts, by participations
    /// descending, then follower rank descending, then user id.
    pub fn repeat_users(&self, min_participations: usize) -> Vec<&ProfileEntry> {
        let mut v: Vec<&ProfileEntry> = self
            .profiles
            .values()
            .filter(|e| e.participations() >= min_participations)
            .collect();
        v.sort_by(|a, b| {
            b.participations()
                .cmp(&a.participations())
                .then(b.follower_rank().total_cmp(&a.follower_rank()))
                .then(a.user_id.cmp(&b.user_id))
        });
        v
    }

    pub fn set_labels(
        &mut self,
        user: &UserId,
        labels: BTreeSet<Label>,
    ) -> Result<&ProfileEntry, StoreError> {
        let e = self
            .profiles
            .get_mut(user)
            .ok_or_else(|| StoreError::UnknownUser(user.clone()))?;
        e.labels = labels;
        Ok(e)
    }

    // Persistence.

    /// Canonical file contents: header line, then one record per line.
    pub fn to_canonical_string(&self) -> String {
        let mut body = String::new();
        let mut count = 0usize;
        let mut push = |r: Record| {
            body.push_str(&serde_json::to_string(&r).expect("store records serialize"));
            body.push('\n');
            count += 1;
        };
        push(Record::Settings {
            policy: self.policy,
        });
        self.contexts
            .values()
            .for_each(|c| push(Record::Context(c.clone())));
        self.candidates
            .values()
            .for_each(|c| push(Record::Candidate(c.clone())));
        self.decisions
            .iter()
            .for_each(|d| push(Record::Decision(d.clone())));
        self.runs
            .values()
            .for_each(|r| push(Record::Run(r.clone())));
        self.profiles
            .values()
            .for_each(|p| push(Record::Profile(p.clone())));
        let header = Header {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            records: count,
            sha256: hex_sha256(body.as_bytes()),
        };
        format!(
            "{}\n{body}",
            serde_json::to_string(&header).expect("header serializes")
        )
    }

    /// Writes the canonical file next to `path` and renames it into place.
    pub fn snapshot(&self, path: &Path) -> Result<(), StoreError> {
        let io_err = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err)?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_canonical_string()).map_err(io_err)?;
        fs::rename(&tmp, path).map_err(io_err)
    }

    pub fn restore(path: &Path) -> Result<Self, StoreError> {
        let text = fs::read_to_string(path).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Restores from `path`, or returns an empty store when it does not exist.
    pub fn open_or_default(path: &Path) -> Result<Self, StoreError> {
        if path.exists() {
            Self::restore(path)
        } else {
            Ok(Self::default())
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, StoreError> {
        let integrity = |reason: String| StoreError::Integrity {
            path: path.to_path_buf(),
            reason,
        };
        let (head, body) = text
            .split_once('\n')
            .ok_or_else(|| integrity("missing header line".into()))?;
        let header: Header =
            serde_json::from_str(head).map_err(|e| integrity(format!("unreadable header: {e}")))?;
        if header.format != FORMAT_NAME {
            return Err(integrity(format!("unexpected format {:?}", header.format)));
        }
        if header.version != FORMAT_VERSION {
            return Err(integrity(format!("unsupported version {}", header.version)));
        }
        let actual = hex_sha256(body.as_bytes());
        if actual != header.sha256 {
            return Err(integrity(format!(
                "checksum mismatch: header {} but content {actual}",
                header.sha256
            )));
        }
        let lines: Vec<&str> = body.lines().collect();
        if lines.len() != header.records {
            return Err(integrity(format!(
                "header announces {} records, found {}",
                header.records,
                lines.len()
            )));
        }
        let mut store = Self::default();
        for (i, line) in lines.iter().enumerate() {
            let rec: Record = serde_json::from_str(line).map_err(|e| StoreError::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })?;
            match rec {
                Record::Settings { policy } => store.policy = policy,
                Record::Context(c) => {
                    store.contexts.insert(c.context_id.clone(), c);
                }
                Record::Candidate(c) => {
                    store.candidates.insert(c.candidate_id.clone(), c);
                }
                Record::Decision(d) => store.decisions.push(d),
                Record::Run(r) => {
                    store.runs.insert(r.context_id.clone(), r);
                }
                Record::Profile(p) => {
                    store.profiles.insert(p.user_id.clone(), p);
                }
            }
        }
        Ok(store)
    }
}
