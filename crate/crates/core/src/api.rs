//! Transport-independent HTTP API over a workspace.
//!
//! Reads serve the current store snapshot without blocking. Mutations are
//! serialized through a single writer: each one works on a copy of the
//! store, persists it, and only then publishes it to readers.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, RwLock};

use percent_encoding::percent_decode_str;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::Archive;
use crate::discovery::{review, CandidateStatus, Decision, DiscoveryError, ReviewEdits};
use crate::ids::{CandidateId, ContextId, UserId};
use crate::pipeline::{step, PipelineConfig, PipelineError, Workspace};
use crate::ranking::{rank, RankFn, RankOptions};
use crate::store::{Label, MergePolicy, ProfileStore, StoreError};

pub const JSON: &str = "application/json";
pub const CSV: &str = "text/csv; charset=utf-8";

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub content_type: &'static str,
    pub body: String,
}

impl ApiResponse {
    fn json(status: u16, value: &impl Serialize) -> Self {
        Self {
            status,
            content_type: JSON,
            body: serde_json::to_string(value).expect("response serializes"),
        }
    }

    fn ok(value: &impl Serialize) -> Self {
        Self::json(200, value)
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        Self::json(status, &json!({ "error": message.into() }))
    }
}

#[derive(Debug)]
struct ApiError(u16, String);

impl ApiError {
    fn not_found(what: impl std::fmt::Display) -> Self {
        Self(404, format!("{what} not found"))
    }

    fn bad(message: impl Into<String>) -> Self {
        Self(400, message.into())
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::UnknownContext(_) => 404,
            PipelineError::NotRunnable { .. } => 409,
            PipelineError::Rank(_) | PipelineError::Context(_) => 400,
            PipelineError::Store(s) => return s.into(),
            _ => 500,
        };
        Self(status, e.to_string())
    }
}

impl From<&StoreError> for ApiError {
    fn from(e: &StoreError) -> Self {
        let status = match e {
            StoreError::UnknownContext(_) | StoreError::UnknownUser(_) => 404,
            StoreError::DuplicateContext(_) => 409,
            StoreError::UnknownLabel(_) | StoreError::UnknownPolicy(_) => 400,
            _ => 500,
        };
        Self(status, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        (&e).into()
    }
}

impl From<DiscoveryError> for ApiError {
    fn from(e: DiscoveryError) -> Self {
        let status = match &e {
            DiscoveryError::UnknownCandidate(_) | DiscoveryError::UnknownContext(_) => 404,
            DiscoveryError::Conflict { .. } => 409,
            DiscoveryError::InvalidEdit(_) => 400,
            DiscoveryError::Store(s) => return s.into(),
        };
        Self(status, e.to_string())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    decision: Decision,
    #[serde(default)]
    note: String,
    #[serde(default)]
    edits: ReviewEdits,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct IterationBody {
    /// Contexts to run; all pending ones when absent.
    contexts: Option<Vec<ContextId>>,
    #[serde(default = "yes")]
    discover: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelsBody {
    labels: Vec<String>,
}

pub struct Api {
    workspace: Workspace,
    config: PipelineConfig,
    archive: Arc<Archive>,
    store: RwLock<Arc<ProfileStore>>,
    writer: Mutex<()>,
}

impl Api {
    pub fn new(
        workspace: Workspace,
        config: PipelineConfig,
        archive: Archive,
        store: ProfileStore,
    ) -> Self {
        Self {
            workspace,
            config,
            archive: Arc::new(archive),
            store: RwLock::new(Arc::new(store)),
            writer: Mutex::new(()),
        }
    }

    /// Loads the archive and store named by `config` under `workspace`.
    pub fn open(workspace: Workspace, config: PipelineConfig) -> Result<Self, PipelineError> {
        let archive = workspace.load_archive(&config)?;
        let store = workspace.load_store()?;
        Ok(Self::new(workspace, config, archive, store))
    }

    /// The snapshot readers currently see.
    pub fn store(&self) -> Arc<ProfileStore> {
        self.store.read().expect("store lock poisoned").clone()
    }

    fn mutate<T>(
        &self,
        f: impl FnOnce(&mut ProfileStore) -> Result<T, ApiError>,
    ) -> Result<T, ApiError> {
        let _writer = self.writer.lock().expect("writer lock poisoned");
        let mut next = (*self.store()).clone();
        let out = f(&mut next)?;
        self.workspace.save_store(&next)?;
        *self.store.write().expect("store lock poisoned") = Arc::new(next);
        Ok(out)
    }

    /// Dispatches one request. `target` is the path with an optional query.
    pub fn handle(&self, method: &str, target: &str, body: &str) -> ApiResponse {
        let (path, query) = target.split_once('?').unwrap_or((target, ""));
        let query: BTreeMap<String, String> = form_urlencoded::parse(query.as_bytes())
            .into_owned()
            .collect();
        let segments: Vec<String> = path
            .split('/')
            .filter(|s| !s.is_empty())
            .map(|s| percent_decode_str(s).decode_utf8_lossy().into_owned())
            .collect();
        let segs: Vec<&str> = segments.iter().map(String::as_str).collect();
        let result = match (method, segs.as_slice()) {
            ("GET", ["contexts"]) => Ok(self.contexts()),
            ("GET", ["contexts", id]) => self.context(id),
            ("GET", ["contexts", id, "report"]) => self.report(id),
            ("GET", ["contexts", id, "network"]) => self.network(id),
            ("GET", ["communities", id]) => self.communities(id),
            ("GET", ["profiles", user]) => self.profile(user),
            ("GET", ["rankings"]) => self.rankings(&query),
            ("GET", ["candidates"]) => self.candidates(&query),
            ("POST", ["candidates", id, "decision"]) => self.decide(id, body),
            ("POST", ["iterations"]) => self.iterate(body),
            ("POST", ["profiles", user, "labels"]) => self.label(user, body),
            (
                _,
                ["contexts" | "communities" | "profiles" | "rankings" | "candidates" | "iterations", ..],
            ) => Err(ApiError(405, format!("{method} not allowed on {path}"))),
            _ => Err(ApiError::not_found(format!("route {path}"))),
        };
        result.unwrap_or_else(|ApiError(status, message)| ApiResponse::error(status, message))
    }

    fn contexts(&self) -> ApiResponse {
        let store = self.store();
        let list: Vec<_> = store.contexts().collect();
        ApiResponse::ok(&list)
    }

    fn context(&self, id: &str) -> Result<ApiResponse, ApiError> {
        let store = self.store();
        let ctx = store
            .context(&id.into())
            .ok_or_else(|| ApiError::not_found(format!("context {id}")))?;
        Ok(ApiResponse::ok(ctx))
    }

    fn require_context(&self, id: &str) -> Result<ContextId, ApiError> {
        let id = ContextId::from(id);
        match self.store().context(&id) {
            Some(_) => Ok(id),
            None => Err(ApiError::not_found(format!("context {id}"))),
        }
    }

    fn report(&self, id: &str) -> Result<ApiResponse, ApiError> {
        let id = self.require_context(id)?;
        let report = self
            .workspace
            .read_report(&id)
            .ok_or_else(|| ApiError::not_found(format!("report for context {id}")))?;
        Ok(ApiResponse::ok(&report))
    }

    fn network(&self, id: &str) -> Result<ApiResponse, ApiError> {
        let id = self.require_context(id)?;
        let net = self
            .workspace
            .read_network(&id)
            .ok_or_else(|| ApiError::not_found(format!("network for context {id}")))?;
        Ok(ApiResponse::ok(&net))
    }

    fn communities(&self, id: &str) -> Result<ApiResponse, ApiError> {
        let id = self.require_context(id)?;
        let store = self.store();
        let run = store
            .run(&id)
            .ok_or_else(|| ApiError::not_found(format!("run for context {id}")))?;
        let communities = self.workspace.read_communities(&id).unwrap_or_default();
        Ok(ApiResponse::ok(&json!({
            "context_id": id,
            "run": run,
            "communities": communities,
        })))
    }

    fn profile(&self, user: &str) -> Result<ApiResponse, ApiError> {
        let store = self.store();
        let entry = store
            .profile(&user.into())
            .ok_or_else(|| ApiError::not_found(format!("profile {user}")))?;
        Ok(ApiResponse::ok(entry))
    }

    fn rankings(&self, query: &BTreeMap<String, String>) -> Result<ApiResponse, ApiError> {
        let f: RankFn = query
            .get("fn")
            .map_or(self.config.ranking.function.as_str(), String::as_str)
            .parse()
            .map_err(|e: crate::ranking::RankError| ApiError::bad(e.to_string()))?;
        let top = match query.get("top") {
            None => Some(self.config.ranking.top),
            Some(t) if t == "all" => None,
            Some(t) => Some(
                t.parse()
                    .map_err(|_| ApiError::bad(format!("invalid top {t:?}")))?,
            ),
        };
        let policy = match query.get("policy") {
            None => self.config.ranking.policy,
            Some(p) => p.parse::<MergePolicy>()?,
        };
        let opts = RankOptions {
            policy,
            ..self.config.rank_options()
        };
        let list = rank(&self.store(), &f, &opts, top).map_err(|e| ApiError::bad(e.to_string()))?;
        match query.get("format").map(String::as_str) {
            None | Some("json") => Ok(ApiResponse::ok(&list)),
            Some("csv") => Ok(ApiResponse {
                status: 200,
                content_type: CSV,
                body: list.to_csv(),
            }),
            Some(other) => Err(ApiError::bad(format!(
                "unknown format {other:?}; expected json or csv"
            ))),
        }
    }

    fn candidates(&self, query: &BTreeMap<String, String>) -> Result<ApiResponse, ApiError> {
        let status: Option<CandidateStatus> = query
            .get("status")
            .map(|s| {
                serde_json::from_value(json!(s))
                    .map_err(|_| ApiError::bad(format!("unknown status {s:?}")))
            })
            .transpose()?;
        let store = self.store();
        let list: Vec<_> = store
            .candidates()
            .filter(|c| status.is_none_or(|s| c.status == s))
            .collect();
        Ok(ApiResponse::ok(&list))
    }

    fn decide(&self, id: &str, body: &str) -> Result<ApiResponse, ApiError> {
        let req: DecisionBody =
            serde_json::from_str(body).map_err(|e| ApiError::bad(format!("invalid body: {e}")))?;
        let id = CandidateId::from(id);
        let (candidate, context) = self.mutate(|store| {
            let ctx = review(store, &id, req.decision, &req.note, req.edits)?;
            Ok((store.candidate(&id).cloned(), ctx))
        })?;
        Ok(ApiResponse::ok(
            &json!({ "candidate": candidate, "context": context }),
        ))
    }

    fn iterate(&self, body: &str) -> Result<ApiResponse, ApiError> {
        let req: IterationBody = if body.trim().is_empty() {
            IterationBody {
                discover: true,
                ..IterationBody::default()
            }
        } else {
            serde_json::from_str(body).map_err(|e| ApiError::bad(format!("invalid body: {e}")))?
        };
        let result = self.mutate(|store| {
            Ok(step(
                &self.workspace,
                store,
                &self.archive,
                req.contexts.as_deref(),
                req.discover,
                &self.config,
            )?)
        })?;
        Ok(ApiResponse::ok(&result))
    }

    fn label(&self, user: &str, body: &str) -> Result<ApiResponse, ApiError> {
        let req: LabelsBody =
            serde_json::from_str(body).map_err(|e| ApiError::bad(format!("invalid body: {e}")))?;
        let labels = req
            .labels
            .iter()
            .map(|l| l.parse::<Label>())
            .collect::<Result<BTreeSet<_>, _>>()?;
        let user = UserId::from(user);
        let entry = self.mutate(|store| Ok(store.set_labels(&user, labels)?.clone()))?;
        Ok(ApiResponse::ok(&entry))
    }
}
