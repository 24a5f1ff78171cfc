//! Candidate contexts mined from top-ranked users' timelines, and the review
//! queue that turns them into new contexts.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{BoundingBox, Context, ContextError, ContextStatus, Origin};
use crate::corpus::{timestamp, Archive, Interval, Post, TimelineSource};
use crate::ids::{CandidateId, ContextId, UserId};
use crate::ranking::RankedList;
use crate::store::{ProfileStore, StoreError};

pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("no candidate {0}")]
    UnknownCandidate(CandidateId),
    #[error("candidate {id} was already {status}")]
    Conflict {
        id: CandidateId,
        status: CandidateStatus,
    },
    #[error("edited context is invalid: {0}")]
    InvalidEdit(#[from] ContextError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("context {0} is not in the store")]
    UnknownContext(ContextId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateStatus {
    Pending,
    Approved,
    Rejected,
}

impl std::fmt::Display for CandidateStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pending => "pending",
            Self::Approved => "approved",
            Self::Rejected => "rejected",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateContext {
    #[serde(rename = "id")]
    pub candidate_id: CandidateId,
    pub hashtag: String,
    /// Distinct users whose posts carry the hashtag.
    pub support: usize,
    pub co_tags: BTreeMap<String, usize>,
    #[serde(rename = "t1", with = "timestamp")]
    pub start: DateTime<Utc>,
    #[serde(rename = "t2", with = "timestamp")]
    pub end: DateTime<Utc>,
    pub bbox: Option<BoundingBox>,
    pub source: ContextId,
    pub status: CandidateStatus,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub recurring: bool,
    /// Context created on approval.
    #[serde(default)]
    pub context_id: Option<ContextId>,
}

impl CandidateContext {
    pub fn id_for(hashtag: &str) -> CandidateId {
        CandidateId(format!("cand-{hashtag}"))
    }

    pub fn context_id_for(hashtag: &str) -> ContextId {
        ContextId(format!("ctx-{hashtag}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Approve,
    Reject,
}

/// Reviewer overrides applied on approval.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewEdits {
    #[serde(default, rename = "t1", with = "opt_timestamp")]
    pub start: Option<DateTime<Utc>>,
    #[serde(default, rename = "t2", with = "opt_timestamp")]
    pub end: Option<DateTime<Utc>>,
    #[serde(default)]
    pub bbox: Option<BoundingBox>,
}

mod opt_timestamp {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &Option<DateTime<Utc>>, s: S) -> Result<S::Ok, S::Error> {
        match ts {
            Some(t) => s.serialize_some(&timestamp::format(t)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DateTime<Utc>>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|s| timestamp::parse(&s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// One entry of the append-only decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub seq: usize,
    pub candidate_id: CandidateId,
    pub decision: Decision,
    pub note: String,
    pub edits: ReviewEdits,
    pub context_id: Option<ContextId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscoveryParams {
    pub top_k: usize,
    /// Days added before the first and after the last occurrence.
    pub padding_days: i64,
}

impl Default for DiscoveryParams {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            padding_days: 1,
        }
    }
}

#[derive(Default)]
struct TagStats<'a> {
    users: BTreeSet<&'a UserId>,
    co_tags: BTreeMap<String, usize>,
    first: Option<DateTime<Utc>>,
    last: Option<DateTime<Utc>>,
}

impl<'a> TagStats<'a> {
    fn add(&mut self, tag: &str, post: &'a Post) {
        self.users.insert(&post.author_id);
        for other in &post.hashtags {
            if other != tag {
                *self.co_tags.entry(other.clone()).or_insert(0) += 1;
            }
        }
        self.first = Some(self.first.map_or(post.timestamp, |t| t.min(post.timestamp)));
        self.last = Some(self.last.map_or(post.timestamp, |t| t.max(post.timestamp)));
    }

    fn into_candidate(
        self,
        tag: String,
        source: &Context,
        padding: Duration,
        recurring: bool,
    ) -> CandidateContext {
        let first = self.first.expect("stats exist only for seen tags");
        let last = self.last.expect("stats exist only for seen tags");
        CandidateContext {
            candidate_id: CandidateContext::id_for(&tag),
            support: self.users.len(),
            co_tags: self.co_tags,
            start: first - padding,
            end: last + padding,
            bbox: source.bbox,
            source: source.context_id.clone(),
            status: CandidateStatus::Pending,
            note: String::new(),
            recurring,
            context_id: None,
            hashtag: tag,
        }
    }
}

fn sort_candidates(v: &mut [CandidateContext]) {
    v.sort_by(|a, b| {
        b.support
            .cmp(&a.support)
            .then_with(|| a.hashtag.cmp(&b.hashtag))
    });
}

/// Hashtags in the full timelines of the first `top_k` ranked users that are
/// not in `history`, sorted by support descending then tag.
pub fn discover(
    ranked: &RankedList,
    archive: &impl TimelineSource,
    history: &BTreeSet<String>,
    source: &Context,
    params: DiscoveryParams,
) -> Vec<CandidateContext> {
    let mut stats: BTreeMap<&str, TagStats> = BTreeMap::new();
    for user in ranked.user_ids().into_iter().take(params.top_k.max(1)) {
        let Ok(timeline) = archive.timeline(user, &Interval::unbounded()) else {
            continue;
        };
        for post in timeline.posts {
            for tag in &post.hashtags {
                if !history.contains(tag) {
                    stats.entry(tag.as_str()).or_default().add(tag, post);
                }
            }
        }
    }
    let padding = Duration::days(params.padding_days);
    let mut out: Vec<CandidateContext> = stats
        .into_iter()
        .map(|(tag, s)| s.into_candidate(tag.to_string(), source, padding, false))
        .collect();
    sort_candidates(&mut out);
    out
}

/// Splits a trailing four-digit year: `carersweek2018` -> (`carersweek`, 2018).
fn year_suffix(tag: &str) -> Option<(&str, u32)> {
    if tag.len() <= 4 || !tag.is_char_boundary(tag.len() - 4) {
        return None;
    }
    let (stem, year) = tag.split_at(tag.len() - 4);
    if year.bytes().all(|b| b.is_ascii_digit()) && !stem.ends_with(|c: char| c.is_ascii_digit()) {
        Some((stem, year.parse().ok()?))
    } else {
        None
    }
}

/// Later editions of processed contexts' year-suffixed terms that occur as
/// hashtags in the archive and are not in the store's history.
pub fn monitor_recurring(
    store: &ProfileStore,
    archive: &Archive,
    padding_days: i64,
) -> Vec<CandidateContext> {
    let history = store.history_tags();
    let tags = archive.hashtags();
    let mut proposals: BTreeMap<String, &Context> = BTreeMap::new();
    for ctx in store.processed_contexts() {
        for term in &ctx.terms {
            let Some((stem, year)) = year_suffix(term) else {
                continue;
            };
            for tag in tags.range(stem..) {
                if !tag.starts_with(stem) {
                    break;
                }
                if let Some((s, y)) = year_suffix(tag) {
                    if s == stem && y > year && !history.contains(*tag) {
                        proposals.entry(tag.to_string()).or_insert(ctx);
                    }
                }
            }
        }
    }
    let padding = Duration::days(padding_days);
    let mut out: Vec<CandidateContext> = proposals
        .into_iter()
        .map(|(tag, ctx)| {
            let mut s = TagStats::default();
            for p in archive.posts_tagged(&tag) {
                s.add(&tag, p);
            }
            s.into_candidate(tag, ctx, padding, true)
        })
        .collect();
    sort_candidates(&mut out);
    out
}

/// Records a decision on a pending candidate. Approval adds an approved
/// context `ctx-<hashtag>` to the store and returns it.
pub fn review(
    store: &mut ProfileStore,
    id: &CandidateId,
    decision: Decision,
    note: &str,
    edits: ReviewEdits,
) -> Result<Option<Context>, DiscoveryError> {
    let cand = store
        .candidates
        .get(id)
        .ok_or_else(|| DiscoveryError::UnknownCandidate(id.clone()))?
        .clone();
    if cand.status != CandidateStatus::Pending {
        return Err(DiscoveryError::Conflict {
            id: id.clone(),
            status: cand.status,
        });
    }
    let created = match decision {
        Decision::Reject => None,
        Decision::Approve => {
            let start = edits.start.unwrap_or(cand.start);
            let end = edits.end.unwrap_or(cand.end);
            let ctx = Context {
                context_id: CandidateContext::context_id_for(&cand.hashtag),
                name: cand.hashtag.clone(),
                terms: vec![cand.hashtag.clone()],
                start,
                end,
                bbox: edits.bbox.or(cand.bbox),
                status: ContextStatus::Approved,
                origin: Origin::DiscoveredFrom(cand.source.clone()),
            };
            ctx.validate()?;
            store.add_context(ctx.clone())?;
            Some(ctx)
        }
    };
    let entry = store.candidates.get_mut(id).expect("checked above");
    entry.status = match decision {
        Decision::Approve => CandidateStatus::Approved,
        Decision::Reject => CandidateStatus::Rejected,
    };
    entry.note = note.to_string();
    entry.context_id = created.as_ref().map(|c| c.context_id.clone());
    let seq = store.decisions.len();
    store.decisions.push(DecisionRecord {
        seq,
        candidate_id: id.clone(),
        decision,
        note: note.to_string(),
        edits,
        context_id: entry.context_id.clone(),
    });
    Ok(created)
}
