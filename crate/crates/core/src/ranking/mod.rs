//! User rankings over the profile store.
//!
//! Each built-in function folds a user's per-context metrics into
//! [`ScoreTerms`] (sums over every context the user took part in, under the
//! default append policy) and scores:
//!
//! - `rank1 = sum_TF / (sum_IC + 1)`
//! - `rank2 = |FR - 1| * (sum_TA + sum_IC)`
//! - `rank3 = |FR - 1| * (sum_TA + 1 / (sum_IC + 1))`
//!
//! Users with `FR = 0` whose min-max normalised post volume is below the
//! threshold are inactive: they sort last with no score.

pub mod expr;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::ids::UserId;
use crate::par::Execution;
use crate::store::{hex_sha256, Label, MergePolicy, ProfileEntry, ProfileStore};

pub use expr::{EvalError, Expr, ParseError};

pub const INACTIVE_THRESHOLD: f64 = 0.005;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankError {
    #[error("unknown ranking function {0:?}; expected rank1, rank2, rank3 or expr:<expression>")]
    UnknownFunction(String),
    #[error("invalid expression: {0}")]
    Parse(#[from] ParseError),
    #[error("evaluating score for user {user}: {source}")]
    Eval { user: UserId, source: EvalError },
}

/// A user's metrics folded over their contexts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ScoreTerms {
    #[serde(rename = "sum_TF")]
    pub sum_tf: f64,
    #[serde(rename = "sum_TS")]
    pub sum_ts: f64,
    #[serde(rename = "sum_TA")]
    pub sum_ta: f64,
    #[serde(rename = "sum_IC")]
    pub sum_ic: f64,
    #[serde(rename = "FR")]
    pub fr: f64,
    pub participations: usize,
    /// Authored posts, on and off context, over all recorded contexts.
    pub total_posts: u64,
}

impl ScoreTerms {
    pub fn of(entry: &ProfileEntry, policy: MergePolicy) -> Self {
        let records: Vec<_> = match policy {
            MergePolicy::LatestWins => entry
                .per_context
                .get(&entry.last_seen)
                .into_iter()
                .collect(),
            MergePolicy::Append | MergePolicy::Mean => entry.per_context.values().collect(),
        };
        let sum = |f: fn(&crate::metrics::MetricVector) -> f64| {
            records.iter().map(|r| f(&r.metrics)).sum::<f64>()
        };
        let mut t = ScoreTerms {
            sum_tf: sum(|m| m.tf),
            sum_ts: sum(|m| m.ts),
            sum_ta: sum(|m| m.ta),
            sum_ic: sum(|m| m.ic),
            fr: entry.follower_rank(),
            participations: entry.participations(),
            total_posts: entry.total_posts(),
        };
        if policy == MergePolicy::Mean && !records.is_empty() {
            let n = records.len() as f64;
            t.sum_tf /= n;
            t.sum_ts /= n;
            t.sum_ta /= n;
            t.sum_ic /= n;
        }
        t
    }
}

pub fn rank1(t: &ScoreTerms) -> f64 {
    (1.0 / (t.sum_ic + 1.0)) * t.sum_tf
}

pub fn rank2(t: &ScoreTerms) -> f64 {
    (t.fr - 1.0).abs() * (t.sum_ta + t.sum_ic)
}

pub fn rank3(t: &ScoreTerms) -> f64 {
    (t.fr - 1.0).abs() * (t.sum_ta + 1.0 / (t.sum_ic + 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub enum RankFn {
    Rank1,
    Rank2,
    Rank3,
    Custom { source: String, expr: Expr },
}

impl RankFn {
    pub fn custom(source: &str) -> Result<Self, RankError> {
        Ok(Self::Custom {
            source: source.to_string(),
            expr: Expr::parse(source)?,
        })
    }

    pub fn score(&self, t: &ScoreTerms) -> Result<f64, EvalError> {
        match self {
            Self::Rank1 => Ok(rank1(t)),
            Self::Rank2 => Ok(rank2(t)),
            Self::Rank3 => Ok(rank3(t)),
            Self::Custom { expr, .. } => expr.eval(t),
        }
    }
}

impl fmt::Display for RankFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Rank1 => f.write_str("rank1"),
            Self::Rank2 => f.write_str("rank2"),
            Self::Rank3 => f.write_str("rank3"),
            Self::Custom { source, .. } => write!(f, "expr:{source}"),
        }
    }
}

impl FromStr for RankFn {
    type Err = RankError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rank1" => Ok(Self::Rank1),
            "rank2" => Ok(Self::Rank2),
            "rank3" => Ok(Self::Rank3),
            _ => match s.strip_prefix("expr:") {
                Some(src) => Self::custom(src),
                None => Err(RankError::UnknownFunction(s.to_string())),
            },
        }
    }
}

fn serialize_score<S: Serializer>(score: &f64, s: S) -> Result<S::Ok, S::Error> {
    if score.is_finite() {
        s.serialize_f64(*score)
    } else {
        s.serialize_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedEntry {
    /// 1-based position.
    pub rank: usize,
    pub user_id: UserId,
    pub handle: String,
    /// `-inf` for inactive users; serialized as null.
    #[serde(serialize_with = "serialize_score")]
    pub score: f64,
    pub inactive: bool,
    pub terms: ScoreTerms,
    pub labels: BTreeSet<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedList {
    pub function: String,
    /// Hash of the processed context ids the scores were computed from.
    pub fingerprint: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn truncate(mut self, k: usize) -> Self {
        self.entries.truncate(k);
        self
    }

    pub fn user_ids(&self) -> Vec<&UserId> {
        self.entries.iter().map(|e| &e.user_id).collect()
    }

    /// `rank,user_id,handle,score,FR,participations,labels`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "rank",
            "user_id",
            "handle",
            "score",
            "FR",
            "participations",
            "labels",
        ])
        .expect("in-memory write");
        for e in &self.entries {
            let labels: Vec<&str> = e.labels.iter().map(|l| l.as_str()).collect();
            let score = if e.score.is_finite() {
                e.score.to_string()
            } else {
                "-inf".to_string()
            };
            w.write_record([
                e.rank.to_string(),
                e.user_id.to_string(),
                e.handle.clone(),
                score,
                e.terms.fr.to_string(),
                e.terms.participations.to_string(),
                labels.join(";"),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }
}

pub fn context_fingerprint(store: &ProfileStore) -> String {
    let ids: Vec<&str> = store
        .processed_contexts()
        .iter()
        .map(|c| c.context_id.as_str())
        .collect();
    let mut sorted = ids;
    sorted.sort_unstable();
    hex_sha256(sorted.join("\n").as_bytes())[..16].to_string()
}

#[derive(Debug, Clone)]
pub struct RankOptions {
    pub policy: MergePolicy,
    pub inactive_threshold: f64,
    /// Rank only these users; all profiles when `None`.
    pub users: Option<BTreeSet<UserId>>,
    pub exec: Execution,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self {
            policy: MergePolicy::Append,
            inactive_threshold: INACTIVE_THRESHOLD,
            users: None,
            exec: Execution::default(),
        }
    }
}

fn order(entries: &mut [RankedEntry]) {
    entries.sort_by(|a, b| {
        a.inactive
            .cmp(&b.inactive)
            .then(b.score.total_cmp(&a.score))
            .then(a.user_id.cmp(&b.user_id))
    });
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
}

/// Scores every selected user, sorted by score descending, ties by user id.
/// The inactive rule is not applied.
pub fn score_users(
    store: &ProfileStore,
    f: &RankFn,
    opts: &RankOptions,
) -> Result<RankedList, RankError> {
    let entries: Vec<&ProfileEntry> = store
        .profiles()
        .filter(|e| opts.users.as_ref().is_none_or(|u| u.contains(&e.user_id)))
        .collect();
    let scored = opts.exec.map(&entries, |e| {
        let terms = ScoreTerms::of(e, opts.policy);
        f.score(&terms)
            .map(|score| RankedEntry {
                rank: 0,
                user_id: e.user_id.clone(),
                handle: e.handle.clone(),
                score,
                inactive: false,
                terms,
                labels: e.labels.clone(),
            })
            .map_err(|source| RankError::Eval {
                user: e.user_id.clone(),
                source,
            })
    });
    let mut entries = scored.into_iter().collect::<Result<Vec<_>, _>>()?;
    order(&mut entries);
    Ok(RankedList {
        function: f.to_string(),
        fingerprint: context_fingerprint(store),
        entries,
    })
}

/// Min-max normalised post volume of `user` over all profiles; 0 when every
/// profile has the same volume.
pub fn normalized_volume(store: &ProfileStore, posts: u64) -> f64 {
    let (lo, hi) = store
        .profiles()
        .map(ProfileEntry::total_posts)
        .fold((u64::MAX, 0), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if hi <= lo {
        0.0
    } else {
        (posts.saturating_sub(lo)) as f64 / (hi - lo) as f64
    }
}

/// Moves users with FR = 0 and normalised volume below `threshold` to the
/// bottom with score `-inf`.
pub fn apply_inactive_rule(
    mut list: RankedList,
    store: &ProfileStore,
    threshold: f64,
) -> RankedList {
    for e in &mut list.entries {
        if e.terms.fr == 0.0 && normalized_volume(store, e.terms.total_posts) < threshold {
            e.inactive = true;
            e.score = f64::NEG_INFINITY;
        }
    }
    order(&mut list.entries);
    list
}

/// Scores, applies the inactive rule, and keeps the first `top` entries.
pub fn rank(
    store: &ProfileStore,
    f: &RankFn,
    opts: &RankOptions,
    top: Option<usize>,
) -> Result<RankedList, RankError> {
    let list = apply_inactive_rule(score_users(store, f, opts)?, store, opts.inactive_threshold);
    Ok(match top {
        Some(k) => list.truncate(k),
        None => list,
    })
}
