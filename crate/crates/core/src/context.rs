//! Contexts (terms, time window, optional bounding box) and the post sets
//! they select from an archive.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::{timestamp, Archive, Interval, Post};
use crate::ids::ContextId;

/// Default number of posts kept per context, most recent first.
pub const DEFAULT_POST_CAP: usize = 200;

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("context {0} has no terms")]
    NoTerms(ContextId),
    #[error("context {0} has an inverted interval")]
    InvertedInterval(ContextId),
    #[error("context {0} has a bounding box with min > max")]
    BadBoundingBox(ContextId),
    #[error("cannot read context file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("context file {path}, line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl From<[f64; 4]> for BoundingBox {
    fn from([min_lat, min_lon, max_lat, max_lon]: [f64; 4]) -> Self {
        Self {
            min_lat,
            min_lon,
            max_lat,
            max_lon,
        }
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.min_lat, b.min_lon, b.max_lat, b.max_lon]
    }
}

impl BoundingBox {
    pub fn is_well_ordered(&self) -> bool {
        self.min_lat <= self.max_lat && self.min_lon <= self.max_lon
    }

    pub fn contains(&self, [lat, lon]: [f64; 2]) -> bool {
        self.min_lat <= lat && lat <= self.max_lat && self.min_lon <= lon && lon <= self.max_lon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextStatus {
    Candidate,
    Approved,
    Processed,
    Rejected,
}

impl fmt::Display for ContextStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Candidate => "candidate",
            Self::Approved => "approved",
            Self::Processed => "processed",
            Self::Rejected => "rejected",
        };
        f.write_str(s)
    }
}

/// Where a context came from: the initial seed list or discovery from another context.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Origin {
    Seed,
    DiscoveredFrom(ContextId),
}

impl Serialize for Origin {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Origin::Seed => s.serialize_str("seed"),
            Origin::DiscoveredFrom(id) => s.serialize_str(id.as_str()),
        }
    }
}

impl<'de> Deserialize<'de> for Origin {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s == "seed" {
            Origin::Seed
        } else {
            Origin::DiscoveredFrom(ContextId(s))
        })
    }
}

/// A topical query: terms, a closed time window and an optional bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    #[serde(rename = "id")]
    pub context_id: ContextId,
    #[serde(default)]
    pub name: String,
    pub terms: Vec<String>,
    #[serde(rename = "t1", with = "timestamp")]
    pub start: chrono::DateTime<chrono::Utc>,
    #[serde(rename = "t2", with = "timestamp")]
    pub end: chrono::DateTime<chrono::Utc>,
    #[serde(default)]
    pub bbox: Option<BoundingBox>,
    pub status: ContextStatus,
    pub origin: Origin,
}

impl Context {
    pub fn new(
        context_id: impl Into<ContextId>,
        terms: impl IntoIterator<Item = impl Into<String>>,
        interval: Interval,
    ) -> Self {
        let mut ctx = Self {
            context_id: context_id.into(),
            name: String::new(),
            terms: terms.into_iter().map(Into::into).collect(),
            start: interval.start,
            end: interval.end,
            bbox: None,
            status: ContextStatus::Approved,
            origin: Origin::Seed,
        };
        ctx.normalize_terms();
        ctx
    }

    pub fn interval(&self) -> Interval {
        Interval {
            start: self.start,
            end: self.end,
        }
    }

    /// Lowercases terms, strips a leading `#` and drops empties and duplicates.
    pub fn normalize_terms(&mut self) {
        let mut seen = HashSet::new();
        self.terms = self
            .terms
            .iter()
            .map(|t| t.trim().trim_start_matches('#').to_lowercase())
            .filter(|t| !t.is_empty() && seen.insert(t.clone()))
            .collect();
    }

    pub fn validate(&self) -> Result<(), ContextError> {
        if self.terms.is_empty() {
            return Err(ContextError::NoTerms(self.context_id.clone()));
        }
        if self.end < self.start {
            return Err(ContextError::InvertedInterval(self.context_id.clone()));
        }
        if let Some(b) = &self.bbox {
            if !b.is_well_ordered() {
                return Err(ContextError::BadBoundingBox(self.context_id.clone()));
            }
        }
        Ok(())
    }

    /// Does the post fall inside the time window and (when applicable) the box?
    pub fn matches_window(&self, post: &Post, strict_geo: bool) -> bool {
        if post.timestamp < self.start || post.timestamp > self.end {
            return false;
        }
        match (&self.bbox, post.geo) {
            (Some(b), Some(geo)) => b.contains(geo),
            (Some(_), None) => !strict_geo,
            (None, _) => true,
        }
    }

    /// Does any term equal a hashtag or occur as a whole-word token run in the text?
    pub fn matches_terms(&self, post: &Post) -> bool {
        let text_tokens = tokenize(&post.text);
        self.terms.iter().any(|term| {
            post.has_tag(term) || {
                let needle = tokenize(term);
                !needle.is_empty()
                    && text_tokens
                        .windows(needle.len())
                        .any(|w| w == needle.as_slice())
            }
        })
    }

    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("context serialization is infallible")
    }
}

/// Lowercase word tokens; a word is a maximal run of alphanumerics or `_`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PostSetKind {
    OnContext,
    OffContext,
}

/// Posts selected by a context, ascending by (timestamp, post id).
#[derive(Debug, Clone, PartialEq)]
pub struct PostSet<'a> {
    pub context_id: ContextId,
    pub kind: PostSetKind,
    pub posts: Vec<&'a Post>,
}

impl<'a> PostSet<'a> {
    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a Post> + '_ {
        self.posts.iter().copied()
    }
}

/// Knobs for evaluating contexts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOptions {
    /// Keep only the `cap` most recent matches.
    pub cap: Option<usize>,
    /// Exclude posts without coordinates when the context has a bounding box.
    pub strict_geo: bool,
}

impl Default for QueryOptions {
    fn default() -> Self {
        Self {
            cap: Some(DEFAULT_POST_CAP),
            strict_geo: false,
        }
    }
}

impl QueryOptions {
    pub fn uncapped() -> Self {
        Self {
            cap: None,
            strict_geo: false,
        }
    }
}

/// P(C): in-window posts matching at least one term, capped by recency.
pub fn evaluate<'a>(context: &Context, archive: &'a Archive, opts: QueryOptions) -> PostSet<'a> {
    let mut posts: Vec<&Post> = archive
        .posts_in(&context.interval())
        .filter(|p| context.matches_window(p, opts.strict_geo) && context.matches_terms(p))
        .collect();
    if let Some(cap) = opts.cap {
        if posts.len() > cap {
            posts.drain(..posts.len() - cap);
        }
    }
    PostSet {
        context_id: context.context_id.clone(),
        kind: PostSetKind::OnContext,
        posts,
    }
}

/// P~(C): in-window posts matching none of the terms.
pub fn evaluate_complement<'a>(
    context: &Context,
    archive: &'a Archive,
    strict_geo: bool,
) -> PostSet<'a> {
    let posts = archive
        .posts_in(&context.interval())
        .filter(|p| context.matches_window(p, strict_geo) && !context.matches_terms(p))
        .collect();
    PostSet {
        context_id: context.context_id.clone(),
        kind: PostSetKind::OffContext,
        posts,
    }
}

/// Reads one context record per line.
pub fn load_contexts(path: &Path) -> Result<Vec<Context>, ContextError> {
    let text = fs::read_to_string(path).map_err(|source| ContextError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_contexts(&text, &path.display().to_string())
}

pub fn parse_contexts(text: &str, label: &str) -> Result<Vec<Context>, ContextError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut ctx: Context = serde_json::from_str(line).map_err(|e| ContextError::Parse {
            path: label.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        ctx.normalize_terms();
        ctx.validate()?;
        out.push(ctx);
    }
    Ok(out)
}
