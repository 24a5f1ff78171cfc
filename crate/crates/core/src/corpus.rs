//! Archived posts and user snapshots, indexed for offline context queries.
//!
//! Archives are loaded from line-delimited JSON files (one record per line)
//! and are immutable afterwards. Malformed lines are skipped and reported
//! with their line number; a duplicate post id keeps the first record.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{PostId, UserId};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read archive file {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid interval: end {end} precedes start {start}")]
    InvalidInterval { start: String, end: String },
}

/// UTC timestamps in the archive format: RFC 3339, second precision, `Z` suffix.
pub mod timestamp {
    use chrono::{DateTime, SecondsFormat, Timelike, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn format(ts: &DateTime<Utc>) -> String {
        ts.to_rfc3339_opts(SecondsFormat::Secs, true)
    }

    pub fn parse(s: &str) -> Result<DateTime<Utc>, chrono::ParseError> {
        let ts = DateTime::parse_from_rfc3339(s)?.with_timezone(&Utc);
        Ok(ts.with_nanosecond(0).unwrap_or(ts))
    }

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// Closed time range `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(with = "timestamp")]
    pub start: DateTime<Utc>,
    #[serde(with = "timestamp")]
    pub end: DateTime<Utc>,
}

impl Interval {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self, CorpusError> {
        if end < start {
            return Err(CorpusError::InvalidInterval {
                start: timestamp::format(&start),
                end: timestamp::format(&end),
            });
        }
        Ok(Self { start, end })
    }

    /// The whole representable range.
    pub fn unbounded() -> Self {
        Self {
            start: DateTime::<Utc>::MIN_UTC,
            end: DateTime::<Utc>::MAX_UTC,
        }
    }

    pub fn contains(&self, ts: &DateTime<Utc>) -> bool {
        self.start <= *ts && *ts <= self.end
    }
}

/// One authored tweet or retweet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    #[serde(rename = "id")]
    pub post_id: PostId,
    #[serde(rename = "user_id")]
    pub author_id: UserId,
    #[serde(rename = "handle")]
    pub author_handle: String,
    #[serde(rename = "ts", with = "timestamp")]
    pub timestamp: DateTime<Utc>,
    pub text: String,
    pub hashtags: Vec<String>,
    pub mentions: Vec<UserId>,
    pub retweet_of: Option<PostId>,
    #[serde(rename = "orig_user")]
    pub original_author: Option<UserId>,
    pub geo: Option<[f64; 2]>,
    #[serde(rename = "links")]
    pub link_count: u32,
}

impl Post {
    pub fn is_retweet(&self) -> bool {
        self.retweet_of.is_some()
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.hashtags.iter().any(|t| t == tag)
    }

    /// Canonical single-line record.
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("post serialization is infallible")
    }

    /// Lowercases, strips a leading `#` and deduplicates hashtags and mentions,
    /// then checks the record invariants.
    fn normalize(mut self) -> Result<Self, String> {
        if self.post_id.as_str().is_empty() {
            return Err("empty post id".into());
        }
        if self.author_id.as_str().is_empty() {
            return Err("empty user id".into());
        }
        if self.retweet_of.is_some() != self.original_author.is_some() {
            return Err("retweet_of and orig_user must be both present or both null".into());
        }
        let mut seen = HashSet::new();
        let mut tags = Vec::with_capacity(self.hashtags.len());
        for raw in &self.hashtags {
            let tag = raw.trim_start_matches('#').to_lowercase();
            if tag.is_empty() {
                return Err("empty hashtag".into());
            }
            if seen.insert(tag.clone()) {
                tags.push(tag);
            }
        }
        self.hashtags = tags;
        let mut seen = HashSet::new();
        self.mentions.retain(|m| seen.insert(m.clone()));
        if let Some([lat, lon]) = self.geo {
            if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
                return Err(format!("geo out of range: [{lat}, {lon}]"));
            }
        }
        Ok(self)
    }
}

/// Number of web-link tokens embedded in a post text.
pub fn count_links(text: &str) -> u32 {
    text.split_whitespace()
        .filter(|tok| tok.starts_with("http://") || tok.starts_with("https://"))
        .count() as u32
}

/// Bulk profile information for one user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSnapshot {
    pub user_id: UserId,
    pub handle: String,
    /// F1
    #[serde(rename = "followers")]
    pub follower_count: u64,
    /// F2
    #[serde(rename = "followees")]
    pub followee_count: u64,
    #[serde(rename = "name")]
    pub display_name: String,
    pub bio: String,
    #[serde(rename = "statuses")]
    pub total_statuses: u64,
}

impl UserSnapshot {
    /// Stand-in for a user referenced by a post but missing from the user file.
    pub fn placeholder(user_id: &UserId) -> Self {
        Self {
            user_id: user_id.clone(),
            handle: user_id.as_str().to_string(),
            follower_count: 0,
            followee_count: 0,
            display_name: String::new(),
            bio: String::new(),
            total_statuses: 0,
        }
    }

    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("user serialization is infallible")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineDiagnostic {
    pub file: String,
    pub line: usize,
    pub message: String,
}

/// What happened while loading an archive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub posts_loaded: usize,
    pub users_loaded: usize,
    /// Lines skipped because they did not parse or broke a record invariant.
    pub malformed: Vec<LineDiagnostic>,
    /// Later records whose id was already taken.
    pub duplicates: Vec<LineDiagnostic>,
    /// Accepted records with something worth flagging.
    pub warnings: Vec<LineDiagnostic>,
}

impl LoadReport {
    pub fn error_count(&self) -> usize {
        self.malformed.len() + self.duplicates.len()
    }
}

/// Immutable, indexed collection of posts and user snapshots.
#[derive(Debug, Clone, Default)]
pub struct Archive {
    source_label: String,
    posts: Vec<Post>,
    by_id: HashMap<PostId, usize>,
    by_author: HashMap<UserId, Vec<usize>>,
    by_tag: HashMap<String, Vec<usize>>,
    /// Post indices ascending by (timestamp, post id).
    time_order: Vec<usize>,
    users: BTreeMap<UserId, UserSnapshot>,
    unresolved: BTreeSet<UserId>,
}

impl PartialEq for Archive {
    fn eq(&self, other: &Self) -> bool {
        self.source_label == other.source_label
            && self.posts == other.posts
            && self.users == other.users
            && self.unresolved == other.unresolved
    }
}

impl Archive {
    /// Builds an archive from already-parsed records. Duplicate post ids and
    /// invalid records are dropped and reported.
    pub fn from_records(
        source_label: impl Into<String>,
        posts: impl IntoIterator<Item = Post>,
        users: impl IntoIterator<Item = UserSnapshot>,
    ) -> (Self, LoadReport) {
        let mut report = LoadReport::default();
        let mut builder = ArchiveBuilder::new(source_label.into());
        for (i, user) in users.into_iter().enumerate() {
            builder.add_user(user, "<memory>", i + 1, &mut report);
        }
        for (i, post) in posts.into_iter().enumerate() {
            builder.add_post(post, "<memory>", i + 1, &mut report);
        }
        let archive = builder.finish(&mut report);
        (archive, report)
    }

    /// Loads posts from `posts_path` and, when given, user snapshots from `users_path`.
    pub fn load_files(
        posts_path: &Path,
        users_path: Option<&Path>,
    ) -> Result<(Self, LoadReport), CorpusError> {
        let mut report = LoadReport::default();
        let mut builder = ArchiveBuilder::new(posts_path.display().to_string());
        if let Some(users_path) = users_path {
            let file = users_path.display().to_string();
            for (lineno, line) in read_lines(users_path)? {
                match serde_json::from_str::<UserSnapshot>(&line) {
                    Ok(user) => builder.add_user(user, &file, lineno, &mut report),
                    Err(e) => report.malformed.push(LineDiagnostic {
                        file: file.clone(),
                        line: lineno,
                        message: e.to_string(),
                    }),
                }
            }
        }
        let file = posts_path.display().to_string();
        for (lineno, line) in read_lines(posts_path)? {
            match serde_json::from_str::<Post>(&line) {
                Ok(post) => builder.add_post(post, &file, lineno, &mut report),
                Err(e) => report.malformed.push(LineDiagnostic {
                    file: file.clone(),
                    line: lineno,
                    message: e.to_string(),
                }),
            }
        }
        let archive = builder.finish(&mut report);
        Ok((archive, report))
    }

    pub fn source_label(&self) -> &str {
        &self.source_label
    }

    /// Posts in load order.
    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn post_count(&self) -> usize {
        self.posts.len()
    }

    pub fn post(&self, id: &PostId) -> Option<&Post> {
        self.by_id.get(id).map(|&i| &self.posts[i])
    }

    /// Posts ascending by (timestamp, post id).
    pub fn posts_by_time(&self) -> impl Iterator<Item = &Post> + '_ {
        self.time_order.iter().map(move |&i| &self.posts[i])
    }

    /// Posts whose timestamp falls in `interval`, ascending by time.
    pub fn posts_in(&self, interval: &Interval) -> impl Iterator<Item = &Post> + '_ {
        let lo = self
            .time_order
            .partition_point(|&i| self.posts[i].timestamp < interval.start);
        let hi = self
            .time_order
            .partition_point(|&i| self.posts[i].timestamp <= interval.end);
        self.time_order[lo..hi.max(lo)]
            .iter()
            .map(move |&i| &self.posts[i])
    }

    pub fn posts_tagged<'a>(&'a self, tag: &str) -> impl Iterator<Item = &'a Post> + 'a {
        self.by_tag
            .get(tag)
            .into_iter()
            .flatten()
            .map(move |&i| &self.posts[i])
    }

    /// Every distinct hashtag in the archive.
    pub fn hashtags(&self) -> BTreeSet<&str> {
        self.by_tag.keys().map(String::as_str).collect()
    }

    pub fn users(&self) -> &BTreeMap<UserId, UserSnapshot> {
        &self.users
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn user(&self, id: &UserId) -> Option<&UserSnapshot> {
        self.users.get(id)
    }

    /// Users referenced by posts but absent from the user file; they carry
    /// placeholder snapshots.
    pub fn unresolved_users(&self) -> &BTreeSet<UserId> {
        &self.unresolved
    }

    /// Number of posts authored by `user` across the whole archive.
    pub fn authored_count(&self, user: &UserId) -> usize {
        self.by_author.get(user).map_or(0, Vec::len)
    }

    /// All posts authored by `user` inside `interval`, ascending by timestamp.
    pub fn fetch_timeline(
        &self,
        user: &UserId,
        interval: &Interval,
    ) -> Result<Timeline<'_>, CorpusError> {
        if interval.end < interval.start {
            return Err(CorpusError::InvalidInterval {
                start: timestamp::format(&interval.start),
                end: timestamp::format(&interval.end),
            });
        }
        if !self.users.contains_key(user) {
            return Ok(Timeline {
                posts: Vec::new(),
                unknown_user: true,
            });
        }
        let posts = self
            .by_author
            .get(user)
            .into_iter()
            .flatten()
            .map(|&i| &self.posts[i])
            .filter(|p| interval.contains(&p.timestamp))
            .collect();
        Ok(Timeline {
            posts,
            unknown_user: false,
        })
    }

    pub fn posts_record_lines(&self) -> impl Iterator<Item = String> + '_ {
        self.posts.iter().map(Post::to_record)
    }

    /// User records for non-placeholder users, ordered by user id.
    pub fn user_record_lines(&self) -> impl Iterator<Item = String> + '_ {
        self.users
            .values()
            .filter(|u| !self.unresolved.contains(&u.user_id))
            .map(UserSnapshot::to_record)
    }
}

/// Posts fetched for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline<'a> {
    pub posts: Vec<&'a Post>,
    /// The user is not known to the archive; `posts` is empty.
    pub unknown_user: bool,
}

/// Access to user timelines and profiles. [`Archive`] is the offline
/// implementation; a live client would implement the same boundary.
pub trait TimelineSource {
    fn timeline(&self, user: &UserId, interval: &Interval) -> Result<Timeline<'_>, CorpusError>;
    fn profile(&self, user: &UserId) -> Option<&UserSnapshot>;
}

impl TimelineSource for Archive {
    fn timeline(&self, user: &UserId, interval: &Interval) -> Result<Timeline<'_>, CorpusError> {
        self.fetch_timeline(user, interval)
    }

    fn profile(&self, user: &UserId) -> Option<&UserSnapshot> {
        self.user(user)
    }
}

/// Loads `path` as a post file. User snapshots are read from the sibling
/// `<stem>.users.jsonl` when it exists.
pub fn load_archive(path: &Path) -> Result<(Archive, LoadReport), CorpusError> {
    let users = companion_users_path(path);
    Archive::load_files(path, users.as_deref().filter(|p| p.exists()))
}

pub fn companion_users_path(posts_path: &Path) -> Option<PathBuf> {
    let stem = posts_path.file_stem()?.to_str()?;
    Some(posts_path.with_file_name(format!("{stem}.users.jsonl")))
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, CorpusError> {
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

struct ArchiveBuilder {
    archive: Archive,
}

impl ArchiveBuilder {
    fn new(source_label: String) -> Self {
        Self {
            archive: Archive {
                source_label,
                ..Archive::default()
            },
        }
    }

    fn add_user(&mut self, user: UserSnapshot, file: &str, line: usize, report: &mut LoadReport) {
        if user.user_id.as_str().is_empty() {
            report.malformed.push(LineDiagnostic {
                file: file.to_string(),
                line,
                message: "empty user id".into(),
            });
            return;
        }
        if self.archive.users.contains_key(&user.user_id) {
            report.duplicates.push(LineDiagnostic {
                file: file.to_string(),
                line,
                message: format!("duplicate user id {}", user.user_id),
            });
            return;
        }
        report.users_loaded += 1;
        self.archive.users.insert(user.user_id.clone(), user);
    }

    fn add_post(&mut self, post: Post, file: &str, line: usize, report: &mut LoadReport) {
        let post = match post.normalize() {
            Ok(p) => p,
            Err(message) => {
                report.malformed.push(LineDiagnostic {
                    file: file.to_string(),
                    line,
                    message,
                });
                return;
            }
        };
        if self.archive.by_id.contains_key(&post.post_id) {
            report.duplicates.push(LineDiagnostic {
                file: file.to_string(),
                line,
                message: format!("duplicate post id {}", post.post_id),
            });
            return;
        }
        let embedded = count_links(&post.text);
        if embedded > 0 && embedded != post.link_count {
            report.warnings.push(LineDiagnostic {
                file: file.to_string(),
                line,
                message: format!(
                    "links field {} disagrees with {} link tokens in text",
                    post.link_count, embedded
                ),
            });
        }
        let idx = self.archive.posts.len();
        self.archive.by_id.insert(post.post_id.clone(), idx);
        self.archive
            .by_author
            .entry(post.author_id.clone())
            .or_default()
            .push(idx);
        for tag in &post.hashtags {
            self.archive
                .by_tag
                .entry(tag.clone())
                .or_default()
                .push(idx);
        }
        report.posts_loaded += 1;
        self.archive.posts.push(post);
    }

    fn finish(mut self, report: &mut LoadReport) -> Archive {
        let a = &mut self.archive;
        let mut order: Vec<usize> = (0..a.posts.len()).collect();
        order.sort_by(|&x, &y| {
            (a.posts[x].timestamp, &a.posts[x].post_id)
                .cmp(&(a.posts[y].timestamp, &a.posts[y].post_id))
        });
        a.time_order = order;
        let key = |i: &usize| (a.posts[*i].timestamp, a.posts[*i].post_id.clone());
        for list in a.by_author.values_mut().chain(a.by_tag.values_mut()) {
            list.sort_by_key(key);
        }

        let mut referenced: BTreeSet<UserId> = BTreeSet::new();
        for p in &a.posts {
            referenced.insert(p.author_id.clone());
            referenced.extend(p.mentions.iter().cloned());
            referenced.extend(p.original_author.iter().cloned());
        }
        for user in referenced {
            if !a.users.contains_key(&user) {
                report.warnings.push(LineDiagnostic {
                    file: a.source_label.clone(),
                    line: 0,
                    message: format!("unresolved user {user}; using placeholder"),
                });
                a.users
                    .insert(user.clone(), UserSnapshot::placeholder(&user));
                a.unresolved.insert(user);
            }
        }
        self.archive
    }
}
