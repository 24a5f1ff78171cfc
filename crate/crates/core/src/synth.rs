//! Seeded synthetic archives with known structure.
//!
//! Each topic is a hashtag with its own week-long window and a few dense
//! mention groups. A bridge user sits in the first group of topic `i` and of
//! topic `i + 1`, so processing both topics gives that user two
//! participations, and the tag of topic `i + 1` shows up in the timelines of
//! topic `i` participants. Off-topic posts fall inside the topic windows and
//! carry no hashtags.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::context::Context;
use crate::corpus::{Archive, Interval, Post, UserSnapshot};
use crate::ids::{PostId, UserId};

const TOPIC_TAGS: [&str; 8] = [
    "walkfest",
    "sugarswap",
    "sleepweek",
    "stepsmarch",
    "hydrateday",
    "quitpledge",
    "moodmonth",
    "lungcheck",
];

const WORDS: [&str; 12] = [
    "today",
    "great",
    "join",
    "us",
    "event",
    "local",
    "team",
    "support",
    "health",
    "week",
    "tips",
    "community",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub topics: usize,
    pub groups: usize,
    pub group_size: usize,
    pub posts_per_user: usize,
    pub off_posts_per_user: usize,
    /// Chance that a post mentions a given member of the author's group.
    pub mention_in: f64,
    /// Chance that a post mentions a given member of another group.
    pub mention_out: f64,
    pub retweet: f64,
    pub start: DateTime<Utc>,
    pub spacing_days: i64,
    pub span_days: i64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 42,
            topics: 3,
            groups: 2,
            group_size: 7,
            posts_per_user: 3,
            off_posts_per_user: 2,
            mention_in: 0.35,
            mention_out: 0.01,
            retweet: 0.04,
            start: Utc.with_ymd_and_hms(2018, 3, 1, 0, 0, 0).unwrap(),
            spacing_days: 21,
            span_days: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub posts: Vec<Post>,
    pub users: Vec<UserSnapshot>,
    /// One context per topic, in topic order.
    pub contexts: Vec<Context>,
    /// Users planted in two consecutive topics.
    pub bridges: BTreeSet<UserId>,
}

pub fn topic_tag(i: usize) -> String {
    match TOPIC_TAGS.get(i) {
        Some(t) => t.to_string(),
        None => format!("topic{i}"),
    }
}

pub fn topic_interval(params: &SynthParams, i: usize) -> Interval {
    let start = params.start + Duration::days(params.spacing_days * i as i64);
    Interval::new(
        start,
        start + Duration::days(params.span_days) - Duration::seconds(1),
    )
    .expect("positive span")
}

fn sentence(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

fn at(rng: &mut ChaCha8Rng, window: &Interval) -> DateTime<Utc> {
    let secs = (window.end - window.start).num_seconds();
    window.start + Duration::seconds(rng.random_range(0..=secs))
}

struct Gen {
    rng: ChaCha8Rng,
    posts: Vec<Post>,
    next: usize,
}

impl Gen {
    fn post(
        &mut self,
        author: &UserId,
        ts: DateTime<Utc>,
        text: String,
        tags: Vec<String>,
        mentions: Vec<UserId>,
    ) -> usize {
        self.next += 1;
        let links = crate::corpus::count_links(&text);
        self.posts.push(Post {
            post_id: PostId::from(format!("p{:05}", self.next)),
            author_id: author.clone(),
            author_handle: format!("h_{author}"),
            timestamp: ts,
            text,
            hashtags: tags,
            mentions,
            retweet_of: None,
            original_author: None,
            geo: None,
            link_count: links,
        });
        self.posts.len() - 1
    }
}

pub fn generate(params: &SynthParams) -> Synthetic {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(params.seed),
        posts: Vec::new(),
        next: 0,
    };
    let bridge = |i: usize| UserId::from(format!("bridge{i}"));
    let mut members_of: Vec<Vec<Vec<UserId>>> = Vec::new();
    for t in 0..params.topics {
        let mut groups = Vec::new();
        for k in 0..params.groups {
            let mut m: Vec<UserId> = (0..params.group_size)
                .map(|j| UserId::from(format!("t{t}g{k}u{j:02}")))
                .collect();
            if k == 0 {
                if t + 1 < params.topics {
                    m[0] = bridge(t);
                }
                if t > 0 {
                    m[1] = bridge(t - 1);
                }
            }
            groups.push(m);
        }
        members_of.push(groups);
    }

    let mut all: BTreeSet<UserId> = BTreeSet::new();
    for (t, groups) in members_of.iter().enumerate() {
        let tag = topic_tag(t);
        let window = topic_interval(params, t);
        let topic_start = g.posts.len();
        for (k, group) in groups.iter().enumerate() {
            for author in group {
                all.insert(author.clone());
                for _ in 0..params.posts_per_user {
                    let mut mentions = Vec::new();
                    for (k2, other) in groups.iter().enumerate() {
                        let p = if k2 == k {
                            params.mention_in
                        } else {
                            params.mention_out
                        };
                        for v in other {
                            if v != author && g.rng.random_bool(p) {
                                mentions.push(v.clone());
                            }
                        }
                    }
                    let words = g.rng.random_range(3..8);
                    let mut text = format!("{} #{tag}", sentence(&mut g.rng, words));
                    for m in &mentions {
                        text.push_str(&format!(" @h_{m}"));
                    }
                    if g.rng.random_bool(0.2) {
                        text.push_str(" https://example.org/x");
                    }
                    let ts = at(&mut g.rng, &window);
                    g.post(author, ts, text, vec![tag.clone()], mentions);
                }
            }
        }
        // Untagged chatter inside the window.
        for group in groups {
            for u in group {
                for _ in 0..params.off_posts_per_user {
                    let words = g.rng.random_range(4..10);
                    let text = sentence(&mut g.rng, words);
                    let ts = at(&mut g.rng, &window);
                    g.post(u, ts, text, Vec::new(), Vec::new());
                }
            }
        }
        // Retweets of in-group originals, after the original.
        let originals: Vec<usize> = (topic_start..g.posts.len())
            .filter(|&i| !g.posts[i].hashtags.is_empty())
            .collect();
        for group in groups {
            let members: BTreeSet<&UserId> = group.iter().collect();
            for &o in &originals {
                let orig = g.posts[o].clone();
                if !members.contains(&orig.author_id) {
                    continue;
                }
                for u in group {
                    if *u == orig.author_id || !g.rng.random_bool(params.retweet) {
                        continue;
                    }
                    let mut ts = orig.timestamp + Duration::minutes(g.rng.random_range(1..600));
                    if ts > window.end {
                        ts = window.end;
                    }
                    let text = format!("RT @h_{}: {}", orig.author_id, orig.text);
                    let i = g.post(u, ts, text, orig.hashtags.clone(), orig.mentions.clone());
                    g.posts[i].retweet_of = Some(orig.post_id.clone());
                    g.posts[i].original_author = Some(orig.author_id.clone());
                }
            }
        }
    }

    let users = all
        .iter()
        .map(|u| {
            let is_bridge = u.as_str().starts_with("bridge");
            let (followers, followees) = if is_bridge {
                (5, 500)
            } else {
                (g.rng.random_range(20..5000), g.rng.random_range(20..2000))
            };
            UserSnapshot {
                user_id: u.clone(),
                handle: format!("h_{u}"),
                follower_count: followers,
                followee_count: followees,
                display_name: format!("User {u}"),
                bio: String::new(),
                total_statuses: g.rng.random_range(10..20_000),
            }
        })
        .collect();

    let contexts = (0..params.topics)
        .map(|t| {
            let mut c = Context::new(topic_tag(t), [topic_tag(t)], topic_interval(params, t));
            c.name = format!("Synthetic topic {t}");
            c
        })
        .collect();
    Synthetic {
        posts: g.posts,
        users,
        contexts,
        bridges: (0..params.topics.saturating_sub(1)).map(bridge).collect(),
    }
}

impl Synthetic {
    pub fn archive(&self) -> Archive {
        Archive::from_records("synthetic", self.posts.clone(), self.users.clone()).0
    }

    /// Writes `posts.jsonl`, `users.jsonl` and `contexts.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let lines = |it: &mut dyn Iterator<Item = String>| it.map(|l| l + "\n").collect::<String>();
        fs::write(
            dir.join("posts.jsonl"),
            lines(&mut self.posts.iter().map(Post::to_record)),
        )?;
        fs::write(
            dir.join("users.jsonl"),
            lines(&mut self.users.iter().map(UserSnapshot::to_record)),
        )?;
        fs::write(
            dir.join("contexts.jsonl"),
            lines(&mut self.contexts.iter().map(Context::to_record)),
        )
    }
}
