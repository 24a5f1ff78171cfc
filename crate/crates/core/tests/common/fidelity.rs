//! Brute-force recount of the fidelity fixture over the raw JSON lines.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ctxmine::community::CommunityAssignment;
use ctxmine::context::{evaluate, evaluate_complement, Context, QueryOptions};
use ctxmine::corpus::{load_archive, timestamp, Interval};
use ctxmine::ids::UserId;
use ctxmine::metrics::{context_rows, CoreFeatures, FeatureCounts, UserRow};
use ctxmine::network::{build, EdgeDirection};
use ctxmine::par::Execution;
use serde_json::Value;

const CORE_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core");

pub const T1: &str = "2018-02-01T00:00:00Z";
pub const T2: &str = "2018-02-28T23:59:59Z";
pub const TERMS: [&[&str]; 2] = [&["cleanair"], &["clean", "air"]];

pub fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(CORE_DIR).join("fixtures").join(name)
}

pub fn raw(name: &str) -> Vec<Value> {
    std::fs::read_to_string(fixture(name))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

pub fn s(v: &Value, k: &str) -> Option<String> {
    v[k].as_str().map(str::to_string)
}

pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '_' {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn on_context(p: &Value) -> bool {
    let tags: Vec<String> = p["hashtags"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t.as_str().unwrap().to_lowercase())
        .collect();
    let w = words(p["text"].as_str().unwrap());
    TERMS.iter().any(|term| {
        (term.len() == 1 && tags.iter().any(|t| t == term[0]))
            || (0..w.len()).any(|i| {
                i + term.len() <= w.len() && term.iter().enumerate().all(|(j, t)| w[i + j] == *t)
            })
    })
}

pub fn in_window(p: &Value) -> bool {
    let ts = p["ts"].as_str().unwrap();
    // Same fixed-width format, so string order is time order.
    (T1..=T2).contains(&ts)
}

pub fn count(posts: &[&Value], user: &str) -> FeatureCounts {
    let mut c = FeatureCounts::default();
    let mut retweeted = BTreeSet::new();
    let mut retweeters = BTreeSet::new();
    for p in posts {
        let author = s(p, "user_id").unwrap();
        let orig = s(p, "orig_user");
        if author == user {
            match &orig {
                None => {
                    c.p1 += 1;
                    c.p2 += p["links"].as_u64().unwrap();
                }
                Some(o) if o != user => {
                    c.r1 += 1;
                    retweeted.insert(o.clone());
                }
                Some(_) => {}
            }
        }
        if orig.as_deref() == Some(user) && author != user {
            c.r3 += 1;
            retweeters.insert(author);
        }
    }
    c.r2 = retweeted.len() as u64;
    c.r4 = retweeters.len() as u64;
    c
}

/// Ordered post pairs, counted one by one.
pub fn oracle_edges(on: &[&Value]) -> (BTreeSet<String>, BTreeMap<(String, String), u64>) {
    let mut nodes: BTreeSet<String> = on.iter().map(|p| s(p, "user_id").unwrap()).collect();
    let mut edges = BTreeMap::new();
    let ids: BTreeSet<String> = on.iter().map(|p| s(p, "id").unwrap()).collect();
    for p1 in on {
        for p2 in on {
            let (u1, u2) = (s(p1, "user_id").unwrap(), s(p2, "user_id").unwrap());
            if u1 == u2 {
                continue;
            }
            let retweets = s(p2, "retweet_of") == s(p1, "id");
            let mentions = p1["mentions"]
                .as_array()
                .unwrap()
                .iter()
                .any(|m| m.as_str() == Some(&u2));
            if retweets || mentions {
                *edges.entry((u1, u2)).or_insert(0) += 1;
            }
        }
    }
    for p in on {
        if let (Some(rt), Some(orig)) = (s(p, "retweet_of"), s(p, "orig_user")) {
            let author = s(p, "user_id").unwrap();
            if !ids.contains(&rt) && orig != author {
                nodes.insert(orig.clone());
                *edges.entry((orig, author)).or_insert(0) += 1;
            }
        }
    }
    (nodes, edges)
}

pub fn close(a: f64, b: f64) -> bool {
    a == b || ((a - b).abs() / a.abs().max(b.abs())) <= 1e-12
}

pub struct Oracle {
    pub on: Vec<Value>,
    pub off: Vec<Value>,
    pub users: BTreeMap<String, (u64, u64)>,
}

impl Oracle {
    pub fn load() -> Self {
        let posts = raw("fidelity.jsonl");
        let (on, off) = posts.into_iter().filter(in_window).partition(on_context);
        let users = raw("fidelity.users.jsonl")
            .iter()
            .map(|u| {
                (
                    s(u, "user_id").unwrap(),
                    (
                        u["followers"].as_u64().unwrap(),
                        u["followees"].as_u64().unwrap(),
                    ),
                )
            })
            .collect();
        Self { on, off, users }
    }

    pub fn features(&self, user: &str) -> CoreFeatures {
        let (f1, f2) = self.users.get(user).copied().unwrap_or((0, 0));
        CoreFeatures {
            on: count(&self.on.iter().collect::<Vec<_>>(), user),
            off: count(&self.off.iter().collect::<Vec<_>>(), user),
            f1,
            f2,
        }
    }

    pub fn metrics(&self, user: &str, communities: &[BTreeSet<String>]) -> [f64; 5] {
        let f = self.features(user);
        let tf = f.on.p1 as f64 / (f.off.p1 as f64 + 1.0);
        let ts = (f.on.p2 as f64 * ((f.on.p2 + f.on.r3 + 1) as f64).ln())
            / (f.off.p2 as f64 * ((f.off.p2 + f.off.r3 + 1) as f64).ln() + 1.0);
        let ta = (f.on.p1 + f.on.p2) as f64 / ((f.off.p1 + f.off.p2) as f64 + 1.0);
        let fr = if f.f1 + f.f2 == 0 {
            0.0
        } else {
            f.f1 as f64 / (f.f1 + f.f2) as f64
        };
        let (nodes, edges) = oracle_edges(&self.on.iter().collect::<Vec<_>>());
        let into: BTreeSet<&String> = edges
            .keys()
            .filter(|(_, b)| b == user)
            .map(|(a, _)| a)
            .collect();
        let mine: Vec<&BTreeSet<String>> =
            communities.iter().filter(|c| c.contains(user)).collect();
        let ic = if mine.is_empty() {
            into.len() as f64 / (nodes.len() - 1) as f64
        } else {
            mine.iter()
                .map(|c| {
                    into.iter().filter(|v| c.contains(**v)).count() as f64 / (c.len() - 1) as f64
                })
                .fold(0.0, f64::max)
        };
        [tf, ts, ta, fr, ic]
    }
}

pub fn context() -> Context {
    Context::new(
        "cleanair",
        ["cleanair", "clean air"],
        Interval::new(timestamp::parse(T1).unwrap(), timestamp::parse(T2).unwrap()).unwrap(),
    )
}

pub fn library_rows(
    assignment: Option<&CommunityAssignment>,
) -> (Vec<UserRow>, ctxmine::network::ContextNetwork) {
    let (archive, report) = load_archive(&fixture("fidelity.jsonl")).unwrap();
    assert_eq!(report.error_count(), 0);
    let ctx = context();
    let on = evaluate(&ctx, &archive, QueryOptions::uncapped());
    let off = evaluate_complement(&ctx, &archive, false);
    let net = build(&on, EdgeDirection::Verbatim);
    let snap = |u: &UserId| {
        archive
            .user(u)
            .cloned()
            .unwrap_or_else(|| ctxmine::corpus::UserSnapshot::placeholder(u))
    };
    let rows = context_rows(&net, assignment, &on, &off, snap, Execution::Sequential);
    (rows, net)
}

pub fn check(
    rows: &[UserRow],
    oracle: &Oracle,
    communities: &[BTreeSet<String>],
) -> Result<(), String> {
    for row in rows {
        let u = row.user_id.as_str();
        let want = oracle.features(u);
        if row.features != want {
            return Err(format!("features of {u}: {:?} vs {want:?}", row.features));
        }
        let m = &row.metrics;
        let got = [m.tf, m.ts, m.ta, m.fr, m.ic];
        let want = oracle.metrics(u, communities);
        for (name, (g, w)) in ["TF", "TS", "TA", "FR", "IC"]
            .iter()
            .zip(got.iter().zip(want))
        {
            if !close(*g, w) {
                return Err(format!("{name} of {u}: {g} vs {w}"));
            }
        }
    }
    Ok(())
}

/// Two hand-picked overlapping communities sharing `a1` and `a8`.
pub fn overlapping_sets() -> Vec<BTreeSet<String>> {
    [
        &["a1", "a2", "a4", "a5", "a8", "a11"][..],
        &["a1", "a3", "a7", "a8", "a9"][..],
    ]
    .iter()
    .map(|c| c.iter().map(|s| s.to_string()).collect())
    .collect()
}

pub fn assignment_of(
    net: &ctxmine::network::ContextNetwork,
    sets: &[BTreeSet<String>],
) -> CommunityAssignment {
    CommunityAssignment::from_candidates(
        "cleanair".into(),
        ctxmine::community::Algorithm::Demon,
        &net.nodes,
        sets.iter()
            .map(|c| c.iter().map(|s| UserId::from(s.as_str())).collect())
            .collect(),
        2,
    )
}
