//! A 30-user store with planted volume extremes and a direct recomputation
//! of the built-in rankings from the generated records.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, TimeZone, Utc};
use ctxmine::context::Context;
use ctxmine::corpus::{Interval, UserSnapshot};
use ctxmine::ids::{ContextId, UserId};
use ctxmine::metrics::{CoreFeatures, IcScope, MetricVector};
use ctxmine::ranking::{rank, RankFn, RankOptions};
use ctxmine::store::{ContextRecord, ProfileStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct User {
    pub id: String,
    pub f1: u64,
    pub f2: u64,
    /// (context index, TF, TS, TA, IC, posts_on, posts_off)
    pub records: Vec<(usize, f64, f64, f64, f64, u64, u64)>,
}

pub const CONTEXTS: usize = 3;

pub fn generate(seed: u64) -> Vec<User> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users: Vec<User> = (0..30)
        .map(|i| {
            let mut records = Vec::new();
            for c in 0..CONTEXTS {
                if rng.random_bool(0.5) || (c == CONTEXTS - 1 && records.is_empty()) {
                    records.push((
                        c,
                        rng.random_range(0.0..4.0),
                        rng.random_range(0.0..3.0),
                        rng.random_range(0.0..5.0),
                        rng.random_range(0.0..1.0),
                        rng.random_range(5..150),
                        rng.random_range(0..150),
                    ));
                }
            }
            User {
                id: format!("u{i:02}"),
                f1: rng.random_range(1..10_000),
                f2: rng.random_range(1..10_000),
                records,
            }
        })
        .collect();
    // Planted volume extremes and zero-follower accounts.
    users[0].records = vec![(0, 1.0, 1.0, 1.0, 0.5, 600, 400)];
    for (i, posts) in [(27, 2), (28, 4), (29, 300)] {
        users[i].f1 = 0;
        users[i].f2 = 0;
        users[i].records = vec![(1, 2.0, 1.0, 2.0, 0.1, posts, 0)];
    }
    users[26].f2 = 0;
    users
}

pub fn context_id(c: usize) -> ContextId {
    format!("c{c}").into()
}

pub fn store_of(users: &[User], scale: u64) -> ProfileStore {
    let mut store = ProfileStore::default();
    let t0 = Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap();
    for c in 0..CONTEXTS {
        let start = t0 + Duration::days(30 * c as i64);
        store
            .add_context(Context::new(
                context_id(c),
                [format!("tag{c}")],
                Interval::new(start, start + Duration::days(7)).unwrap(),
            ))
            .unwrap();
    }
    for u in users {
        let snap = UserSnapshot {
            follower_count: u.f1 * scale,
            followee_count: u.f2 * scale,
            ..UserSnapshot::placeholder(&UserId::from(u.id.as_str()))
        };
        for &(c, tf, ts, ta, ic, on, off) in &u.records {
            let record = ContextRecord {
                features: CoreFeatures::default(),
                metrics: MetricVector {
                    tf,
                    ts,
                    ta,
                    fr: 0.0,
                    ic,
                    ic_scope: IcScope::Network,
                },
                communities: vec![0],
                posts_on: on,
                posts_off: off,
            };
            store.upsert(&snap, &context_id(c), record).unwrap();
        }
    }
    store
}

/// Users in expected order, with the inactive set.
pub fn oracle(users: &[User], which: u8) -> (Vec<String>, BTreeSet<String>) {
    let volume: BTreeMap<&str, u64> = users
        .iter()
        .map(|u| (u.id.as_str(), u.records.iter().map(|r| r.5 + r.6).sum()))
        .collect();
    let lo = *volume.values().min().unwrap() as f64;
    let hi = *volume.values().max().unwrap() as f64;
    let mut rows: Vec<(bool, f64, String)> = users
        .iter()
        .map(|u| {
            let (mut tf, mut ta, mut ic) = (0.0, 0.0, 0.0);
            for r in &u.records {
                tf += r.1;
                ta += r.3;
                ic += r.4;
            }
            let fr = if u.f1 + u.f2 == 0 {
                0.0
            } else {
                u.f1 as f64 / (u.f1 + u.f2) as f64
            };
            let score = match which {
                1 => tf / (ic + 1.0),
                2 => (fr - 1.0).abs() * (ta + ic),
                _ => (fr - 1.0).abs() * (ta + 1.0 / (ic + 1.0)),
            };
            let norm = (volume[u.id.as_str()] as f64 - lo) / (hi - lo);
            let inactive = fr == 0.0 && norm < 0.005;
            (inactive, score, u.id.clone())
        })
        .collect();
    rows.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(b.1.partial_cmp(&a.1).unwrap())
            .then(a.2.cmp(&b.2))
    });
    let inactive = rows.iter().filter(|r| r.0).map(|r| r.2.clone()).collect();
    (rows.into_iter().map(|r| r.2).collect(), inactive)
}

pub fn ranked(store: &ProfileStore, f: &RankFn) -> (Vec<String>, BTreeSet<String>) {
    let list = rank(store, f, &RankOptions::default(), None).unwrap();
    let order = list.entries.iter().map(|e| e.user_id.to_string()).collect();
    let inactive = list
        .entries
        .iter()
        .filter(|e| e.inactive)
        .map(|e| e.user_id.to_string())
        .collect();
    (order, inactive)
}
