//! Per-user core features and the five user metrics of a context.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::community::CommunityAssignment;
use crate::context::PostSet;
use crate::corpus::{Post, UserSnapshot};
use crate::ids::{ContextId, UserId};
use crate::network::ContextNetwork;
use crate::par::Execution;

/// The six post-derived counts, evaluated on one post set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCounts {
    /// Retweets by the user of other users' posts.
    pub r1: u64,
    /// Distinct users retweeted by the user.
    pub r2: u64,
    /// Retweets of the user's posts by other users.
    pub r3: u64,
    /// Distinct users who retweeted the user.
    pub r4: u64,
    /// Original (non-retweet) posts.
    pub p1: u64,
    /// Links in original posts.
    pub p2: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreFeatures {
    pub on: FeatureCounts,
    pub off: FeatureCounts,
    /// Followers.
    pub f1: u64,
    /// Followees.
    pub f2: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IcScope {
    Community,
    Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    #[serde(rename = "TF")]
    pub tf: f64,
    #[serde(rename = "TS")]
    pub ts: f64,
    #[serde(rename = "TA")]
    pub ta: f64,
    #[serde(rename = "FR")]
    pub fr: f64,
    #[serde(rename = "IC")]
    pub ic: f64,
    pub ic_scope: IcScope,
}

/// Posts of one set grouped by author and by retweeted author.
struct SetIndex<'a> {
    authored: BTreeMap<&'a UserId, Vec<&'a Post>>,
    retweeted: BTreeMap<&'a UserId, Vec<&'a Post>>,
}

impl<'a> SetIndex<'a> {
    fn new(set: &PostSet<'a>) -> Self {
        let mut authored: BTreeMap<&UserId, Vec<&Post>> = BTreeMap::new();
        let mut retweeted: BTreeMap<&UserId, Vec<&Post>> = BTreeMap::new();
        for p in set.iter() {
            authored.entry(&p.author_id).or_default().push(p);
            if let Some(orig) = &p.original_author {
                retweeted.entry(orig).or_default().push(p);
            }
        }
        Self {
            authored,
            retweeted,
        }
    }

    fn counts(&self, user: &UserId) -> FeatureCounts {
        let own = self.authored.get(user).map_or(&[][..], Vec::as_slice);
        let mut c = FeatureCounts::default();
        let mut retweeted_users = BTreeSet::new();
        for p in own {
            match &p.original_author {
                Some(orig) if orig != user => {
                    c.r1 += 1;
                    retweeted_users.insert(orig);
                }
                Some(_) => {}
                None => {
                    c.p1 += 1;
                    c.p2 += u64::from(p.link_count);
                }
            }
        }
        c.r2 = retweeted_users.len() as u64;
        let mut retweeters = BTreeSet::new();
        for p in self.retweeted.get(user).into_iter().flatten() {
            if &p.author_id != user {
                c.r3 += 1;
                retweeters.insert(&p.author_id);
            }
        }
        c.r4 = retweeters.len() as u64;
        c
    }

    fn authored_count(&self, user: &UserId) -> usize {
        self.authored.get(user).map_or(0, Vec::len)
    }
}

/// Counts for `user` on the on-context and off-context sets; followers and
/// followees come from `snapshot`.
pub fn core_features(
    user: &UserId,
    on: &PostSet,
    off: &PostSet,
    snapshot: &UserSnapshot,
) -> CoreFeatures {
    CoreFeatures {
        on: SetIndex::new(on).counts(user),
        off: SetIndex::new(off).counts(user),
        f1: snapshot.follower_count,
        f2: snapshot.followee_count,
    }
}

pub fn topical_focus(f: &CoreFeatures) -> f64 {
    f.on.p1 as f64 / (f.off.p1 as f64 + 1.0)
}

/// Natural logarithm.
pub fn topical_strength(f: &CoreFeatures) -> f64 {
    let side = |c: &FeatureCounts| c.p2 as f64 * ((c.p2 + c.r3) as f64 + 1.0).ln();
    side(&f.on) / (side(&f.off) + 1.0)
}

pub fn topical_attachment(f: &CoreFeatures) -> f64 {
    (f.on.p1 + f.on.p2) as f64 / ((f.off.p1 + f.off.p2) as f64 + 1.0)
}

/// F1 / (F1 + F2), or 0 for an account with neither.
pub fn follower_rank(f: &CoreFeatures) -> f64 {
    if f.f1 + f.f2 == 0 {
        0.0
    } else {
        f.f1 as f64 / (f.f1 + f.f2) as f64
    }
}

/// In-neighbour sets of every node, self-loops excluded.
fn in_neighbours(net: &ContextNetwork) -> BTreeMap<&UserId, BTreeSet<&UserId>> {
    let mut inn: BTreeMap<&UserId, BTreeSet<&UserId>> = BTreeMap::new();
    for (a, b) in net.edges.keys() {
        if a != b {
            inn.entry(b).or_default().insert(a);
        }
    }
    inn
}

fn scoped_ic(inn: Option<&BTreeSet<&UserId>>, scope: Option<&BTreeSet<UserId>>, n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let d = match (inn, scope) {
        (None, _) => 0,
        (Some(s), None) => s.len(),
        (Some(s), Some(c)) => s.iter().filter(|v| c.contains(**v)).count(),
    };
    d as f64 / (n - 1) as f64
}

/// Distinct in-neighbours over N - 1, inside the user's community when it
/// has one (the largest value over several), else over the whole network.
pub fn in_degree_centrality(
    net: &ContextNetwork,
    assignment: Option<&CommunityAssignment>,
    user: &UserId,
) -> (f64, IcScope) {
    let inn = in_neighbours(net);
    ic_from_index(net, &inn, assignment, user)
}

fn ic_from_index(
    net: &ContextNetwork,
    inn: &BTreeMap<&UserId, BTreeSet<&UserId>>,
    assignment: Option<&CommunityAssignment>,
    user: &UserId,
) -> (f64, IcScope) {
    let mine = inn.get(user);
    let communities: Vec<&BTreeSet<UserId>> = assignment
        .map(|a| a.communities_of(user).collect())
        .unwrap_or_default();
    if communities.is_empty() {
        (scoped_ic(mine, None, net.node_count()), IcScope::Network)
    } else {
        let best = communities
            .iter()
            .map(|c| scoped_ic(mine, Some(c), c.len()))
            .fold(0.0, f64::max);
        (best, IcScope::Community)
    }
}

pub fn metric_vector(f: &CoreFeatures, ic: (f64, IcScope)) -> MetricVector {
    MetricVector {
        tf: topical_focus(f),
        ts: topical_strength(f),
        ta: topical_attachment(f),
        fr: follower_rank(f),
        ic: ic.0,
        ic_scope: ic.1,
    }
}

/// Features and metrics of one user in one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRow {
    pub user_id: UserId,
    pub context_id: ContextId,
    pub features: CoreFeatures,
    pub metrics: MetricVector,
    /// Posts authored in the on-context and off-context sets.
    pub posts_on: u64,
    pub posts_off: u64,
}

impl UserRow {
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("row serialization is infallible")
    }
}

/// Rows for every node of `net`, in ascending user order.
pub fn context_rows(
    net: &ContextNetwork,
    assignment: Option<&CommunityAssignment>,
    on: &PostSet,
    off: &PostSet,
    snapshot: impl Fn(&UserId) -> UserSnapshot + Sync,
    exec: Execution,
) -> Vec<UserRow> {
    let on_idx = SetIndex::new(on);
    let off_idx = SetIndex::new(off);
    let inn = in_neighbours(net);
    let users: Vec<&UserId> = net.nodes.iter().collect();
    exec.map(&users, |&u| {
        let snap = snapshot(u);
        let features = CoreFeatures {
            on: on_idx.counts(u),
            off: off_idx.counts(u),
            f1: snap.follower_count,
            f2: snap.followee_count,
        };
        UserRow {
            user_id: u.clone(),
            context_id: net.context_id.clone(),
            features,
            metrics: metric_vector(&features, ic_from_index(net, &inn, assignment, u)),
            posts_on: on_idx.authored_count(u) as u64,
            posts_off: off_idx.authored_count(u) as u64,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::community::{Algorithm, CommunityAssignment};
    use crate::context::{evaluate, evaluate_complement, Context, QueryOptions};
    use crate::corpus::{load_archive, Interval};
    use crate::network::{build, EdgeDirection};
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;
    use std::path::Path;

    fn counts(on: FeatureCounts, off: FeatureCounts, f1: u64, f2: u64) -> CoreFeatures {
        CoreFeatures { on, off, f1, f2 }
    }

    fn c(p1: u64, p2: u64, r3: u64) -> FeatureCounts {
        FeatureCounts {
            p1,
            p2,
            r3,
            ..Default::default()
        }
    }

    fn rel(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1e-300)
    }

    #[test]
    fn smoke_fixture_u1() {
        let (archive, _) =
            load_archive(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/smoke.jsonl"))
                .unwrap();
        let interval = Interval::new(
            Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap(),
            Utc.with_ymd_and_hms(2018, 1, 31, 23, 59, 59).unwrap(),
        )
        .unwrap();
        let ctx = Context::new("dryjan", ["dryjan"], interval);
        let on = evaluate(&ctx, &archive, QueryOptions::uncapped());
        let off = evaluate_complement(&ctx, &archive, false);
        let u1 = UserId::from("u1");
        let f = core_features(&u1, &on, &off, archive.user(&u1).unwrap());
        assert_eq!(
            f,
            CoreFeatures {
                on: FeatureCounts {
                    r1: 0,
                    r2: 0,
                    r3: 1,
                    r4: 1,
                    p1: 2,
                    p2: 1
                },
                off: FeatureCounts {
                    p1: 1,
                    ..Default::default()
                },
                f1: 120,
                f2: 80,
            }
        );
        let u2 = UserId::from("u2");
        let f2 = core_features(&u2, &on, &off, archive.user(&u2).unwrap());
        assert_eq!((f2.on.r1, f2.on.r2, f2.on.p1), (1, 1, 0));

        let net = build(&on, EdgeDirection::Verbatim);
        let rows = context_rows(
            &net,
            None,
            &on,
            &off,
            |u| archive.user(u).cloned().unwrap(),
            Execution::Sequential,
        );
        let row = rows.iter().find(|r| r.user_id == u1).unwrap();
        // u3 -> u1 is u1's only in-edge; N = 3.
        assert_eq!(row.metrics.ic, 0.5);
        assert_eq!(row.metrics.ic_scope, IcScope::Network);
        assert_eq!((row.posts_on, row.posts_off), (2, 1));
        assert!(rel(row.metrics.fr, 0.6));
        assert!(rel(row.metrics.tf, 1.0));
    }

    #[test]
    fn repeated_retweets_count_once_per_user() {
        use crate::corpus::Archive;
        let mk = |id: &str, author: &str, orig: Option<(&str, &str)>| {
            format!(
                r#"{{"id":"{id}","user_id":"{author}","handle":"{author}","ts":"2018-01-0{}T00:00:00Z","text":"x","hashtags":[],"mentions":[],"retweet_of":{},"orig_user":{},"geo":null,"links":0}}"#,
                &id[1..],
                orig.map_or("null".into(), |o| format!("\"{}\"", o.0)),
                orig.map_or("null".into(), |o| format!("\"{}\"", o.1)),
            )
        };
        let lines = [
            mk("p1", "b", None),
            mk("p2", "a", Some(("p1", "b"))),
            mk("p3", "a", Some(("p1", "b"))),
            mk("p4", "a", Some(("p1", "b"))),
        ];
        let posts: Vec<_> = lines
            .iter()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        let (archive, _) = Archive::from_records("t", posts, vec![]);
        let set = PostSet {
            context_id: "c".into(),
            kind: crate::context::PostSetKind::OnContext,
            posts: archive.posts().iter().collect(),
        };
        let empty = PostSet {
            posts: vec![],
            kind: crate::context::PostSetKind::OffContext,
            ..set.clone()
        };
        let a = core_features(
            &"a".into(),
            &set,
            &empty,
            &UserSnapshot::placeholder(&"a".into()),
        );
        assert_eq!((a.on.r1, a.on.r2), (3, 1));
        let b = core_features(
            &"b".into(),
            &set,
            &empty,
            &UserSnapshot::placeholder(&"b".into()),
        );
        assert_eq!((b.on.r3, b.on.r4, b.on.p1), (3, 1, 1));
        let stranger = core_features(
            &"z".into(),
            &set,
            &empty,
            &UserSnapshot::placeholder(&"z".into()),
        );
        assert_eq!(stranger, CoreFeatures::default());
    }

    #[test]
    fn formula_examples() {
        let z = FeatureCounts::default();
        assert_eq!(topical_focus(&counts(c(0, 0, 0), z, 0, 0)), 0.0);
        assert_eq!(topical_focus(&counts(c(5, 0, 0), c(4, 0, 0), 0, 0)), 1.0);
        assert_eq!(topical_focus(&counts(c(7, 0, 0), z, 0, 0)), 7.0);

        assert_eq!(topical_strength(&counts(c(0, 0, 9), c(3, 3, 3), 0, 0)), 0.0);
        assert!(rel(
            topical_strength(&counts(c(0, 1, 0), z, 0, 0)),
            2f64.ln()
        ));
        let same = counts(c(0, 2, 3), c(0, 2, 3), 0, 0);
        assert!(rel(
            topical_strength(&same),
            3.583_518_938_456_11 / 4.583_518_938_456_11
        ));

        assert_eq!(topical_attachment(&CoreFeatures::default()), 0.0);
        assert_eq!(topical_attachment(&counts(c(3, 1, 0), z, 0, 0)), 4.0);
        assert_eq!(
            topical_attachment(&counts(c(2, 2, 0), c(1, 2, 0), 0, 0)),
            1.0
        );
        assert_eq!(topical_attachment(&counts(c(1, 2, 0), z, 0, 0)), 3.0);
    }

    #[test]
    fn follower_rank_extremes() {
        let z = FeatureCounts::default();
        assert_eq!(follower_rank(&counts(z, z, 0, 0)), 0.0);
        assert_eq!(follower_rank(&counts(z, z, 5_000, 0)), 1.0);
        assert_eq!(follower_rank(&counts(z, z, 99, 1)), 0.99);
    }

    fn edges(list: &[(&str, &str)]) -> ContextNetwork {
        let text: String = list.iter().map(|(a, b)| format!("{a}\t{b}\t1\n")).collect();
        ContextNetwork::from_edge_list("c".into(), &text).unwrap()
    }

    #[test]
    fn ic_scopes() {
        let star = edges(&[("l1", "c"), ("l2", "c"), ("l3", "c"), ("l4", "c")]);
        assert_eq!(
            in_degree_centrality(&star, None, &"c".into()),
            (1.0, IcScope::Network)
        );
        assert_eq!(in_degree_centrality(&star, None, &"l1".into()).0, 0.0);

        let mut single = ContextNetwork::empty("s".into());
        single.nodes.insert("x".into());
        assert_eq!(in_degree_centrality(&single, None, &"x".into()).0, 0.0);

        // Six nodes, community {a,b,c,d}; e and f are residual.
        let net = edges(&[
            ("b", "a"),
            ("c", "a"),
            ("e", "a"),
            ("f", "e"),
            ("a", "e"),
            ("d", "c"),
        ]);
        let comm = CommunityAssignment::from_candidates(
            "c".into(),
            Algorithm::Infomap,
            &net.nodes,
            vec![["a", "b", "c", "d"]
                .iter()
                .map(|&s| UserId::from(s))
                .collect()],
            4,
        );
        // a: in-neighbours b, c, e; only b and c inside -> 2/3.
        assert_eq!(
            in_degree_centrality(&net, Some(&comm), &"a".into()),
            (2.0 / 3.0, IcScope::Community)
        );
        // e: in-neighbours f, a over the whole network -> 2/5.
        assert_eq!(
            in_degree_centrality(&net, Some(&comm), &"e".into()),
            (2.0 / 5.0, IcScope::Network)
        );
    }

    #[test]
    fn ic_takes_max_over_overlapping_communities() {
        let net = edges(&[("a", "s"), ("b", "s"), ("c", "s"), ("x", "s")]);
        let set = |xs: &[&str]| xs.iter().map(|&s| UserId::from(s)).collect();
        let comm = CommunityAssignment::from_candidates(
            "c".into(),
            Algorithm::Demon,
            &net.nodes,
            vec![set(&["a", "b", "c", "s"]), set(&["s", "x", "y", "z"])],
            4,
        );
        // 3/3 in the first community, 1/3 in the second.
        assert_eq!(
            in_degree_centrality(&net, Some(&comm), &"s".into()),
            (1.0, IcScope::Community)
        );
    }

    proptest! {
        #[test]
        fn tf_and_ta_increase_with_on_context_counts(p1 in 0u64..50, p2 in 0u64..50, q1 in 0u64..50, q2 in 0u64..50) {
            let base = counts(c(p1, p2, 0), c(q1, q2, 0), 0, 0);
            let more_p1 = counts(c(p1 + 1, p2, 0), c(q1, q2, 0), 0, 0);
            let more_p2 = counts(c(p1, p2 + 1, 0), c(q1, q2, 0), 0, 0);
            prop_assert!(topical_focus(&more_p1) > topical_focus(&base));
            prop_assert!(topical_attachment(&more_p1) > topical_attachment(&base));
            prop_assert!(topical_attachment(&more_p2) > topical_attachment(&base));
        }

        #[test]
        fn fr_scale_invariant_and_bounded(f1 in 0u64..10_000, f2 in 0u64..10_000, k in 1u64..1000) {
            let z = FeatureCounts::default();
            let a = follower_rank(&counts(z, z, f1, f2));
            let b = follower_rank(&counts(z, z, f1 * k, f2 * k));
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn ic_in_unit_interval(pairs in proptest::collection::vec((0u8..8, 0u8..8), 1..30)) {
            let list: Vec<(String, String)> = pairs.iter().filter(|(a, b)| a != b).map(|(a, b)| (format!("n{a}"), format!("n{b}"))).collect();
            let text: String = list.iter().map(|(a, b)| format!("{a}\t{b}\t1\n")).collect();
            let net = ContextNetwork::from_edge_list("c".into(), &text).unwrap();
            for u in &net.nodes {
                let (ic, _) = in_degree_centrality(&net, None, u);
                prop_assert!((0.0..=1.0).contains(&ic));
            }
        }
    }
}
