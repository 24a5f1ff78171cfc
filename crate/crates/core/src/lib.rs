//! Iterative, context-scoped discovery of relevant users in a micro-blog
//! archive.
//!
//! One iteration takes a [`context::Context`] (terms, time window, optional
//! bounding box), selects its posts from a [`corpus::Archive`], builds the
//! interaction network, detects communities, computes per-user metrics and
//! stores them in the [`store::ProfileStore`]. Rankings over the store feed
//! [`discovery`], which proposes new contexts for a human to approve.

pub mod api;
pub mod community;
pub mod context;
pub mod corpus;
pub mod discovery;
pub mod ids;
pub mod metrics;
pub mod network;
pub mod par;
pub mod pipeline;
pub mod ranking;
pub mod store;
pub mod synth;
