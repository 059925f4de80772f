//! Grant and publication trend analytics.
//!
//! The crate is organised as a three-stage pipeline:
//!
//! 1. [`ingest`] parses per-source NDJSON feeds and merges them into a
//!    staging area using per-source watermarks.
//! 2. [`model`] turns staged records into canonical projects, publications
//!    and project/publication links; [`store`] persists both stages as
//!    deterministic NDJSON snapshots.
//! 3. [`index`], [`stats`] and [`api`] answer full-text queries and produce
//!    the per-query funding/publication summaries served over HTTP.

pub mod api;
pub mod index;
pub mod ingest;
pub mod model;
pub mod stats;
pub mod store;

#[cfg(feature = "testkit")]
pub mod testkit;

pub use index::{Index, Query};
pub use ingest::{RecordKind, Source, SourceRecord, StagingStore, Watermark};
pub use model::{NormalizedStore, Project, ProjectPublicationLink, Provenance, Publication, RateTable};
pub use stats::{AnnualSeries, QuerySummary};
pub use store::StoreState;
