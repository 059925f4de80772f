//! Source feeds, staging and incremental sync.
//!
//! Every upstream database is consumed through the same canonical feed
//! format: UTF-8 NDJSON, one envelope per line:
//!
//! ```text
//! {"source_id":"123","kind":"project","fetched_at":"2024-03-01T00:00:00Z","payload":{"title":"..."}}
//! ```
//!
//! Feeds are parsed all-or-nothing and merged into a [`StagingStore`] keyed by
//! `(source, source_id)`. A per-source [`Watermark`] tracks progress so that
//! replaying or re-splitting a feed never changes the outcome.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Mutex;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IngestError {
    #[error("malformed feed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("record from source {found} offered to the {expected} watermark")]
    SourceMismatch { expected: Source, found: Source },
    #[error("grant number {0:?} has no alphanumeric characters")]
    Unparseable(String),
    #[error("unknown source {0:?}")]
    UnknownSource(String),
    #[error("feed manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("{0}")]
    Fetch(String),
}

/// Upstream databases that feed the platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Nih,
    Nsf,
    Cordis,
    Nhmrc,
    Cihr,
    Pubmed,
    Linkfeed,
}

impl Source {
    pub const ALL: [Source; 7] = [
        Source::Nih,
        Source::Nsf,
        Source::Cordis,
        Source::Nhmrc,
        Source::Cihr,
        Source::Pubmed,
        Source::Linkfeed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Nih => "nih",
            Source::Nsf => "nsf",
            Source::Cordis => "cordis",
            Source::Nhmrc => "nhmrc",
            Source::Cihr => "cihr",
            Source::Pubmed => "pubmed",
            Source::Linkfeed => "linkfeed",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::ALL
            .into_iter()
            .find(|src| src.as_str() == s)
            .ok_or_else(|| IngestError::UnknownSource(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Project,
    Publication,
    Link,
}

impl RecordKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "project" => Some(RecordKind::Project),
            "publication" => Some(RecordKind::Publication),
            "link" => Some(RecordKind::Link),
            _ => None,
        }
    }
}

/// A raw record staged from one source, before normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub source: Source,
    pub source_id: String,
    pub kind: RecordKind,
    pub payload: BTreeMap<String, String>,
    pub fetched_at: DateTime<Utc>,
}

impl SourceRecord {
    pub fn key(&self) -> (Source, &str) {
        (self.source, &self.source_id)
    }

    pub fn field(&self, name: &str) -> Option<&str> {
        self.payload.get(name).map(String::as_str)
    }
}

/// Parse a canonical NDJSON feed. Any malformed non-blank line rejects the
/// whole feed.
pub fn parse_feed(bytes: &[u8], source: Source) -> Result<Vec<SourceRecord>, IngestError> {
    let mut records = Vec::new();
    let mut line_no = 0;
    for raw in bytes.split(|&b| b == b'\n') {
        line_no += 1;
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let text = std::str::from_utf8(raw).map_err(|_| IngestError::MalformedLine {
            line: line_no,
            reason: "not valid UTF-8".into(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let record = parse_line(text, source).map_err(|reason| IngestError::MalformedLine {
            line: line_no,
            reason,
        })?;
        records.push(record);
    }
    Ok(records)
}

fn parse_line(text: &str, source: Source) -> Result<SourceRecord, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let Value::Object(mut obj) = value else {
        return Err("line is not a JSON object".into());
    };
    let source_id = match obj.remove("source_id") {
        Some(Value::String(s)) if !s.is_empty() => s,
        Some(Value::Number(n)) => n.to_string(),
        Some(_) => return Err("source_id must be a nonempty string".into()),
        None => return Err("missing field source_id".into()),
    };
    let kind = match obj.remove("kind") {
        Some(Value::String(s)) => {
            RecordKind::parse(&s).ok_or_else(|| format!("unknown kind {s:?}"))?
        }
        Some(_) => return Err("kind must be a string".into()),
        None => return Err("missing field kind".into()),
    };
    let fetched_at = match obj.remove("fetched_at") {
        Some(Value::String(s)) => DateTime::parse_from_rfc3339(&s)
            .map_err(|e| format!("fetched_at {s:?}: {e}"))?
            .with_timezone(&Utc)
            .trunc_subsecs(0),
        Some(_) => return Err("fetched_at must be an RFC 3339 string".into()),
        None => return Err("missing field fetched_at".into()),
    };
    let payload = match obj.remove("payload") {
        Some(Value::Object(map)) => map
            .into_iter()
            .map(|(k, v)| match v {
                Value::String(s) => Ok((k, s)),
                Value::Number(n) => Ok((k, n.to_string())),
                _ => Err(format!("payload field {k:?} must be a string")),
            })
            .collect::<Result<BTreeMap<_, _>, _>>()?,
        Some(_) => return Err("payload must be an object".into()),
        None => return Err("missing field payload".into()),
    };
    if kind == RecordKind::Link {
        for field in ["project_ref", "publication_ref"] {
            if payload.get(field).is_none_or(|v| v.trim().is_empty()) {
                return Err(format!("link record requires nonempty {field}"));
            }
        }
    }
    Ok(SourceRecord {
        source,
        source_id,
        kind,
        payload,
        fetched_at,
    })
}

/// Per-source ingestion progress.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Watermark {
    pub source: Source,
    /// Largest `source_id` (string order) ever applied.
    pub cursor: String,
    /// Number of distinct records staged for this source.
    pub records_seen: u64,
    /// Latest `fetched_at` among applied records.
    pub updated_at: DateTime<Utc>,
}

impl Watermark {
    pub fn new(source: Source) -> Self {
        Watermark {
            source,
            cursor: String::new(),
            records_seen: 0,
            updated_at: DateTime::<Utc>::UNIX_EPOCH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncOutcome {
    pub applied: usize,
    pub ignored: usize,
    pub watermark: Watermark,
}

/// Staged raw records plus the watermark of every source seen so far.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StagingStore {
    records: BTreeMap<(Source, String), SourceRecord>,
    watermarks: BTreeMap<Source, Watermark>,
}

impl StagingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, source: Source, source_id: &str) -> Option<&SourceRecord> {
        self.records.get(&(source, source_id.to_string()))
    }

    /// Records in `(source, source_id)` order.
    pub fn records(&self) -> impl Iterator<Item = &SourceRecord> {
        self.records.values()
    }

    pub fn watermark(&self, source: Source) -> Watermark {
        self.watermarks
            .get(&source)
            .cloned()
            .unwrap_or_else(|| Watermark::new(source))
    }

    pub fn watermarks(&self) -> impl Iterator<Item = &Watermark> {
        self.watermarks.values()
    }

    /// Rebuild a store from previously persisted parts.
    pub fn from_parts(
        records: impl IntoIterator<Item = SourceRecord>,
        watermarks: impl IntoIterator<Item = Watermark>,
    ) -> Self {
        StagingStore {
            records: records
                .into_iter()
                .map(|r| ((r.source, r.source_id.clone()), r))
                .collect(),
            watermarks: watermarks.into_iter().map(|w| (w.source, w)).collect(),
        }
    }

    /// Sync a batch against this store's own watermark for `source` and keep
    /// the advanced watermark.
    pub fn sync(&mut self, source: Source, records: &[SourceRecord]) -> Result<SyncOutcome, IngestError> {
        let wm = self.watermark(source);
        let outcome = sync_incremental(self, records, &wm)?;
        self.watermarks.insert(source, outcome.watermark.clone());
        Ok(outcome)
    }

    /// Upsert one record. Returns true when the stored state changed.
    fn upsert(&mut self, record: &SourceRecord) -> UpsertResult {
        match self.records.get_mut(&(record.source, record.source_id.clone())) {
            None => {
                self.records
                    .insert((record.source, record.source_id.clone()), record.clone());
                UpsertResult::Inserted
            }
            Some(stored) if record.fetched_at >= stored.fetched_at => {
                if stored == record {
                    UpsertResult::Unchanged
                } else {
                    *stored = record.clone();
                    UpsertResult::Replaced
                }
            }
            Some(_) => UpsertResult::Unchanged,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UpsertResult {
    Inserted,
    Replaced,
    Unchanged,
}

/// Merge `records` into `staging` under the upsert rule: unseen keys are
/// inserted, seen keys are replaced when the incoming `fetched_at` is not
/// older (ties replace), older records are ignored. Records identical to
/// what is already staged, and records superseded by a later one in the
/// same batch, count as ignored, which makes replays no-ops.
///
/// The returned watermark is derived from `wm`; callers decide where to keep
/// it ([`StagingStore::sync`] stores it in the staging store).
pub fn sync_incremental(
    staging: &mut StagingStore,
    records: &[SourceRecord],
    wm: &Watermark,
) -> Result<SyncOutcome, IngestError> {
    if let Some(bad) = records.iter().find(|r| r.source != wm.source) {
        return Err(IngestError::SourceMismatch {
            expected: wm.source,
            found: bad.source,
        });
    }
    // Collapse the batch to one winner per key (latest fetched_at, later
    // position on ties) so a replay of a feed with internal duplicates is a
    // no-op as well.
    let mut winners: Vec<&SourceRecord> = Vec::with_capacity(records.len());
    let mut slot: HashMap<&str, usize> = HashMap::with_capacity(records.len());
    for record in records {
        match slot.get(record.source_id.as_str()) {
            Some(&i) if record.fetched_at >= winners[i].fetched_at => winners[i] = record,
            Some(_) => {}
            None => {
                slot.insert(&record.source_id, winners.len());
                winners.push(record);
            }
        }
    }

    let mut next = wm.clone();
    let mut applied = 0;
    for record in winners {
        let result = staging.upsert(record);
        if result == UpsertResult::Unchanged {
            continue;
        }
        applied += 1;
        if result == UpsertResult::Inserted {
            next.records_seen += 1;
        }
        if record.source_id > next.cursor {
            next.cursor.clone_from(&record.source_id);
        }
        if record.fetched_at > next.updated_at {
            next.updated_at = record.fetched_at;
        }
    }
    Ok(SyncOutcome {
        applied,
        ignored: records.len() - applied,
        watermark: next,
    })
}

/// A staging store shared between per-source writers. Upserts are
/// serialized; syncs for different sources may be issued from different
/// threads.
#[derive(Debug, Default)]
pub struct SharedStaging {
    inner: Mutex<StagingStore>,
}

impl SharedStaging {
    pub fn new(store: StagingStore) -> Self {
        SharedStaging {
            inner: Mutex::new(store),
        }
    }

    pub fn sync(&self, source: Source, records: &[SourceRecord]) -> Result<SyncOutcome, IngestError> {
        self.inner.lock().expect("staging lock poisoned").sync(source, records)
    }

    pub fn into_inner(self) -> StagingStore {
        self.inner.into_inner().expect("staging lock poisoned")
    }
}

/// Canonical form of a grant/award number used to match publications to
/// projects: uppercase ASCII alphanumerics with any trailing `-NN`
/// amendment suffix removed.
pub fn normalize_grant_number(raw: &str) -> Result<String, IngestError> {
    let trimmed = raw.trim();
    let base = match trimmed.rsplit_once('-') {
        Some((head, tail)) if tail.len() == 2 && tail.bytes().all(|b| b.is_ascii_digit()) => head,
        _ => trimmed,
    };
    let canonical: String = base
        .chars()
        .filter(char::is_ascii_alphanumeric)
        .map(|c| c.to_ascii_uppercase())
        .collect();
    if canonical.is_empty() {
        Err(IngestError::Unparseable(raw.to_string()))
    } else {
        Ok(canonical)
    }
}

/// Sidecar describing a feed file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedManifest {
    pub feed_id: String,
    pub source: Source,
    pub record_count: u64,
    pub checksum: String,
}

impl FeedManifest {
    pub fn describe(feed_id: impl Into<String>, source: Source, bytes: &[u8]) -> Self {
        FeedManifest {
            feed_id: feed_id.into(),
            source,
            record_count: count_nonblank_lines(bytes),
            checksum: sha256_hex(bytes),
        }
    }

    pub fn verify(&self, source: Source, bytes: &[u8]) -> Result<(), IngestError> {
        if self.source != source {
            return Err(IngestError::ManifestMismatch(format!(
                "manifest is for {}, feed ingested as {source}",
                self.source
            )));
        }
        let checksum = sha256_hex(bytes);
        if checksum != self.checksum {
            return Err(IngestError::ManifestMismatch(format!(
                "checksum {checksum} != {}",
                self.checksum
            )));
        }
        let count = count_nonblank_lines(bytes);
        if count != self.record_count {
            return Err(IngestError::ManifestMismatch(format!(
                "{count} records, manifest says {}",
                self.record_count
            )));
        }
        Ok(())
    }
}

fn count_nonblank_lines(bytes: &[u8]) -> u64 {
    bytes
        .split(|&b| b == b'\n')
        .filter(|line| line.iter().any(|b| !b.is_ascii_whitespace()))
        .count() as u64
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Something that can hand over raw feed bytes for one source.
pub trait FeedAdapter {
    fn source(&self) -> Source;
    fn fetch(&self) -> Result<Vec<u8>, IngestError>;
}

/// Feed already downloaded to disk.
#[derive(Debug, Clone)]
pub struct FileFeed {
    pub source: Source,
    pub path: PathBuf,
}

impl FeedAdapter for FileFeed {
    fn source(&self) -> Source {
        self.source
    }

    fn fetch(&self) -> Result<Vec<u8>, IngestError> {
        std::fs::read(&self.path)
            .map_err(|e| IngestError::Fetch(format!("{}: {e}", self.path.display())))
    }
}

/// Placeholder for a live upstream downloader. Live fetching is not
/// supported; operators export canonical feed files instead.
#[derive(Debug, Clone)]
pub struct LiveFeed {
    pub source: Source,
    pub endpoint: String,
}

impl FeedAdapter for LiveFeed {
    fn source(&self) -> Source {
        self.source
    }

    fn fetch(&self) -> Result<Vec<u8>, IngestError> {
        Err(IngestError::Fetch(format!(
            "live fetch from {} is not supported; export a canonical feed file",
            self.endpoint
        )))
    }
}
