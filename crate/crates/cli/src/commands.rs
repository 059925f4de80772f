//! Subcommand implementations.
//!
//! Data directory layout:
//!
//! ```text
//! <data_dir>/.lock          advisory lock serializing writers
//! <data_dir>/store/         snapshot (segments + manifest.json)
//! <data_dir>/index.ndjson   inverted index, tagged with the store fingerprint
//! ```

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter};
use std::path::{Path, PathBuf};

use granttrend_core::api::{ApiError, Catalog, SummaryBlock};
use granttrend_core::index::Index;
use granttrend_core::ingest::{parse_feed, FeedManifest, IngestError};
use granttrend_core::model::{normalize, RateTable};
use granttrend_core::stats::render_kpi_row;
use granttrend_core::store::{self, StoreError, StoreState};
use granttrend_core::Source;

use crate::config::Settings;

/// Exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input: malformed feed, empty query, bad config value.
    Input,
    /// Unreadable files, corrupt store, lock failures.
    Environment,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Input,
            message: message.into(),
        }
    }

    pub fn env(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Environment,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Input => 1,
            ErrorKind::Environment => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Fetch(_) => CliError::env(e.to_string()),
            _ => CliError::input(e.to_string()),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::env(e.to_string())
    }
}

impl From<ApiError> for CliError {
    fn from(e: ApiError) -> Self {
        CliError::input(e.to_string())
    }
}

fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError::env(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone)]
pub struct DataDir {
    root: PathBuf,
}

/// Held for the duration of a command; released on drop.
#[derive(Debug)]
pub struct DirLock {
    _file: File,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DataDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn store_dir(&self) -> PathBuf {
        self.root.join("store")
    }

    pub fn index_path(&self) -> PathBuf {
        self.root.join("index.ndjson")
    }

    fn open_lock_file(&self) -> Result<File, CliError> {
        fs::create_dir_all(&self.root).map_err(|e| io_error(&self.root, e))?;
        let path = self.root.join(".lock");
        OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| io_error(&path, e))
    }

    /// Blocks until no other command holds the directory.
    pub fn lock_exclusive(&self) -> Result<DirLock, CliError> {
        let file = self.open_lock_file()?;
        file.lock().map_err(|e| io_error(&self.root.join(".lock"), e))?;
        Ok(DirLock { _file: file })
    }

    /// Shared with other readers; excludes writers.
    pub fn lock_shared(&self) -> Result<DirLock, CliError> {
        let file = self.open_lock_file()?;
        file.lock_shared().map_err(|e| io_error(&self.root.join(".lock"), e))?;
        Ok(DirLock { _file: file })
    }

    /// Persisted state and its fingerprint, or an empty state if nothing has
    /// been ingested yet.
    pub fn load_state(&self) -> Result<(StoreState, String), CliError> {
        let dir = self.store_dir();
        if !dir.exists() {
            let state = StoreState::default();
            let fingerprint = store::manifest_for(&state).fingerprint();
            return Ok((state, fingerprint));
        }
        let (state, manifest) = store::load_with_manifest(&dir)?;
        Ok((state, manifest.fingerprint()))
    }

    /// Index for `state`: the on-disk one if it was built from the snapshot
    /// with this fingerprint, otherwise a fresh in-memory build.
    pub fn index_for(&self, state: &StoreState, fingerprint: &str) -> Result<Index, CliError> {
        let path = self.index_path();
        match File::open(&path) {
            Ok(file) => match Index::read_from(BufReader::new(file)) {
                Ok((index, tag)) if tag == fingerprint => return Ok(index),
                Ok(_) => {}
                Err(e) => eprintln!("warning: ignoring unreadable index {}: {e}", path.display()),
            },
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_error(&path, e)),
        }
        Ok(Index::build(&state.normalized))
    }

    /// Write the index to a temporary file and rename it over the active one.
    pub fn write_index(&self, index: &Index, fingerprint: &str) -> Result<(), CliError> {
        let path = self.index_path();
        let tmp = self.root.join(".index.ndjson.tmp");
        let write = || -> io::Result<()> {
            let mut out = BufWriter::new(File::create(&tmp)?);
            index.write_to(fingerprint, &mut out)?;
            out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
            fs::rename(&tmp, &path)
        };
        write().map_err(|e| io_error(&path, e))
    }

    /// Loads the store and index into a catalog, holding a shared lock while
    /// reading.
    pub fn catalog(&self, settings: &Settings) -> Result<Catalog, CliError> {
        let _lock = self.lock_shared()?;
        self.catalog_unlocked(settings)
    }

    fn catalog_unlocked(&self, settings: &Settings) -> Result<Catalog, CliError> {
        let (state, fingerprint) = self.load_state()?;
        let index = self.index_for(&state, &fingerprint)?;
        Ok(Catalog::new(state.normalized, index, settings.trend_k))
    }
}

pub fn load_rates(settings: &Settings) -> Result<RateTable, CliError> {
    let Some(path) = &settings.rate_table else {
        return Ok(RateTable::usd_only());
    };
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    RateTable::from_json(&text).map_err(|e| CliError::input(format!("rate table {}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestReport {
    pub applied: usize,
    pub ignored: usize,
    /// Staged records that failed normalization, across the whole store.
    pub errors: usize,
    pub dangling_links: usize,
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "applied={} ignored={} errors={}", self.applied, self.ignored, self.errors)
    }
}

/// Parse a feed, merge it into staging, renormalize and persist. A feed that
/// fails to parse or verify leaves the store untouched.
pub fn cmd_ingest(settings: &Settings, source: Source, input: &Path, manifest: Option<&Path>) -> Result<IngestReport, CliError> {
    let bytes = fs::read(input).map_err(|e| io_error(input, e))?;
    if let Some(path) = manifest {
        let text = fs::read(path).map_err(|e| io_error(path, e))?;
        let manifest: FeedManifest =
            serde_json::from_slice(&text).map_err(|e| CliError::input(format!("feed manifest {}: {e}", path.display())))?;
        manifest.verify(source, &bytes)?;
    }
    let records = parse_feed(&bytes, source)?;
    let rates = load_rates(settings)?;

    let data = DataDir::new(&settings.data_dir);
    let _lock = data.lock_exclusive()?;
    let (mut state, _) = data.load_state()?;
    let outcome = state.staging.sync(source, &records)?;
    let (normalized, report) = normalize(&state.staging, &rates);
    for e in &report.errors {
        eprintln!("warning: {}:{}: {}", e.source, e.source_id, e.error);
    }
    state.normalized = normalized;
    store::snapshot_replace(&state, &data.store_dir())?;
    Ok(IngestReport {
        applied: outcome.applied,
        ignored: outcome.ignored,
        errors: report.errors.len(),
        dangling_links: report.dangling_links,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryFormat {
    Row,
    Json,
}

/// One KPI row, or the summary block as pretty JSON.
pub fn cmd_query(settings: &Settings, term: &str, format: QueryFormat) -> Result<String, CliError> {
    let data = DataDir::new(&settings.data_dir);
    let catalog = {
        let _lock = data.lock_exclusive()?;
        data.catalog_unlocked(settings)?
    };
    let block: SummaryBlock = catalog.summary(term)?;
    Ok(match format {
        QueryFormat::Row => render_kpi_row(term.trim(), &block.summary),
        QueryFormat::Json => serde_json::to_string_pretty(&block).expect("summary serializes"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RebuildReport {
    pub project_docs: usize,
    pub publication_docs: usize,
}

impl fmt::Display for RebuildReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "indexed projects={} publications={}", self.project_docs, self.publication_docs)
    }
}

pub fn cmd_index_rebuild(settings: &Settings) -> Result<RebuildReport, CliError> {
    let data = DataDir::new(&settings.data_dir);
    let _lock = data.lock_exclusive()?;
    let (state, fingerprint) = data.load_state()?;
    let index = Index::build(&state.normalized);
    data.write_index(&index, &fingerprint)?;
    Ok(RebuildReport {
        project_docs: index.projects.doc_count(),
        publication_docs: index.publications.doc_count(),
    })
}

/// Manifest describing a feed file, for upstream exporters to ship alongside
/// it.
pub fn cmd_feed_manifest(source: Source, input: &Path, feed_id: Option<&str>) -> Result<String, CliError> {
    let bytes = fs::read(input).map_err(|e| io_error(input, e))?;
    let feed_id = feed_id.map(str::to_string).unwrap_or_else(|| {
        input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let manifest = FeedManifest::describe(feed_id, source, &bytes);
    Ok(serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(dir: &Path) -> Settings {
        Settings::with_data_dir(dir)
    }

    const FEED: &str = concat!(
        r#"{"source_id":"A1","kind":"project","fetched_at":"2024-01-01T00:00:00Z","payload":{"title":"Tumor immunity","start_date":"2020-01-01","end_date":"2020-12-31","amount":"100.00","currency":"USD"}}"#,
        "\n",
        r#"{"source_id":"A2","kind":"project","fetched_at":"2024-01-01T00:00:00Z","payload":{"title":"Other work","start_date":"2020-01-01","end_date":"2020-12-31","amount":"5.00","currency":"USD"}}"#,
        "\n",
    );

    #[test]
    fn ingest_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let feed = dir.path().join("feed.ndjson");
        fs::write(&feed, FEED).unwrap();
        let s = settings(&dir.path().join("data"));
        let first = cmd_ingest(&s, Source::Nih, &feed, None).unwrap();
        assert_eq!(first.to_string(), "applied=2 ignored=0 errors=0");
        let again = cmd_ingest(&s, Source::Nih, &feed, None).unwrap();
        assert_eq!(again.to_string(), "applied=0 ignored=2 errors=0");
    }

    #[test]
    fn query_ignores_a_stale_index() {
        let dir = tempfile::tempdir().unwrap();
        let feed = dir.path().join("feed.ndjson");
        fs::write(&feed, FEED.lines().next().unwrap()).unwrap();
        let s = settings(&dir.path().join("data"));
        cmd_ingest(&s, Source::Nih, &feed, None).unwrap();
        cmd_index_rebuild(&s).unwrap();
        fs::write(&feed, FEED).unwrap();
        cmd_ingest(&s, Source::Nih, &feed, None).unwrap();
        let row = cmd_query(&s, "other", QueryFormat::Row).unwrap();
        assert!(row.starts_with("other | - | 0 | 1 | $5 |"), "{row}");
    }

    #[test]
    fn manifest_mismatch_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let feed = dir.path().join("feed.ndjson");
        fs::write(&feed, FEED).unwrap();
        let manifest = dir.path().join("feed.manifest.json");
        fs::write(&manifest, cmd_feed_manifest(Source::Nih, &feed, None).unwrap()).unwrap();
        let s = settings(&dir.path().join("data"));
        let err = cmd_ingest(&s, Source::Nsf, &feed, Some(&manifest)).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(!s.data_dir.join("store").exists());
        cmd_ingest(&s, Source::Nih, &feed, Some(&manifest)).unwrap();
    }

    #[test]
    fn empty_query_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = cmd_query(&settings(dir.path()), " -- ", QueryFormat::Row).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn corrupt_store_is_an_environment_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("store")).unwrap();
        let err = cmd_index_rebuild(&settings(dir.path())).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
