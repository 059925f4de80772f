//! Snapshot persistence for the staging and normalized stores.
//!
//! A snapshot is a directory of NDJSON segments, one per entity class, plus
//! `manifest.json`. Segment lines are canonical JSON (keys sorted
//! lexicographically) ordered by entity id, so identical logical state always
//! produces identical bytes.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{sha256_hex, SourceRecord, StagingStore, Watermark};
use crate::model::{NormalizedStore, Project, ProjectPublicationLink, Publication};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(String),
    #[error("corrupt segment {file} at line {line}: {reason}")]
    CorruptSegment { file: String, line: usize, reason: String },
}

impl StoreError {
    fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn corrupt(file: &str, line: usize, reason: impl Into<String>) -> Self {
        StoreError::CorruptSegment {
            file: file.to_string(),
            line,
            reason: reason.into(),
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

const PROJECTS: &str = "projects.ndjson";
const PUBLICATIONS: &str = "publications.ndjson";
const LINKS: &str = "links.ndjson";
const SOURCE_RECORDS: &str = "source_records.ndjson";
const WATERMARKS: &str = "watermarks.ndjson";
const SEGMENTS: [&str; 5] = [PROJECTS, PUBLICATIONS, LINKS, SOURCE_RECORDS, WATERMARKS];

/// Everything that is persisted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StoreState {
    pub staging: StagingStore,
    pub normalized: NormalizedStore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentEntry {
    pub name: String,
    pub record_count: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub created_at: String,
    pub segments: Vec<SegmentEntry>,
}

impl Manifest {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        bytes
    }

    /// Identifies the logical state the manifest describes.
    pub fn fingerprint(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    pub fn segment(&self, name: &str) -> Option<&SegmentEntry> {
        self.segments.iter().find(|s| s.name == name)
    }
}

fn encode_lines<T: Serialize>(items: impl Iterator<Item = T>) -> (u64, Vec<u8>) {
    let mut count = 0;
    let mut out = Vec::new();
    for item in items {
        // Round-trip through Value so keys come out sorted.
        let value = serde_json::to_value(item).expect("entities serialize");
        out.extend_from_slice(value.to_string().as_bytes());
        out.push(b'\n');
        count += 1;
    }
    (count, out)
}

/// Encoded segment bodies in manifest order.
pub fn encode_segments(state: &StoreState) -> Vec<(&'static str, u64, Vec<u8>)> {
    let n = &state.normalized;
    let encoded = [
        encode_lines(n.projects.values()),
        encode_lines(n.publications.values()),
        encode_lines(n.links.iter()),
        encode_lines(state.staging.records()),
        encode_lines(state.staging.watermarks()),
    ];
    SEGMENTS
        .into_iter()
        .zip(encoded)
        .map(|(name, (count, bytes))| (name, count, bytes))
        .collect()
}

/// Manifest for `state` without touching disk.
pub fn manifest_for(state: &StoreState) -> Manifest {
    build_manifest(state, &encode_segments(state))
}

fn build_manifest(state: &StoreState, segments: &[(&'static str, u64, Vec<u8>)]) -> Manifest {
    // Data time, not wall-clock time, keeps snapshots reproducible.
    let created_at = state
        .staging
        .watermarks()
        .map(|w| w.updated_at)
        .max()
        .unwrap_or(DateTime::<Utc>::UNIX_EPOCH);
    Manifest {
        created_at: created_at.to_rfc3339_opts(SecondsFormat::Secs, true),
        segments: segments
            .iter()
            .map(|(name, count, bytes)| SegmentEntry {
                name: name.to_string(),
                record_count: *count,
                sha256: sha256_hex(bytes),
            })
            .collect(),
    }
}

/// Write `state` into `dir` (created if needed). Callers must hold the only
/// writer.
pub fn snapshot(state: &StoreState, dir: &Path) -> Result<Manifest, StoreError> {
    fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
    let segments = encode_segments(state);
    let manifest = build_manifest(state, &segments);
    for (name, _, bytes) in &segments {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| StoreError::io(&path, e))?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_bytes()).map_err(|e| StoreError::io(&path, e))?;
    Ok(manifest)
}

/// Snapshot into a sibling staging directory and swap it into place, so
/// readers never observe a half-written snapshot at `dir`.
pub fn snapshot_replace(state: &StoreState, dir: &Path) -> Result<Manifest, StoreError> {
    let staging_dir = sibling(dir, "incoming");
    let retired_dir = sibling(dir, "retired");
    for stale in [&staging_dir, &retired_dir] {
        if stale.exists() {
            fs::remove_dir_all(stale).map_err(|e| StoreError::io(stale, e))?;
        }
    }
    let manifest = snapshot(state, &staging_dir)?;
    if dir.exists() {
        fs::rename(dir, &retired_dir).map_err(|e| StoreError::io(dir, e))?;
    }
    fs::rename(&staging_dir, dir).map_err(|e| StoreError::io(dir, e))?;
    if retired_dir.exists() {
        fs::remove_dir_all(&retired_dir).map_err(|e| StoreError::io(&retired_dir, e))?;
    }
    Ok(manifest)
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    dir.with_file_name(format!(".{name}.{suffix}"))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, StoreError> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => StoreError::corrupt(MANIFEST_FILE, 0, "manifest missing"),
        _ => StoreError::io(&path, e),
    })?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::corrupt(MANIFEST_FILE, e.line(), e.to_string()))
}

fn read_segment<T: DeserializeOwned>(
    dir: &Path,
    manifest: &Manifest,
    name: &str,
    key: impl Fn(&T) -> String,
) -> Result<Vec<T>, StoreError> {
    let entry = manifest
        .segment(name)
        .ok_or_else(|| StoreError::corrupt(MANIFEST_FILE, 0, format!("no entry for {name}")))?;
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => StoreError::corrupt(name, 0, "segment missing"),
        _ => StoreError::io(&path, e),
    })?;
    if sha256_hex(&bytes) != entry.sha256 {
        return Err(StoreError::ChecksumMismatch(name.to_string()));
    }
    let text = std::str::from_utf8(&bytes).map_err(|_| StoreError::corrupt(name, 0, "not UTF-8"))?;
    let mut items: Vec<T> = Vec::new();
    let mut last_key: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let item: T = serde_json::from_str(line).map_err(|e| StoreError::corrupt(name, i + 1, e.to_string()))?;
        let k = key(&item);
        if last_key.as_ref().is_some_and(|prev| *prev >= k) {
            return Err(StoreError::corrupt(name, i + 1, format!("id {k} out of order or duplicated")));
        }
        last_key = Some(k);
        items.push(item);
    }
    if items.len() as u64 != entry.record_count {
        return Err(StoreError::corrupt(
            name,
            items.len(),
            format!("{} records, manifest says {}", items.len(), entry.record_count),
        ));
    }
    Ok(items)
}

/// Load and verify a snapshot directory.
pub fn load(dir: &Path) -> Result<StoreState, StoreError> {
    load_with_manifest(dir).map(|(state, _)| state)
}

/// Load a snapshot along with its manifest, whose fingerprint identifies
/// the loaded state without re-encoding it.
pub fn load_with_manifest(dir: &Path) -> Result<(StoreState, Manifest), StoreError> {
    let manifest = read_manifest(dir)?;
    let projects: Vec<Project> = read_segment(dir, &manifest, PROJECTS, |p: &Project| p.id.clone())?;
    let publications: Vec<Publication> = read_segment(dir, &manifest, PUBLICATIONS, |p: &Publication| p.id.clone())?;
    let links: Vec<ProjectPublicationLink> = read_segment(dir, &manifest, LINKS, |l: &ProjectPublicationLink| {
        format!("{}\u{0}{}", l.project_id, l.publication_id)
    })?;
    // Sources sort in declaration order, which is not name order.
    let records: Vec<SourceRecord> = read_segment(dir, &manifest, SOURCE_RECORDS, |r: &SourceRecord| {
        format!("{:02}\u{0}{}", r.source as u8, r.source_id)
    })?;
    let watermarks: Vec<Watermark> = read_segment(dir, &manifest, WATERMARKS, |w: &Watermark| {
        format!("{:02}", w.source as u8)
    })?;

    let normalized = NormalizedStore::from_parts(projects, publications, links);
    for (i, link) in normalized.links.iter().enumerate() {
        if !normalized.projects.contains_key(&link.project_id) || !normalized.publications.contains_key(&link.publication_id) {
            return Err(StoreError::corrupt(LINKS, i + 1, "link endpoint does not exist"));
        }
    }
    let state = StoreState {
        staging: StagingStore::from_parts(records, watermarks),
        normalized,
    };
    Ok((state, manifest))
}
