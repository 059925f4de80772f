//! Seeded synthetic corpora for tests and benchmarks.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::{RecordKind, Source, SourceRecord};
use crate::model::{normalize, NormalizedStore, RateTable};
use crate::ingest::StagingStore;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ne", "ru", "ta", "vi", "zo", "pe", "qu", "sa", "di", "fe", "go", "hu", "ja",
];

const TERMS: &[&str] = &["pd-1", "pd-l1", "ctla-4", "il-2", "tnf-alpha", "her2", "p53", "brca1"];

/// Deterministic vocabulary: biomedical-style hyphenated terms plus
/// generated words.
pub fn vocabulary(size: usize) -> Vec<String> {
    let mut words: Vec<String> = TERMS.iter().map(|t| t.to_string()).collect();
    let mut n = 0usize;
    while words.len() < size.max(TERMS.len()) {
        let mut word = String::new();
        let mut k = n;
        loop {
            word.push_str(SYLLABLES[k % SYLLABLES.len()]);
            k /= SYLLABLES.len();
            if k == 0 {
                break;
            }
        }
        words.push(word);
        n += 1;
    }
    words
}

/// Pick a word with a skewed distribution so a few tokens are common and
/// most are rare.
pub fn pick_word<'a, R: Rng>(rng: &mut R, vocab: &'a [String]) -> &'a str {
    let u: f64 = rng.random();
    let i = ((u * u * u) * vocab.len() as f64) as usize;
    &vocab[i.min(vocab.len() - 1)]
}

pub fn random_text<R: Rng>(rng: &mut R, vocab: &[String], words: std::ops::Range<usize>) -> String {
    let words = rng.random_range(words);
    let mut out = String::new();
    for i in 0..words {
        if i > 0 {
            out.push_str(if rng.random_bool(0.1) { ", " } else { " " });
        }
        let word = pick_word(rng, vocab);
        if rng.random_bool(0.2) {
            out.push_str(&word.to_uppercase());
        } else {
            out.push_str(word);
        }
    }
    out
}

/// Random series for detector checks.
pub fn random_series<R: Rng>(rng: &mut R, max_len: usize, max_value: u64) -> (i32, Vec<u64>) {
    let len = rng.random_range(0..=max_len);
    let start = rng.random_range(1950..2000);
    // Small value ranges produce plateaus and ties; large ones exercise scale.
    let cap = *[2u64, 5, 20, max_value].choose(rng).unwrap();
    (start, (0..len).map(|_| rng.random_range(0..=cap)).collect())
}

pub fn random_date<R: Rng>(rng: &mut R, from_year: i32, to_year: i32) -> NaiveDate {
    let first = NaiveDate::from_ymd_opt(from_year, 1, 1).unwrap();
    let last = NaiveDate::from_ymd_opt(to_year, 12, 31).unwrap();
    let span = (last - first).num_days();
    first + Duration::days(rng.random_range(0..=span))
}

fn timestamp<R: Rng>(rng: &mut R) -> DateTime<Utc> {
    DateTime::<Utc>::UNIX_EPOCH + Duration::seconds(rng.random_range(1_600_000_000..1_700_000_000))
}

pub fn project_record<R: Rng>(rng: &mut R, vocab: &[String], source: Source, source_id: &str) -> SourceRecord {
    let start = random_date(rng, 1985, 2020);
    let end = start + Duration::days(rng.random_range(0..4000));
    let dollars: u64 = rng.random_range(0..5_000_000);
    let cents: u64 = rng.random_range(0..100);
    let mut payload = BTreeMap::from([
        ("title".to_string(), random_text(rng, vocab, 2..8)),
        ("abstract".to_string(), random_text(rng, vocab, 0..40)),
        ("organization".to_string(), format!("Institute {}", rng.random_range(0..50))),
        ("start_date".to_string(), start.to_string()),
        ("end_date".to_string(), end.to_string()),
        ("amount".to_string(), format!("{dollars}.{cents:02}")),
        ("currency".to_string(), "USD".to_string()),
    ]);
    if rng.random_bool(0.5) {
        payload.insert("grant_number".to_string(), format!("R01 GM{:06}-0{}", rng.random_range(0..2000), rng.random_range(1..9)));
    }
    SourceRecord {
        source,
        source_id: source_id.to_string(),
        kind: RecordKind::Project,
        payload,
        fetched_at: timestamp(rng),
    }
}

pub fn publication_record<R: Rng>(rng: &mut R, vocab: &[String], pmid: u64) -> SourceRecord {
    let mut payload = BTreeMap::from([
        ("title".to_string(), random_text(rng, vocab, 2..12)),
        ("abstract".to_string(), random_text(rng, vocab, 0..60)),
        ("year".to_string(), rng.random_range(1980..=2020).to_string()),
        ("authors".to_string(), format!("Author {}; Author {}", rng.random_range(0..500), rng.random_range(0..500))),
        ("publication_type".to_string(), "journal article".to_string()),
    ]);
    if rng.random_bool(0.3) {
        payload.insert("grant_numbers".to_string(), format!("R01GM{:06}", rng.random_range(0..2000)));
    }
    SourceRecord {
        source: Source::Pubmed,
        source_id: pmid.to_string(),
        kind: RecordKind::Publication,
        payload,
        fetched_at: timestamp(rng),
    }
}

/// Encode records as a canonical feed (the `source` field is implied by the
/// feed, so it is omitted).
pub fn feed_bytes(records: &[SourceRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        let line = serde_json::json!({
            "source_id": r.source_id,
            "kind": r.kind,
            "fetched_at": r.fetched_at,
            "payload": r.payload,
        });
        serde_json::to_writer(&mut out, &line).unwrap();
        out.push(b'\n');
    }
    out
}

/// Staged project and publication records for a corpus of the given size.
pub fn corpus_records<R: Rng>(rng: &mut R, n_projects: usize, n_publications: usize) -> (Vec<SourceRecord>, Vec<SourceRecord>) {
    let vocab = vocabulary(3000);
    let projects = (0..n_projects)
        .map(|i| project_record(rng, &vocab, Source::Nih, &format!("{i:07}")))
        .collect();
    let publications = (0..n_publications)
        .map(|i| publication_record(rng, &vocab, 10_000_000 + i as u64))
        .collect();
    (projects, publications)
}

pub fn random_store<R: Rng>(rng: &mut R, n_projects: usize, n_publications: usize) -> NormalizedStore {
    let (projects, publications) = corpus_records(rng, n_projects, n_publications);
    let mut staging = StagingStore::new();
    staging.sync(Source::Nih, &projects).unwrap();
    staging.sync(Source::Pubmed, &publications).unwrap();
    let (store, report) = normalize(&staging, &RateTable::default());
    assert!(report.errors.is_empty(), "generator produced invalid records: {:?}", report.errors.first());
    store
}
