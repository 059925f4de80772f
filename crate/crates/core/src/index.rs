//! Conjunctive full-text search over project and publication text.
//!
//! Each entity is indexed over `title + " " + abstract`. A query matches an
//! entity when every query token occurs in it. There is no ranking: results
//! come back in entity-id order.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::NormalizedStore;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IndexError {
    #[error("query has no searchable tokens")]
    EmptyQuery,
}

/// Split text into lowercase tokens: maximal runs of letters, digits and
/// hyphens, with leading/trailing hyphens trimmed. "PD-1" stays one token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() || c == '-' {
            current.push(c);
        } else if !current.is_empty() {
            push_token(&mut tokens, &current);
            current.clear();
        }
    }
    push_token(&mut tokens, &current);
    tokens
}

fn push_token(tokens: &mut Vec<String>, run: &str) {
    let run = run.trim_matches('-');
    if !run.is_empty() {
        tokens.push(fold_case(run));
    }
}

fn fold_case(token: &str) -> String {
    if token.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-') {
        return token.to_string();
    }
    token.chars().map(simple_fold).collect()
}

/// One-to-one case folding. Characters whose lowercase form expands to
/// several code points (e.g. U+0130) are left as they are.
fn simple_fold(c: char) -> char {
    match c {
        'ς' => 'σ',
        'ſ' => 's',
        'ϐ' => 'β',
        'ϑ' => 'θ',
        'ϕ' => 'φ',
        'ϖ' => 'π',
        'ϰ' => 'κ',
        'ϱ' => 'ρ',
        'ϵ' => 'ε',
        'µ' => 'μ',
        'ẛ' => 'ṡ',
        '\u{1FBE}' => 'ι',
        _ => {
            let mut lower = c.to_lowercase();
            match (lower.next(), lower.next()) {
                (Some(l), None) => l,
                _ => c,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub raw: String,
    pub tokens: Vec<String>,
}

impl Query {
    pub fn parse(raw: &str) -> Result<Query, IndexError> {
        let tokens = tokenize(raw);
        if tokens.is_empty() {
            return Err(IndexError::EmptyQuery);
        }
        Ok(Query {
            raw: raw.to_string(),
            tokens,
        })
    }
}

/// Posting lists for one entity class. Document ordinals index into
/// `doc_ids`, which is sorted, so ordinal order is id order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassIndex {
    doc_ids: Vec<String>,
    postings: HashMap<String, Vec<u32>>,
}

impl ClassIndex {
    /// `docs` must be sorted by id with unique ids.
    fn build<'a>(docs: impl Iterator<Item = (&'a str, &'a str, &'a str)>) -> Self {
        let mut index = ClassIndex::default();
        for (ordinal, (id, title, abstract_text)) in docs.enumerate() {
            debug_assert!(index.doc_ids.last().is_none_or(|last| last.as_str() < id));
            index.doc_ids.push(id.to_string());
            let ordinal = ordinal as u32;
            for token in tokenize(title).into_iter().chain(tokenize(abstract_text)) {
                let list = index.postings.entry(token).or_default();
                if list.last() != Some(&ordinal) {
                    list.push(ordinal);
                }
            }
        }
        index
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn token_count(&self) -> usize {
        self.postings.len()
    }

    /// Ids posted under `token`, in order.
    pub fn postings(&self, token: &str) -> Vec<&str> {
        self.postings
            .get(token)
            .map(|list| list.iter().map(|&o| self.doc_ids[o as usize].as_str()).collect())
            .unwrap_or_default()
    }

    fn search(&self, tokens: &[String]) -> Vec<String> {
        let mut lists = Vec::with_capacity(tokens.len());
        for token in tokens {
            match self.postings.get(token) {
                Some(list) => lists.push(list.as_slice()),
                None => return Vec::new(),
            }
        }
        lists.sort_by_key(|l| l.len());
        let Some((rarest, rest)) = lists.split_first() else {
            return Vec::new();
        };
        let mut acc: Vec<u32> = rarest.to_vec();
        for list in rest {
            acc = intersect(&acc, list);
            if acc.is_empty() {
                break;
            }
        }
        acc.into_iter().map(|o| self.doc_ids[o as usize].clone()).collect()
    }
}

/// Intersect a short sorted list with a longer one by galloping through the
/// longer list.
fn intersect(short: &[u32], long: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(short.len());
    let mut rest = long;
    for &x in short {
        let mut step = 1;
        while step < rest.len() && rest[step] < x {
            step *= 2;
        }
        let window = &rest[..rest.len().min(step + 1)];
        let pos = window.partition_point(|&y| y < x);
        rest = &rest[pos..];
        match rest.first() {
            Some(&y) if y == x => {
                out.push(x);
                rest = &rest[1..];
            }
            Some(_) => {}
            None => break,
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SearchResult {
    pub project_ids: Vec<String>,
    pub publication_ids: Vec<String>,
}

/// Immutable inverted index over both entity classes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Index {
    pub projects: ClassIndex,
    pub publications: ClassIndex,
}

impl Index {
    pub fn build(store: &NormalizedStore) -> Index {
        Index {
            projects: ClassIndex::build(
                store
                    .projects
                    .values()
                    .map(|p| (p.id.as_str(), p.title.as_str(), p.abstract_text.as_str())),
            ),
            publications: ClassIndex::build(
                store
                    .publications
                    .values()
                    .map(|p| (p.id.as_str(), p.title.as_str(), p.abstract_text.as_str())),
            ),
        }
    }

    pub fn search(&self, query: &Query) -> SearchResult {
        let mut tokens = query.tokens.clone();
        tokens.sort();
        tokens.dedup();
        SearchResult {
            project_ids: self.projects.search(&tokens),
            publication_ids: self.publications.search(&tokens),
        }
    }

    /// Write the index as NDJSON: one header line, then one line per class
    /// listing its document ids, then one line per (class, token) sorted by
    /// class and token. `fingerprint` ties the file to the store it was
    /// built from.
    pub fn write_to<W: Write>(&self, fingerprint: &str, mut out: W) -> io::Result<()> {
        let header = IndexHeader {
            format: INDEX_FORMAT.to_string(),
            store_fingerprint: fingerprint.to_string(),
            project_docs: self.projects.doc_count(),
            publication_docs: self.publications.doc_count(),
        };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for (class, index) in [("project", &self.projects), ("publication", &self.publications)] {
            let docs = IndexLine::Docs {
                class: class.to_string(),
                ids: index.doc_ids.clone(),
            };
            writeln!(out, "{}", serde_json::to_string(&docs)?)?;
            let mut tokens: Vec<&String> = index.postings.keys().collect();
            tokens.sort();
            for token in tokens {
                let line = IndexLine::Postings {
                    class: class.to_string(),
                    token: token.clone(),
                    docs: index.postings[token].clone(),
                };
                writeln!(out, "{}", serde_json::to_string(&line)?)?;
            }
        }
        Ok(())
    }

    /// Read an index written by [`Index::write_to`]; returns it with the
    /// store fingerprint recorded in its header.
    pub fn read_from<R: BufRead>(input: R) -> io::Result<(Index, String)> {
        let invalid = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let mut lines = input.lines();
        let header: IndexHeader = serde_json::from_str(&lines.next().ok_or_else(|| invalid("empty index file".into()))??)?;
        if header.format != INDEX_FORMAT {
            return Err(invalid(format!("unsupported index format {}", header.format)));
        }
        let mut index = Index::default();
        for line in lines {
            let line = line?;
            let (class, body) = match serde_json::from_str::<IndexLine>(&line)? {
                IndexLine::Docs { class, ids } => (class, Ok(ids)),
                IndexLine::Postings { class, token, docs } => (class, Err((token, docs))),
            };
            let target = match class.as_str() {
                "project" => &mut index.projects,
                "publication" => &mut index.publications,
                other => return Err(invalid(format!("unknown class {other}"))),
            };
            match body {
                Ok(ids) => target.doc_ids = ids,
                Err((token, docs)) => {
                    let n = target.doc_ids.len() as u32;
                    if !docs.windows(2).all(|w| w[0] < w[1]) || docs.iter().any(|&d| d >= n) {
                        return Err(invalid(format!("bad posting list for {token:?}")));
                    }
                    target.postings.insert(token, docs);
                }
            }
        }
        if index.projects.doc_count() != header.project_docs || index.publications.doc_count() != header.publication_docs {
            return Err(invalid("document counts disagree with header".into()));
        }
        Ok((index, header.store_fingerprint))
    }
}

const INDEX_FORMAT: &str = "granttrend-index/1";

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    format: String,
    store_fingerprint: String,
    project_docs: usize,
    publication_docs: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum IndexLine {
    Docs { class: String, ids: Vec<String> },
    Postings { class: String, token: String, docs: Vec<u32> },
}
