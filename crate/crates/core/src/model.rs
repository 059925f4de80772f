//! Canonical entities built from staged records.
//!
//! Project payload fields: `title`, `start_date`, `end_date`, `amount`,
//! `currency` (required); `abstract`, `organization`, `investigators`,
//! `grant_number`, `project_type` (optional). Publication payload fields:
//! `title`, `year` (required); `pmid` (defaults to the source id), `abstract`,
//! `authors`, `publication_type`, `grant_numbers`. Multi-valued fields are
//! `;`-separated. Link payloads carry canonical `project_ref` and
//! `publication_ref` entity ids.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ingest::{normalize_grant_number, RecordKind, Source, SourceRecord, StagingStore};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("missing or invalid field {0:?}")]
    FieldError(String),
    #[error("start date {start} is after end date {end}")]
    DateOrderError { start: NaiveDate, end: NaiveDate },
    #[error("no exchange rate for currency {0:?}")]
    UnknownCurrency(String),
    #[error("invalid rate for {code:?}: {reason}")]
    BadRate { code: String, reason: String },
    #[error("amount overflows after conversion")]
    Overflow,
    #[error("duplicate entity id {0}")]
    DuplicateEntity(String),
    #[error("record kind {0:?} cannot become this entity")]
    WrongKind(RecordKind),
}

fn field_error(name: &str) -> ModelError {
    ModelError::FieldError(name.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Project {
    pub id: String,
    pub source: Source,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub organization: String,
    pub investigators: Vec<String>,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    /// Total funding for the whole project period, in US cents.
    pub funding_total: u64,
    pub currency_original: String,
    pub grant_number: Option<String>,
    pub project_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Publication {
    pub id: String,
    pub pmid: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub authors: Vec<String>,
    pub year: i32,
    pub publication_type: String,
    pub grant_numbers_cited: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ExplicitLink,
    GrantNumberMatch,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProjectPublicationLink {
    pub project_id: String,
    pub publication_id: String,
    pub provenance: Provenance,
}

pub fn project_id(source: Source, source_id: &str) -> String {
    format!("P:{source}:{source_id}")
}

pub fn publication_id(pmid: &str) -> String {
    format!("B:pubmed:{pmid}")
}

/// Exact decimal exchange rate: `mantissa / 10^scale` USD per unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rate {
    mantissa: u128,
    scale: u32,
}

impl Rate {
    pub const ONE: Rate = Rate { mantissa: 1, scale: 0 };
    const MAX_DIGITS: usize = 18;

    fn is_one(self) -> bool {
        self.mantissa == 10u128.pow(self.scale)
    }
}

impl FromStr for Rate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() && frac.is_empty() {
            return Err("empty rate".into());
        }
        if !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
            return Err(format!("{s:?} is not a plain decimal"));
        }
        let digits = format!("{int}{frac}");
        let digits = digits.trim_start_matches('0');
        if digits.len() > Rate::MAX_DIGITS {
            return Err(format!("{s:?} has too many significant digits"));
        }
        let mantissa: u128 = if digits.is_empty() { 0 } else { digits.parse().map_err(|_| "bad digits")? };
        if mantissa == 0 {
            return Err("rate must be positive".into());
        }
        Ok(Rate {
            mantissa,
            scale: frac.len() as u32,
        })
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let digits = format!("{:0>width$}", self.mantissa, width = self.scale as usize + 1);
        let (int, frac) = digits.split_at(digits.len() - self.scale as usize);
        if frac.is_empty() {
            f.write_str(int)
        } else {
            write!(f, "{int}.{frac}")
        }
    }
}

/// USD-per-unit exchange rates keyed by ISO-4217 code. USD is always 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RateTable {
    rates: BTreeMap<String, Rate>,
}

impl Default for RateTable {
    fn default() -> Self {
        RateTable {
            rates: BTreeMap::from([("USD".to_string(), Rate::ONE)]),
        }
    }
}

impl RateTable {
    pub fn usd_only() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, code: &str, rate: &str) -> Result<(), ModelError> {
        let code = code.trim().to_ascii_uppercase();
        let bad = |reason: String| ModelError::BadRate {
            code: code.clone(),
            reason,
        };
        if code.len() != 3 || !code.bytes().all(|b| b.is_ascii_uppercase()) {
            return Err(bad("not an ISO-4217 code".into()));
        }
        let rate: Rate = rate.parse().map_err(bad)?;
        if code == "USD" && !rate.is_one() {
            return Err(bad("USD must map to 1".into()));
        }
        self.rates.insert(code, rate);
        Ok(())
    }

    pub fn get(&self, code: &str) -> Option<Rate> {
        self.rates.get(code).copied()
    }

    /// Parse the JSON rate-table file: `{"EUR": "1.10", ...}`.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let raw: BTreeMap<String, serde_json::Value> = serde_json::from_str(text).map_err(|e| ModelError::BadRate {
            code: "*".into(),
            reason: e.to_string(),
        })?;
        let mut table = RateTable::default();
        for (code, value) in raw {
            let rate = match value {
                serde_json::Value::String(s) => s,
                serde_json::Value::Number(n) => n.to_string(),
                other => {
                    return Err(ModelError::BadRate {
                        code,
                        reason: format!("expected decimal string, got {other}"),
                    })
                }
            };
            table.insert(&code, &rate)?;
        }
        Ok(table)
    }
}

impl Serialize for RateTable {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_map(self.rates.iter().map(|(k, v)| (k, v.to_string())))
    }
}

impl<'de> Deserialize<'de> for RateTable {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, String>::deserialize(deserializer)?;
        let mut table = RateTable::default();
        for (code, rate) in raw {
            table.insert(&code, &rate).map_err(serde::de::Error::custom)?;
        }
        Ok(table)
    }
}

/// Convert an amount in minor units of `code` to US cents, rounding half up.
pub fn convert_currency(amount_minor: u64, code: &str, rates: &RateTable) -> Result<u64, ModelError> {
    if code == "USD" {
        return Ok(amount_minor);
    }
    let rate = rates
        .get(code)
        .ok_or_else(|| ModelError::UnknownCurrency(code.to_string()))?;
    let denom = 10u128.pow(rate.scale);
    let scaled = u128::from(amount_minor) * rate.mantissa;
    let rounded = (scaled * 2 + denom) / (denom * 2);
    u64::try_from(rounded).map_err(|_| ModelError::Overflow)
}

/// Parse a nonnegative decimal major-unit amount ("1120044.00") into minor
/// units (cents).
fn parse_amount_minor(raw: &str) -> Option<u64> {
    let raw = raw.trim();
    let (int, frac) = raw.split_once('.').unwrap_or((raw, ""));
    if int.is_empty() || frac.len() > 2 {
        return None;
    }
    if !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let int: u64 = int.parse().ok()?;
    let frac: u64 = if frac.is_empty() {
        0
    } else {
        format!("{frac:0<2}").parse().ok()?
    };
    int.checked_mul(100)?.checked_add(frac)
}

fn parse_date(rec: &SourceRecord, names: &[&str]) -> Result<NaiveDate, ModelError> {
    let (name, raw) = names
        .iter()
        .find_map(|n| rec.field(n).map(|v| (*n, v)))
        .ok_or_else(|| field_error(names[0]))?;
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d").map_err(|_| field_error(name))
}

fn optional(rec: &SourceRecord, name: &str) -> Option<String> {
    rec.field(name)
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(str::to_string)
}

fn list(rec: &SourceRecord, name: &str) -> Vec<String> {
    rec.field(name)
        .map(|v| {
            v.split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
}

fn required<'a>(rec: &'a SourceRecord, name: &str) -> Result<&'a str, ModelError> {
    rec.field(name)
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| field_error(name))
}

pub fn to_project(rec: &SourceRecord, rates: &RateTable) -> Result<Project, ModelError> {
    if rec.kind != RecordKind::Project {
        return Err(ModelError::WrongKind(rec.kind));
    }
    let title = required(rec, "title")?.to_string();
    let start_date = parse_date(rec, &["start_date", "start"])?;
    let end_date = parse_date(rec, &["end_date", "end"])?;
    if start_date > end_date {
        return Err(ModelError::DateOrderError {
            start: start_date,
            end: end_date,
        });
    }
    let amount = parse_amount_minor(required(rec, "amount")?).ok_or_else(|| field_error("amount"))?;
    let currency = required(rec, "currency")?.to_ascii_uppercase();
    let funding_total = convert_currency(amount, &currency, rates)?;
    let grant_number = optional(rec, "grant_number")
        .map(|g| normalize_grant_number(&g).map_err(|_| field_error("grant_number")))
        .transpose()?;
    Ok(Project {
        id: project_id(rec.source, &rec.source_id),
        source: rec.source,
        title,
        abstract_text: optional(rec, "abstract").unwrap_or_default(),
        organization: optional(rec, "organization").unwrap_or_default(),
        investigators: list(rec, "investigators"),
        start_date,
        end_date,
        funding_total,
        currency_original: currency,
        grant_number,
        project_type: optional(rec, "project_type"),
    })
}

pub const MIN_PUBLICATION_YEAR: i32 = 1800;

pub fn max_publication_year() -> i32 {
    Utc::now().year() + 1
}

pub fn to_publication(rec: &SourceRecord) -> Result<Publication, ModelError> {
    if rec.kind != RecordKind::Publication {
        return Err(ModelError::WrongKind(rec.kind));
    }
    let pmid = optional(rec, "pmid").unwrap_or_else(|| rec.source_id.clone());
    if pmid.is_empty() || !pmid.bytes().all(|b| b.is_ascii_digit()) {
        return Err(field_error("pmid"));
    }
    let title = required(rec, "title")?.to_string();
    let year: i32 = required(rec, "year")?.parse().map_err(|_| field_error("year"))?;
    if !(MIN_PUBLICATION_YEAR..=max_publication_year()).contains(&year) {
        return Err(field_error("year"));
    }
    let grant_numbers_cited: BTreeSet<String> = list(rec, "grant_numbers")
        .iter()
        .filter_map(|g| normalize_grant_number(g).ok())
        .collect();
    Ok(Publication {
        id: publication_id(&pmid),
        pmid,
        title,
        abstract_text: optional(rec, "abstract").unwrap_or_default(),
        authors: list(rec, "authors"),
        year,
        publication_type: optional(rec, "publication_type").unwrap_or_default(),
        grant_numbers_cited: grant_numbers_cited.into_iter().collect(),
    })
}

/// An explicit project/publication pairing taken from a link record.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LinkRef {
    pub project_ref: String,
    pub publication_ref: String,
}

impl LinkRef {
    pub fn from_record(rec: &SourceRecord) -> Option<LinkRef> {
        Some(LinkRef {
            project_ref: rec.field("project_ref")?.trim().to_string(),
            publication_ref: rec.field("publication_ref")?.trim().to_string(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinkResolution {
    /// Sorted by `(project_id, publication_id)`, one entry per pair.
    pub links: Vec<ProjectPublicationLink>,
    /// Explicit refs whose project or publication does not exist.
    pub dangling: usize,
}

/// Union of explicit links and grant-number matches. A pair found both ways
/// keeps `ExplicitLink` provenance.
pub fn resolve_links(projects: &[Project], publications: &[Publication], explicit: &[LinkRef]) -> LinkResolution {
    let project_ids: BTreeSet<&str> = projects.iter().map(|p| p.id.as_str()).collect();
    let publication_ids: BTreeSet<&str> = publications.iter().map(|p| p.id.as_str()).collect();
    let mut pairs: BTreeMap<(String, String), Provenance> = BTreeMap::new();
    let mut dangling = 0;

    for link in explicit {
        if project_ids.contains(link.project_ref.as_str()) && publication_ids.contains(link.publication_ref.as_str()) {
            pairs.insert(
                (link.project_ref.clone(), link.publication_ref.clone()),
                Provenance::ExplicitLink,
            );
        } else {
            dangling += 1;
        }
    }

    let mut by_grant: HashMap<&str, Vec<&str>> = HashMap::new();
    for project in projects {
        if let Some(grant) = &project.grant_number {
            by_grant.entry(grant.as_str()).or_default().push(project.id.as_str());
        }
    }
    for publication in publications {
        for grant in &publication.grant_numbers_cited {
            for &project in by_grant.get(grant.as_str()).into_iter().flatten() {
                pairs
                    .entry((project.to_string(), publication.id.clone()))
                    .or_insert(Provenance::GrantNumberMatch);
            }
        }
    }

    LinkResolution {
        links: pairs
            .into_iter()
            .map(|((project_id, publication_id), provenance)| ProjectPublicationLink {
                project_id,
                publication_id,
                provenance,
            })
            .collect(),
        dangling,
    }
}

/// The normalized corpus: every entity keyed and ordered by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormalizedStore {
    pub projects: BTreeMap<String, Project>,
    pub publications: BTreeMap<String, Publication>,
    /// Sorted by `(project_id, publication_id)`.
    pub links: Vec<ProjectPublicationLink>,
}

impl NormalizedStore {
    pub fn from_parts(
        projects: impl IntoIterator<Item = Project>,
        publications: impl IntoIterator<Item = Publication>,
        links: impl IntoIterator<Item = ProjectPublicationLink>,
    ) -> Self {
        let mut links: Vec<_> = links.into_iter().collect();
        links.sort();
        links.dedup_by(|a, b| a.project_id == b.project_id && a.publication_id == b.publication_id);
        NormalizedStore {
            projects: projects.into_iter().map(|p| (p.id.clone(), p)).collect(),
            publications: publications.into_iter().map(|p| (p.id.clone(), p)).collect(),
            links,
        }
    }

    pub fn funding_total(&self) -> u64 {
        self.projects.values().map(|p| p.funding_total).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub source: Source,
    pub source_id: String,
    pub error: ModelError,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormalizeReport {
    pub errors: Vec<RecordError>,
    pub dangling_links: usize,
}

/// Rebuild the normalized corpus from the full staging area. Records that
/// fail validation are skipped and reported; they stay staged.
pub fn normalize(staging: &StagingStore, rates: &RateTable) -> (NormalizedStore, NormalizeReport) {
    let mut report = NormalizeReport::default();
    let mut projects = Vec::new();
    let mut publications: BTreeMap<String, Publication> = BTreeMap::new();
    let mut explicit = Vec::new();

    for rec in staging.records() {
        let result = match rec.kind {
            RecordKind::Project => to_project(rec, rates).map(|p| projects.push(p)),
            RecordKind::Publication => to_publication(rec).and_then(|p| {
                if publications.contains_key(&p.id) {
                    Err(ModelError::DuplicateEntity(p.id))
                } else {
                    publications.insert(p.id.clone(), p);
                    Ok(())
                }
            }),
            RecordKind::Link => LinkRef::from_record(rec)
                .map(|l| explicit.push(l))
                .ok_or_else(|| field_error("project_ref")),
        };
        if let Err(error) = result {
            report.errors.push(RecordError {
                source: rec.source,
                source_id: rec.source_id.clone(),
                error,
            });
        }
    }

    let publications: Vec<Publication> = publications.into_values().collect();
    let resolution = resolve_links(&projects, &publications, &explicit);
    report.dangling_links = resolution.dangling;
    (
        NormalizedStore::from_parts(projects, publications, resolution.links),
        report,
    )
}
