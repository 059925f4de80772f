//! Request handling for the search, overview and drill-down endpoints.
//!
//! Handlers here are plain functions over an immutable [`Catalog`]; the
//! [`http`] module maps them onto routes. Every response is a deterministic
//! function of the catalog and the request.

pub mod http;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::num::NonZeroUsize;

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::Serialize;
use thiserror::Error;

use crate::index::{Index, IndexError, Query};
use crate::model::{NormalizedStore, Project, Publication};
use crate::stats::{self, group_thousands, AnnualSeries, QuerySummary};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ApiError {
    #[error("query has no searchable tokens")]
    EmptyQuery,
    #[error("{0}")]
    BadTableParams(String),
    #[error("no project with id {0:?}")]
    UnknownProject(String),
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error("no such endpoint")]
    NotFound,
}

impl ApiError {
    pub fn status(&self) -> u16 {
        match self {
            ApiError::EmptyQuery | ApiError::BadTableParams(_) => 400,
            ApiError::Unauthorized => 401,
            ApiError::UnknownProject(_) | ApiError::NotFound => 404,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ApiError::EmptyQuery => "EmptyQuery",
            ApiError::BadTableParams(_) => "BadTableParams",
            ApiError::UnknownProject(_) => "UnknownProject",
            ApiError::Unauthorized => "Unauthorized",
            ApiError::NotFound => "NotFound",
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            error: self.code(),
            message: self.to_string(),
        }
    }
}

impl From<IndexError> for ApiError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::EmptyQuery => ApiError::EmptyQuery,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub error: &'static str,
    pub message: String,
}

pub const DEFAULT_PAGE_SIZE: usize = 10;
pub const MAX_PAGE_SIZE: usize = 100;

pub const PROJECT_COLUMNS: &[&str] = &["id", "title", "abstract", "organization", "start_date", "end_date", "funding"];
pub const PUBLICATION_COLUMNS: &[&str] = &["id", "authors", "title", "abstract", "year", "publication_type"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortSpec {
    pub column: String,
    pub descending: bool,
}

/// Paging, sorting and filtering for one table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableParams {
    pub page: usize,
    pub size: usize,
    pub sort: SortSpec,
    pub filter: Option<String>,
}

impl Default for TableParams {
    fn default() -> Self {
        TableParams {
            page: 1,
            size: DEFAULT_PAGE_SIZE,
            sort: SortSpec {
                column: "id".into(),
                descending: false,
            },
            filter: None,
        }
    }
}

/// Raw query-string values for one table, before validation.
#[derive(Debug, Clone, Copy, Default)]
pub struct RawTableParams<'a> {
    pub page: Option<&'a str>,
    pub size: Option<&'a str>,
    pub sort: Option<&'a str>,
    pub filter: Option<&'a str>,
}

impl<'a> RawTableParams<'a> {
    /// Pick `{prefix}page`, `{prefix}size`, ... out of a query map.
    pub fn from_query(query: &'a HashMap<String, String>, prefix: &str) -> Self {
        let get = |name: &str| query.get(&format!("{prefix}{name}")).map(String::as_str);
        RawTableParams {
            page: get("page"),
            size: get("size"),
            sort: get("sort"),
            filter: get("filter"),
        }
    }
}

impl TableParams {
    /// Validate raw values against a table's declared columns. `sort` is
    /// `column`, `column:asc` or `column:desc`.
    pub fn parse(raw: RawTableParams<'_>, columns: &[&str]) -> Result<TableParams, ApiError> {
        let bad = |msg: String| ApiError::BadTableParams(msg);
        let mut params = TableParams::default();
        if let Some(page) = raw.page.filter(|s| !s.is_empty()) {
            params.page = page
                .parse()
                .ok()
                .filter(|&p| p >= 1)
                .ok_or_else(|| bad(format!("page must be an integer >= 1, got {page:?}")))?;
        }
        if let Some(size) = raw.size.filter(|s| !s.is_empty()) {
            params.size = size
                .parse()
                .ok()
                .filter(|s| (1..=MAX_PAGE_SIZE).contains(s))
                .ok_or_else(|| bad(format!("size must be between 1 and {MAX_PAGE_SIZE}, got {size:?}")))?;
        }
        if let Some(sort) = raw.sort.filter(|s| !s.is_empty()) {
            let (column, direction) = sort.split_once(':').unwrap_or((sort, "asc"));
            if !columns.contains(&column) {
                return Err(bad(format!(
                    "unknown sort column {column:?}; expected one of {}",
                    columns.join(", ")
                )));
            }
            let descending = match direction {
                "asc" => false,
                "desc" => true,
                other => return Err(bad(format!("sort direction must be asc or desc, got {other:?}"))),
            };
            params.sort = SortSpec {
                column: column.to_string(),
                descending,
            };
        }
        params.filter = raw.filter.map(str::trim).filter(|f| !f.is_empty()).map(str::to_string);
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Page<T> {
    pub page: usize,
    pub size: usize,
    /// All rows matching the filter, not just this page.
    pub total: usize,
    /// 1-based position of the first and last row on this page; 0 when empty.
    pub from: usize,
    pub to: usize,
    pub rows: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProjectRow {
    pub id: String,
    pub source: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub organization: String,
    pub investigators: Vec<String>,
    pub start_date: String,
    pub end_date: String,
    pub start_date_display: String,
    pub end_date_display: String,
    pub funding_cents: u64,
    pub funding_display: String,
    pub currency_original: String,
    pub grant_number: Option<String>,
    pub project_type: Option<String>,
    pub publication_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PublicationRow {
    pub id: String,
    pub pmid: String,
    pub authors: Vec<String>,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub year: i32,
    pub publication_type: String,
    pub scholarly_link: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Overview {
    pub n_projects: u64,
    pub n_publications: u64,
    pub funding_total: u64,
    pub funding_display: String,
    pub funding_by_year: AnnualSeries,
    pub publications_by_year: AnnualSeries,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueryEcho {
    pub raw: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SearchResponse {
    pub query: QueryEcho,
    pub summary: QuerySummary,
    pub funding_by_year: AnnualSeries,
    pub publications_by_year: AnnualSeries,
    pub projects: Page<ProjectRow>,
    pub publications: Page<PublicationRow>,
}

/// Summary block without the tables, as printed by `query --format json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SummaryBlock {
    pub query: QueryEcho,
    pub summary: QuerySummary,
    pub funding_by_year: AnnualSeries,
    pub publications_by_year: AnnualSeries,
}

/// "$ 1,120,044": whole dollars, rounded half up.
pub fn format_money(cents: u64) -> String {
    format!("$ {}", group_thousands((cents + 50) / 100))
}

pub fn format_display_date(date: chrono::NaiveDate) -> String {
    date.format("%d-%m-%Y").to_string()
}

const SCHOLAR_QUERY: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

pub fn scholarly_link(title: &str) -> String {
    format!(
        "https://scholar.google.com/scholar?q={}",
        utf8_percent_encode(title, SCHOLAR_QUERY)
    )
}

/// Immutable corpus + index snapshot that requests are answered from.
#[derive(Debug, Clone)]
pub struct Catalog {
    store: NormalizedStore,
    index: Index,
    links_by_project: HashMap<String, Vec<String>>,
    trend_run: NonZeroUsize,
}

impl Catalog {
    pub fn new(store: NormalizedStore, index: Index, trend_run: NonZeroUsize) -> Self {
        let mut links_by_project: HashMap<String, Vec<String>> = HashMap::new();
        for link in &store.links {
            links_by_project
                .entry(link.project_id.clone())
                .or_default()
                .push(link.publication_id.clone());
        }
        Catalog {
            store,
            index,
            links_by_project,
            trend_run,
        }
    }

    pub fn build(store: NormalizedStore, trend_run: NonZeroUsize) -> Self {
        let index = Index::build(&store);
        Catalog::new(store, index, trend_run)
    }

    pub fn store(&self) -> &NormalizedStore {
        &self.store
    }

    pub fn index(&self) -> &Index {
        &self.index
    }

    pub fn trend_run(&self) -> NonZeroUsize {
        self.trend_run
    }

    fn project_row(&self, p: &Project) -> ProjectRow {
        ProjectRow {
            id: p.id.clone(),
            source: p.source.to_string(),
            title: p.title.clone(),
            abstract_text: p.abstract_text.clone(),
            organization: p.organization.clone(),
            investigators: p.investigators.clone(),
            start_date: p.start_date.to_string(),
            end_date: p.end_date.to_string(),
            start_date_display: format_display_date(p.start_date),
            end_date_display: format_display_date(p.end_date),
            funding_cents: p.funding_total,
            funding_display: format_money(p.funding_total),
            currency_original: p.currency_original.clone(),
            grant_number: p.grant_number.clone(),
            project_type: p.project_type.clone(),
            publication_count: self.links_by_project.get(&p.id).map_or(0, Vec::len),
        }
    }

    fn publication_row(p: &Publication) -> PublicationRow {
        PublicationRow {
            id: p.id.clone(),
            pmid: p.pmid.clone(),
            authors: p.authors.clone(),
            title: p.title.clone(),
            abstract_text: p.abstract_text.clone(),
            year: p.year,
            publication_type: p.publication_type.clone(),
            scholarly_link: scholarly_link(&p.title),
        }
    }

    pub fn overview(&self) -> Overview {
        let projects: Vec<&Project> = self.store.projects.values().collect();
        let publications: Vec<&Publication> = self.store.publications.values().collect();
        let s = stats::summarize_with_series(&projects, &publications, self.trend_run);
        Overview {
            n_projects: s.summary.n_projects,
            n_publications: s.summary.n_publications,
            funding_total: s.summary.funding_total,
            funding_display: format_money(s.summary.funding_total),
            funding_by_year: s.funding_by_year,
            publications_by_year: s.publications_by_year,
        }
    }

    fn matches(&self, q: &str) -> Result<(Query, Vec<&Project>, Vec<&Publication>), ApiError> {
        let query = Query::parse(q)?;
        let hits = self.index.search(&query);
        let projects = hits.project_ids.iter().map(|id| &self.store.projects[id]).collect();
        let publications = hits.publication_ids.iter().map(|id| &self.store.publications[id]).collect();
        Ok((query, projects, publications))
    }

    /// Aggregates over the full match sets of `q`.
    pub fn summary(&self, q: &str) -> Result<SummaryBlock, ApiError> {
        let (query, projects, publications) = self.matches(q)?;
        let s = stats::summarize_with_series(&projects, &publications, self.trend_run);
        Ok(SummaryBlock {
            query: QueryEcho {
                raw: query.raw,
                tokens: query.tokens,
            },
            summary: s.summary,
            funding_by_year: s.funding_by_year,
            publications_by_year: s.publications_by_year,
        })
    }

    pub fn search(&self, q: &str, project_params: &TableParams, publication_params: &TableParams) -> Result<SearchResponse, ApiError> {
        let (query, projects, publications) = self.matches(q)?;
        let s = stats::summarize_with_series(&projects, &publications, self.trend_run);
        Ok(SearchResponse {
            query: QueryEcho {
                raw: query.raw,
                tokens: query.tokens,
            },
            summary: s.summary,
            funding_by_year: s.funding_by_year,
            publications_by_year: s.publications_by_year,
            projects: self.project_page(projects, project_params),
            publications: publication_page(publications, publication_params),
        })
    }

    pub fn project(&self, id: &str) -> Result<ProjectRow, ApiError> {
        self.store
            .projects
            .get(id)
            .map(|p| self.project_row(p))
            .ok_or_else(|| ApiError::UnknownProject(id.to_string()))
    }

    /// Child table: publications linked to one project.
    pub fn project_publications(&self, id: &str, params: &TableParams) -> Result<Page<PublicationRow>, ApiError> {
        if !self.store.projects.contains_key(id) {
            return Err(ApiError::UnknownProject(id.to_string()));
        }
        let linked: Vec<&Publication> = self
            .links_by_project
            .get(id)
            .into_iter()
            .flatten()
            .map(|pid| &self.store.publications[pid])
            .collect();
        Ok(publication_page(linked, params))
    }

    fn project_page(&self, projects: Vec<&Project>, params: &TableParams) -> Page<ProjectRow> {
        let rows = table_pipeline(projects, params, project_filter_text, compare_projects);
        paginate(rows, params, |p| self.project_row(p))
    }
}

fn publication_page(publications: Vec<&Publication>, params: &TableParams) -> Page<PublicationRow> {
    let rows = table_pipeline(publications, params, publication_filter_text, compare_publications);
    paginate(rows, params, |p| Catalog::publication_row(p))
}

/// Text the table filter box searches: every displayed column, with full
/// abstracts.
fn project_filter_text(p: &Project) -> [String; 7] {
    [
        p.id.clone(),
        p.title.clone(),
        p.abstract_text.clone(),
        p.organization.clone(),
        format_display_date(p.start_date),
        format_display_date(p.end_date),
        format_money(p.funding_total),
    ]
}

fn publication_filter_text(p: &Publication) -> [String; 6] {
    [
        p.id.clone(),
        p.authors.join(", "),
        p.title.clone(),
        p.abstract_text.clone(),
        p.year.to_string(),
        p.publication_type.clone(),
    ]
}

fn compare_projects(column: &str, a: &Project, b: &Project) -> Ordering {
    match column {
        "title" => a.title.cmp(&b.title),
        "abstract" => a.abstract_text.cmp(&b.abstract_text),
        "organization" => a.organization.cmp(&b.organization),
        "start_date" => a.start_date.cmp(&b.start_date),
        "end_date" => a.end_date.cmp(&b.end_date),
        "funding" => a.funding_total.cmp(&b.funding_total),
        _ => Ordering::Equal,
    }
}

fn compare_publications(column: &str, a: &Publication, b: &Publication) -> Ordering {
    match column {
        "authors" => a.authors.join(", ").cmp(&b.authors.join(", ")),
        "title" => a.title.cmp(&b.title),
        "abstract" => a.abstract_text.cmp(&b.abstract_text),
        "year" => a.year.cmp(&b.year),
        "publication_type" => a.publication_type.cmp(&b.publication_type),
        _ => Ordering::Equal,
    }
}

trait HasId {
    fn entity_id(&self) -> &str;
}

impl HasId for Project {
    fn entity_id(&self) -> &str {
        &self.id
    }
}

impl HasId for Publication {
    fn entity_id(&self) -> &str {
        &self.id
    }
}

/// Filter, then sort with ties broken by ascending id.
fn table_pipeline<'a, T: HasId, const N: usize>(
    mut rows: Vec<&'a T>,
    params: &TableParams,
    text: impl Fn(&T) -> [String; N],
    compare: impl Fn(&str, &T, &T) -> Ordering,
) -> Vec<&'a T> {
    if let Some(filter) = &params.filter {
        let needle = filter.to_lowercase();
        rows.retain(|row| text(row).iter().any(|cell| cell.to_lowercase().contains(&needle)));
    }
    let column = params.sort.column.as_str();
    rows.sort_by(|a, b| {
        let primary = compare(column, a, b);
        let primary = if params.sort.descending { primary.reverse() } else { primary };
        primary.then_with(|| a.entity_id().cmp(b.entity_id()))
    });
    rows
}

fn paginate<T, R>(rows: Vec<&T>, params: &TableParams, render: impl Fn(&T) -> R) -> Page<R> {
    let total = rows.len();
    let start = (params.page - 1).saturating_mul(params.size).min(total);
    let end = start.saturating_add(params.size).min(total);
    let page_rows: Vec<R> = rows[start..end].iter().map(|r| render(r)).collect();
    let (from, to) = if page_rows.is_empty() { (0, 0) } else { (start + 1, end) };
    Page {
        page: params.page,
        size: params.size,
        total,
        from,
        to,
        rows: page_rows,
    }
}
