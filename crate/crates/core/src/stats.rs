//! Annual series and the per-query KPI set.
//!
//! Definitions used throughout:
//!
//! * **First year cited**: the earliest year with at least one publication.
//! * **Peak**: a maximal run of equal values strictly above the value just
//!   before it and the value just after it. A run touching either end of the
//!   series has no neighbour on that side and is never a peak.
//! * **Trend onset**: the first year that starts `k` consecutive strict
//!   year-over-year increases.
//! * **Proration**: a project's funding is spread over the calendar years it
//!   spans in proportion to the days it covers in each year.

use std::num::NonZeroUsize;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::model::{Project, Publication};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("bad parameter: {0}")]
    BadParameter(String),
}

pub const DEFAULT_TREND_RUN: NonZeroUsize = NonZeroUsize::new(3).unwrap();

/// Dense year → value map over an inclusive year range.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnualSeries {
    start_year: i32,
    values: Vec<u64>,
}

impl AnnualSeries {
    pub fn new(start_year: i32, values: Vec<u64>) -> Self {
        if values.is_empty() {
            return AnnualSeries::default();
        }
        AnnualSeries { start_year, values }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Densify sparse `(year, value)` pairs; repeated years are summed.
    pub fn from_points(points: impl IntoIterator<Item = (i32, u64)>) -> Self {
        let points: Vec<(i32, u64)> = points.into_iter().collect();
        let (Some(lo), Some(hi)) = (
            points.iter().map(|p| p.0).min(),
            points.iter().map(|p| p.0).max(),
        ) else {
            return AnnualSeries::default();
        };
        let mut values = vec![0u64; (hi - lo) as usize + 1];
        for (year, value) in points {
            values[(year - lo) as usize] += value;
        }
        AnnualSeries { start_year: lo, values }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn start_year(&self) -> Option<i32> {
        (!self.is_empty()).then_some(self.start_year)
    }

    pub fn end_year(&self) -> Option<i32> {
        (!self.is_empty()).then(|| self.start_year + self.values.len() as i32 - 1)
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn total(&self) -> u64 {
        self.values.iter().sum()
    }

    pub fn get(&self, year: i32) -> Option<u64> {
        let offset = usize::try_from(year.checked_sub(self.start_year)?).ok()?;
        self.values.get(offset).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, u64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| (self.start_year + i as i32, v))
    }

    fn year_at(&self, offset: usize) -> i32 {
        self.start_year + offset as i32
    }
}

#[derive(Serialize, Deserialize)]
struct SeriesRepr {
    start_year: Option<i32>,
    end_year: Option<i32>,
    values: Vec<u64>,
}

impl Serialize for AnnualSeries {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        SeriesRepr {
            start_year: self.start_year(),
            end_year: self.end_year(),
            values: self.values.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for AnnualSeries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = SeriesRepr::deserialize(deserializer)?;
        match (repr.start_year, repr.end_year) {
            (None, None) if repr.values.is_empty() => Ok(AnnualSeries::default()),
            (Some(start), Some(end)) if end >= start && (end - start + 1) as usize == repr.values.len() => {
                Ok(AnnualSeries::new(start, repr.values))
            }
            _ => Err(serde::de::Error::custom("series length does not match its year range")),
        }
    }
}

fn days_in_year(year: i32) -> i64 {
    if NaiveDate::from_ymd_opt(year, 2, 29).is_some() {
        366
    } else {
        365
    }
}

/// Split a project's funding over the calendar years of its period,
/// weighted by days of overlap, using largest-remainder rounding so the
/// parts sum exactly to the total. Equal remainders favour the earlier year.
pub fn prorate_funding(project: &Project) -> Vec<(i32, u64)> {
    let (start, end) = (project.start_date, project.end_date);
    let mut days: Vec<(i32, i64)> = Vec::new();
    for year in start.year()..=end.year() {
        let first = if year == start.year() { start.ordinal() as i64 } else { 1 };
        let last = if year == end.year() { end.ordinal() as i64 } else { days_in_year(year) };
        days.push((year, last - first + 1));
    }
    let total_days: u128 = days.iter().map(|d| d.1 as u128).sum();
    let funding = u128::from(project.funding_total);

    let mut shares: Vec<(i32, u128, u128)> = days
        .iter()
        .map(|&(year, d)| {
            let weighted = funding * d as u128;
            (year, weighted / total_days, weighted % total_days)
        })
        .collect();
    let assigned: u128 = shares.iter().map(|s| s.1).sum();
    let leftover = (funding - assigned) as usize;
    if leftover > 0 {
        let mut order: Vec<usize> = (0..shares.len()).collect();
        order.sort_by(|&a, &b| shares[b].2.cmp(&shares[a].2).then(a.cmp(&b)));
        for &i in order.iter().take(leftover) {
            shares[i].1 += 1;
        }
    }
    shares
        .into_iter()
        .map(|(year, amount, _)| (year, amount as u64))
        .collect()
}

pub fn funding_by_year<'a>(projects: impl IntoIterator<Item = &'a Project>) -> AnnualSeries {
    AnnualSeries::from_points(projects.into_iter().flat_map(prorate_funding))
}

pub fn publications_by_year<'a>(publications: impl IntoIterator<Item = &'a Publication>) -> AnnualSeries {
    AnnualSeries::from_points(publications.into_iter().map(|p| (p.year, 1)))
}

pub fn first_year_cited(series: &AnnualSeries) -> Option<i32> {
    series.iter().find(|&(_, v)| v >= 1).map(|(year, _)| year)
}

/// First year of the first interior plateau strictly above both neighbours.
pub fn first_peak(series: &AnnualSeries) -> Option<i32> {
    let v = series.values();
    let mut start = 0;
    while start < v.len() {
        let mut end = start + 1;
        while end < v.len() && v[end] == v[start] {
            end += 1;
        }
        if start > 0 && end < v.len() && v[start] > v[start - 1] && v[start] > v[end] {
            return Some(series.year_at(start));
        }
        start = end;
    }
    None
}

/// First year starting `k` consecutive strict increases.
pub fn trend_onset(series: &AnnualSeries, k: usize) -> Result<Option<i32>, StatsError> {
    if k < 1 {
        return Err(StatsError::BadParameter("trend run length must be at least 1".into()));
    }
    let v = series.values();
    let mut run = 0;
    for i in 1..v.len() {
        if v[i] > v[i - 1] {
            run += 1;
            if run == k {
                return Ok(Some(series.year_at(i - k)));
            }
        } else {
            run = 0;
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySummary {
    pub n_projects: u64,
    pub n_publications: u64,
    /// US cents.
    pub funding_total: u64,
    pub yfc: Option<i32>,
    pub first_funding_peak: Option<i32>,
    pub first_pub_peak: Option<i32>,
    pub funding_trend_onset: Option<i32>,
    pub pub_trend_onset: Option<i32>,
}

/// Summary plus the two series it was computed from.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Summarized {
    pub summary: QuerySummary,
    pub funding_by_year: AnnualSeries,
    pub publications_by_year: AnnualSeries,
}

pub fn summarize_with_series<'a>(
    projects: &[&'a Project],
    publications: &[&'a Publication],
    trend_run: NonZeroUsize,
) -> Summarized {
    let funding = funding_by_year(projects.iter().copied());
    let pubs = publications_by_year(publications.iter().copied());
    let k = trend_run.get();
    let summary = QuerySummary {
        n_projects: projects.len() as u64,
        n_publications: publications.len() as u64,
        funding_total: projects.iter().map(|p| p.funding_total).sum(),
        yfc: first_year_cited(&pubs),
        first_funding_peak: first_peak(&funding),
        first_pub_peak: first_peak(&pubs),
        funding_trend_onset: trend_onset(&funding, k).expect("k is nonzero"),
        pub_trend_onset: trend_onset(&pubs, k).expect("k is nonzero"),
    };
    Summarized {
        summary,
        funding_by_year: funding,
        publications_by_year: pubs,
    }
}

pub fn summarize(projects: &[&Project], publications: &[&Publication], trend_run: NonZeroUsize) -> QuerySummary {
    summarize_with_series(projects, publications, trend_run).summary
}

pub const KPI_HEADER: &str =
    "Term | YFC | N, pub | N, prj | $, funding | First Pub Peak | First Prj Peak | Pub trend | Project trend";

const CENTS_PER_MILLION: u64 = 100_000_000;

/// Compact funding for KPI rows: "336M" from one million dollars up,
/// otherwise "$12,345".
pub fn format_funding_compact(cents: u64) -> String {
    if cents >= CENTS_PER_MILLION {
        format!("{}M", (cents + CENTS_PER_MILLION / 2) / CENTS_PER_MILLION)
    } else {
        format!("${}", group_thousands((cents + 50) / 100))
    }
}

pub fn group_thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn year_cell(year: Option<i32>) -> String {
    year.map_or_else(|| "-".to_string(), |y| y.to_string())
}

/// One pipe-delimited KPI row, columns as in [`KPI_HEADER`].
pub fn render_kpi_row(term: &str, q: &QuerySummary) -> String {
    [
        term.to_string(),
        year_cell(q.yfc),
        q.n_publications.to_string(),
        q.n_projects.to_string(),
        format_funding_compact(q.funding_total),
        year_cell(q.first_pub_peak),
        year_cell(q.first_funding_peak),
        year_cell(q.pub_trend_onset),
        year_cell(q.funding_trend_onset),
    ]
    .join(" | ")
}

/// Header plus one row per term, newline-terminated.
pub fn render_kpi_table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a QuerySummary)>) -> String {
    let mut out = String::from(KPI_HEADER);
    out.push('\n');
    for (term, summary) in rows {
        out.push_str(&render_kpi_row(term, summary));
        out.push('\n');
    }
    out
}
