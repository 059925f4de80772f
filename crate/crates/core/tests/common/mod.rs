//! Brute-force reference implementations used to check the library.
//!
//! Each oracle restates a definition as directly as possible and shares no
//! code with the implementation it checks.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, NaiveDate};
use granttrend_core::index::tokenize;
use granttrend_core::model::{Project, Publication};

/// Offset of the first year with a nonzero count.
pub fn year_cited_oracle(values: &[u64]) -> Option<usize> {
    (0..values.len()).find(|&i| values[i] >= 1)
}

/// Offset of the first peak: tries every candidate window `[i, j]` and
/// checks that it is a constant run with strictly lower values on both
/// sides, inside the series.
pub fn first_peak_oracle(values: &[u64]) -> Option<usize> {
    let n = values.len();
    let mut best: Option<usize> = None;
    for i in 0..n {
        for j in i..n {
            let constant = values[i..=j].iter().all(|&v| v == values[i]);
            let interior = i >= 1 && j + 1 < n;
            if constant && interior && values[i - 1] < values[i] && values[j + 1] < values[i] {
                best = Some(best.map_or(i, |b: usize| b.min(i)));
            }
        }
    }
    best
}

/// Offset of the first window of `k` strict increases.
pub fn trend_oracle(values: &[u64], k: usize) -> Option<usize> {
    (0..values.len()).find(|&y| y + k < values.len() && (0..k).all(|t| values[y + t + 1] > values[y + t]))
}

/// Days of a project period falling in each calendar year, counted one day
/// at a time.
pub fn days_per_year(start: NaiveDate, end: NaiveDate) -> BTreeMap<i32, u64> {
    let mut out = BTreeMap::new();
    let mut day = start;
    while day <= end {
        *out.entry(day.year()).or_insert(0) += 1;
        day = day.succ_opt().unwrap();
    }
    out
}

/// Checks a proration against the day-weighted exact shares: the parts sum
/// to the total, each part is the floor or ceiling of its exact share, and
/// the rounded-up years are exactly the ones with the largest fractional
/// remainders (earlier year first on ties).
pub fn check_proration(total: u64, start: NaiveDate, end: NaiveDate, parts: &[(i32, u64)]) -> Result<(), String> {
    let days = days_per_year(start, end);
    let years: Vec<i32> = days.keys().copied().collect();
    let got_years: Vec<i32> = parts.iter().map(|p| p.0).collect();
    if years != got_years {
        return Err(format!("years {got_years:?} != {years:?}"));
    }
    let sum: u64 = parts.iter().map(|p| p.1).sum();
    if sum != total {
        return Err(format!("parts sum to {sum}, expected {total}"));
    }
    let span: u128 = days.values().map(|&d| d as u128).sum();
    let exact: Vec<(u128, u128)> = days
        .values()
        .map(|&d| {
            let num = total as u128 * d as u128;
            (num / span, num % span)
        })
        .collect();
    let floor_sum: u128 = exact.iter().map(|e| e.0).sum();
    let bumps = (total as u128 - floor_sum) as usize;
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| exact[b].1.cmp(&exact[a].1).then(a.cmp(&b)));
    let bumped: BTreeSet<usize> = order.into_iter().take(bumps).collect();
    for (i, &(_, part)) in parts.iter().enumerate() {
        let expected = exact[i].0 + u128::from(bumped.contains(&i));
        if part as u128 != expected {
            return Err(format!("year {} got {part}, expected {expected}", years[i]));
        }
    }
    Ok(())
}

/// Token sets of every document, computed independently of the index.
pub struct ScanCorpus {
    docs: Vec<(String, BTreeSet<String>)>,
}

impl ScanCorpus {
    pub fn new<'a, T: 'a>(docs: impl IntoIterator<Item = &'a T>, text: impl Fn(&T) -> (String, String, String)) -> Self {
        let mut docs: Vec<(String, BTreeSet<String>)> = docs
            .into_iter()
            .map(|doc| {
                let (id, title, abstract_text) = text(doc);
                let tokens = tokenize(&title).into_iter().chain(tokenize(&abstract_text)).collect();
                (id, tokens)
            })
            .collect();
        docs.sort_by(|a, b| a.0.cmp(&b.0));
        ScanCorpus { docs }
    }

    /// Ids of every document containing all query tokens, by linear scan.
    pub fn search(&self, query: &[String]) -> Vec<String> {
        self.docs
            .iter()
            .filter(|(_, tokens)| query.iter().all(|q| tokens.contains(q)))
            .map(|(id, _)| id.clone())
            .collect()
    }
}

pub fn project_text(p: &Project) -> (String, String, String) {
    (p.id.clone(), p.title.clone(), p.abstract_text.clone())
}

pub fn publication_text(p: &Publication) -> (String, String, String) {
    (p.id.clone(), p.title.clone(), p.abstract_text.clone())
}

/// All (project, publication) pairs where the publication cites the
/// project's grant number, by nested loops.
pub fn grant_match_oracle(projects: &[Project], publications: &[Publication]) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for p in projects {
        for b in publications {
            if let Some(g) = &p.grant_number {
                if b.grant_numbers_cited.iter().any(|c| c == g) {
                    out.insert((p.id.clone(), b.id.clone()));
                }
            }
        }
    }
    out
}
