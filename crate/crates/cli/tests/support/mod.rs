//! Fixture corpus and golden-response helpers shared by the CLI test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use granttrend_cli::commands::cmd_ingest;
use granttrend_cli::{DataDir, Settings};
use granttrend_core::api::http::{router, AppState};
use granttrend_core::Source;
use http_body_util::BodyExt;
use tower::ServiceExt;

/// Feeds in ingest order.
pub const FIXTURE_FEEDS: [(Source, &str); 4] = [
    (Source::Nih, "nih.ndjson"),
    (Source::Cordis, "cordis.ndjson"),
    (Source::Pubmed, "pubmed.ndjson"),
    (Source::Linkfeed, "links.ndjson"),
];

/// KPI row the fixture corpus was engineered to produce.
pub const PD1_ROW: &str = "PD-1 | 1992 | 50 | 11 | $3,800 | 1996 | 2002 | 2008 | 2007";

/// Requests whose response bodies are frozen under `tests/golden/`.
pub const GOLDEN: [(&str, &str, u16); 9] = [
    ("overview", "/api/overview", 200),
    ("search_pd1", "/api/search?q=PD-1", 200),
    (
        "search_pd1_paged",
        "/api/search?q=pd-1&p_sort=funding:desc&p_size=5&p_page=2&b_sort=year:desc&b_size=20&b_page=3",
        200,
    ),
    ("search_ctla4_filtered", "/api/search?q=ctla-4&p_filter=leiden&b_filter=2001", 200),
    ("search_two_terms", "/api/search?q=pd-l1%20ctla-4", 200),
    ("project", "/api/projects/P:nih:PD1-2002", 200),
    ("project_publications", "/api/projects/P:nih:PD1-2002/publications?sort=year:desc", 200),
    ("error_empty_query", "/api/search?q=%20--%20", 400),
    ("error_unknown_project", "/api/projects/P:nih:missing", 404),
];

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixture_dir() -> PathBuf {
    crate_dir().join("tests/fixtures")
}

pub fn golden_dir() -> PathBuf {
    crate_dir().join("tests/golden")
}

pub fn fixture_settings(data_dir: &Path) -> Settings {
    let mut settings = Settings::with_data_dir(data_dir);
    settings.rate_table = Some(fixture_dir().join("rates.json"));
    settings
}

/// Ingest every fixture feed into `data_dir`.
pub fn ingest_fixture(data_dir: &Path) -> Settings {
    let settings = fixture_settings(data_dir);
    for (source, file) in FIXTURE_FEEDS {
        let report = cmd_ingest(&settings, source, &fixture_dir().join(file), None).expect("fixture ingests");
        assert_eq!(report.errors, 0, "{file}");
    }
    settings
}

pub fn fixture_router(settings: &Settings) -> Router {
    let catalog = DataDir::new(&settings.data_dir).catalog(settings).expect("catalog loads");
    router(AppState::new(catalog, None))
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::get(uri).body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

/// Compare every golden request against its frozen body. With
/// `GRANTTREND_BLESS=1` the files are rewritten instead.
pub async fn check_golden(app: &Router) -> Result<(), String> {
    let bless = std::env::var_os("GRANTTREND_BLESS").is_some_and(|v| v == "1");
    let mut failures = Vec::new();
    for (name, uri, status) in GOLDEN {
        let (got_status, body) = get(app, uri).await;
        if got_status.as_u16() != status {
            failures.push(format!("{name}: status {got_status}, expected {status}"));
            continue;
        }
        let path = golden_dir().join(format!("{name}.json"));
        if bless {
            std::fs::create_dir_all(golden_dir()).unwrap();
            std::fs::write(&path, &body).unwrap();
            continue;
        }
        match std::fs::read(&path) {
            Ok(want) if want == body => {}
            Ok(_) => failures.push(format!("{name}: body differs from {}", path.display())),
            Err(e) => failures.push(format!("{name}: {}: {e}", path.display())),
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(failures.join("; "))
    }
}
