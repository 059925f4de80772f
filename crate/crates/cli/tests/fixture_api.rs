mod support;

use granttrend_cli::commands::cmd_query;
use granttrend_cli::QueryFormat;
use serde_json::Value;

use support::{check_golden, fixture_router, get, ingest_fixture, PD1_ROW};

#[tokio::test]
async fn golden_responses_are_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let settings = ingest_fixture(dir.path());
    let app = fixture_router(&settings);
    check_golden(&app).await.unwrap();
}

#[tokio::test]
async fn engineered_kpis_via_search_and_query() {
    let dir = tempfile::tempdir().unwrap();
    let settings = ingest_fixture(dir.path());
    assert_eq!(cmd_query(&settings, "PD-1", QueryFormat::Row).unwrap(), PD1_ROW);

    let app = fixture_router(&settings);
    let (_, body) = get(&app, "/api/search?q=PD-1").await;
    let body: Value = serde_json::from_slice(&body).unwrap();
    let s = &body["summary"];
    assert_eq!(s["yfc"], 1992);
    assert_eq!(s["first_pub_peak"], 1996);
    assert_eq!(s["pub_trend_onset"], 2008);
    assert_eq!(s["first_funding_peak"], 2002);
    assert_eq!(s["funding_trend_onset"], 2007);
    assert_eq!(s["n_publications"], 50);
    assert_eq!(s["n_projects"], 11);
    assert_eq!(s["funding_total"], 380_000);
}

#[tokio::test]
async fn child_table_has_three_linked_publications() {
    let dir = tempfile::tempdir().unwrap();
    let settings = ingest_fixture(dir.path());
    let app = fixture_router(&settings);
    let (_, body) = get(&app, "/api/projects/P:nih:PD1-2002/publications").await;
    let page: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!((&page["from"], &page["to"], &page["total"]), (&1.into(), &3.into(), &3.into()));
    // The cited grant number links one publication to the 2008 project.
    let (_, body) = get(&app, "/api/projects/P:nih:PD1-2008/publications").await;
    let page: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(page["rows"][0]["id"], "B:pubmed:30000040");
}

#[tokio::test]
async fn euro_funding_is_converted_at_the_configured_rate() {
    let dir = tempfile::tempdir().unwrap();
    let settings = ingest_fixture(dir.path());
    let app = fixture_router(&settings);
    let (_, body) = get(&app, "/api/projects/P:cordis:101000123").await;
    let row: Value = serde_json::from_slice(&body).unwrap();
    // 250,000.00 EUR at 1.0850 USD/EUR.
    assert_eq!(row["funding_cents"], 27_125_000);
    assert_eq!(row["funding_display"], "$ 271,250");
    assert_eq!(row["currency_original"], "EUR");
}
