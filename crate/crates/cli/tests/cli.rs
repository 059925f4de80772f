mod support;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

use support::{fixture_dir, FIXTURE_FEEDS, PD1_ROW};

const ENV_KEYS: [&str; 7] = [
    "GRANTTREND_CONFIG",
    "GRANTTREND_DATA_DIR",
    "GRANTTREND_RATE_TABLE",
    "GRANTTREND_TREND_K",
    "GRANTTREND_PORT",
    "GRANTTREND_BIND",
    "GRANTTREND_API_TOKEN",
];

fn granttrend(data_dir: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_granttrend"));
    for key in ENV_KEYS {
        cmd.env_remove(key);
    }
    cmd.arg("--data-dir").arg(data_dir);
    cmd
}

fn run(data_dir: &Path, args: &[&str]) -> Output {
    granttrend(data_dir).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn ingest_fixture(data_dir: &Path) {
    let rates = fixture_dir().join("rates.json");
    for (source, file) in FIXTURE_FEEDS {
        let out = run(
            data_dir,
            &[
                "--rates",
                rates.to_str().unwrap(),
                "ingest",
                "--source",
                source.as_str(),
                "--input",
                fixture_dir().join(file).to_str().unwrap(),
            ],
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

const TWO_RECORDS: &str = concat!(
    r#"{"source_id":"G-1","kind":"project","fetched_at":"2024-05-01T00:00:00Z","payload":{"title":"Malaria vaccine","start_date":"2021-01-01","end_date":"2022-12-31","amount":"1000.00","currency":"USD"}}"#,
    "\n",
    r#"{"source_id":"G-2","kind":"project","fetched_at":"2024-05-01T00:00:00Z","payload":{"title":"Malaria vectors","start_date":"2022-01-01","end_date":"2022-12-31","amount":"10.00","currency":"USD"}}"#,
    "\n",
);

#[test]
fn ingest_reports_counts_and_replay_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let feed = tmp.path().join("nsf.ndjson");
    fs::write(&feed, TWO_RECORDS).unwrap();
    let data = tmp.path().join("data");
    let args = ["ingest", "--source", "nsf", "--input", feed.to_str().unwrap()];

    let first = run(&data, &args);
    assert_eq!(first.status.code(), Some(0));
    assert_eq!(stdout(&first), "applied=2 ignored=0 errors=0\n");
    let snapshot = dir_contents(&data.join("store"));

    let again = run(&data, &args);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(stdout(&again), "applied=0 ignored=2 errors=0\n");
    assert_eq!(dir_contents(&data.join("store")), snapshot);
}

#[test]
fn malformed_feed_exits_1_and_leaves_the_store_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let good = tmp.path().join("good.ndjson");
    fs::write(&good, TWO_RECORDS).unwrap();
    assert!(run(&data, &["ingest", "--source", "nsf", "--input", good.to_str().unwrap()]).status.success());
    let before = dir_contents(&data.join("store"));

    let bad = tmp.path().join("bad.ndjson");
    let mut text = TWO_RECORDS.replace("G-2", "G-3").replace("G-1", "G-4");
    text.push_str("{\"source_id\": 7}\n");
    fs::write(&bad, text).unwrap();
    let out = run(&data, &["ingest", "--source", "nsf", "--input", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    assert_eq!(dir_contents(&data.join("store")), before);
}

#[test]
fn environment_failures_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let missing = tmp.path().join("nope.ndjson");
    let out = run(&data, &["ingest", "--source", "nih", "--input", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let feed = tmp.path().join("feed.ndjson");
    fs::write(&feed, TWO_RECORDS).unwrap();
    assert!(run(&data, &["ingest", "--source", "nsf", "--input", feed.to_str().unwrap()]).status.success());
    let segment = data.join("store/projects.ndjson");
    let mut bytes = fs::read(&segment).unwrap();
    bytes[10] ^= 1;
    fs::write(&segment, bytes).unwrap();
    for args in [&["index", "rebuild"][..], &["query", "malaria"]] {
        let out = run(&data, args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
    }
}

#[test]
fn usage_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(tmp.path(), &["ingest", "--source", "arxiv", "--input", "x"]).status.code(), Some(1));
    assert_eq!(run(tmp.path(), &["--trend-k", "0", "query", "x"]).status.code(), Some(1));
    assert_eq!(run(tmp.path(), &["query", "  ;; "]).status.code(), Some(1));
}

#[test]
fn query_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ingest_fixture(&data);

    let out = run(&data, &["query", "PD-1"]);
    assert_eq!(stdout(&out), format!("{PD1_ROW}\n"));

    let out = run(&data, &["query", "zebrafish"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "zebrafish | - | 0 | 0 | $0 | - | - | - | -\n");

    let out = run(&data, &["query", "pd-1", "--format", "json"]);
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["n_projects", "n_publications", "funding_total", "yfc", "first_funding_peak", "first_pub_peak", "funding_trend_onset", "pub_trend_onset"] {
        assert!(json["summary"].get(key).is_some(), "{key}");
    }
    assert_eq!(json["summary"]["pub_trend_onset"], 2008);

    // With k = 1 the first single increase counts: 1993 -> 1994 for
    // publications, 2000 -> 2001 for funding.
    let out = run(&data, &["--trend-k", "1", "query", "pd-1"]);
    assert_eq!(stdout(&out), "pd-1 | 1992 | 50 | 11 | $3,800 | 1996 | 2002 | 1993 | 2000\n");
}

#[test]
fn rebuild_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    let out = run(&empty, &["index", "rebuild"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "indexed projects=0 publications=0\n");

    let data = tmp.path().join("data");
    ingest_fixture(&data);
    assert!(run(&data, &["index", "rebuild"]).status.success());
    let first = fs::read(data.join("index.ndjson")).unwrap();
    let out = run(&data, &["index", "rebuild"]);
    assert_eq!(stdout(&out), "indexed projects=15 publications=60\n");
    assert_eq!(fs::read(data.join("index.ndjson")).unwrap(), first);
    assert!(!data.join(".index.ndjson.tmp").exists());
}

#[test]
fn config_file_and_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("from-config");
    ingest_fixture(&data);
    let config = tmp.path().join("granttrend.toml");
    fs::write(&config, "data_dir = \"from-config\"\ntrend_k = 1\n").unwrap();

    let mut cmd = Command::new(env!("CARGO_BIN_EXE_granttrend"));
    for key in ENV_KEYS {
        cmd.env_remove(key);
    }
    let out = cmd
        .env("GRANTTREND_CONFIG", &config)
        .args(["query", "pd-1"])
        .output()
        .unwrap();
    assert!(stdout(&out).ends_with("| 1993 | 2000\n"), "{}", stdout(&out));

    let out = Command::new(env!("CARGO_BIN_EXE_granttrend"))
        .env("GRANTTREND_CONFIG", &config)
        .env("GRANTTREND_TREND_K", "3")
        .env_remove("GRANTTREND_DATA_DIR")
        .args(["query", "pd-1"])
        .output()
        .unwrap();
    assert_eq!(stdout(&out), "pd-1 | 1992 | 50 | 11 | $3,800 | 1996 | 2002 | 2008 | 2007\n");

    fs::write(&config, "trend_k = \"three\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_granttrend"))
        .env("GRANTTREND_CONFIG", &config)
        .args(["query", "pd-1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn feed_manifest_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let feed = tmp.path().join("nsf-2024-05.ndjson");
    fs::write(&feed, TWO_RECORDS).unwrap();
    let data = tmp.path().join("data");
    let out = run(&data, &["feed-manifest", "--source", "nsf", "--input", feed.to_str().unwrap()]);
    let manifest: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(manifest["feed_id"], "nsf-2024-05");
    assert_eq!(manifest["record_count"], 2);
    let path = tmp.path().join("manifest.json");
    fs::write(&path, &out.stdout).unwrap();

    let ingest = |source: &str| {
        run(
            &data,
            &["ingest", "--source", source, "--input", feed.to_str().unwrap(), "--manifest", path.to_str().unwrap()],
        )
    };
    assert_eq!(ingest("nih").status.code(), Some(1));
    assert_eq!(ingest("nsf").status.code(), Some(0));
}

struct Server {
    child: Child,
    addr: String,
}

impl Server {
    fn start(data_dir: &Path, extra: &[&str]) -> Server {
        let mut child = granttrend(data_dir)
            .args(["serve", "--port", "0"])
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line
            .trim()
            .strip_prefix("listening on http://")
            .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
            .to_string();
        Server { child, addr }
    }

    fn get(&self, path: &str, token: Option<&str>) -> (u16, Value) {
        let mut stream = TcpStream::connect(&self.addr).unwrap();
        let auth = token.map(|t| format!("Authorization: Bearer {t}\r\n")).unwrap_or_default();
        write!(stream, "GET {path} HTTP/1.1\r\nHost: {}\r\n{auth}Connection: close\r\n\r\n", self.addr).unwrap();
        let mut raw = String::new();
        stream.read_to_string(&mut raw).unwrap();
        let status = raw[9..12].parse().unwrap();
        let body = raw.split_once("\r\n\r\n").unwrap().1;
        (status, serde_json::from_str(body).unwrap())
    }

    fn signal(&self, name: &str) {
        let ok = Command::new("kill").args(["-s", name, &self.child.id().to_string()]).status().unwrap();
        assert!(ok.success());
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[test]
#[cfg(unix)]
fn serve_answers_reloads_and_stops_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ingest_fixture(&data);
    let mut server = Server::start(&data, &[]);

    let (status, overview) = server.get("/api/overview", None);
    assert_eq!(status, 200);
    assert_eq!(overview["n_projects"], 15);
    let (status, body) = server.get("/api/search?q=", None);
    assert_eq!((status, body["error"].as_str()), (400, Some("EmptyQuery")));

    let feed = tmp.path().join("more.ndjson");
    fs::write(&feed, TWO_RECORDS).unwrap();
    let rates = fixture_dir().join("rates.json");
    let out = run(
        &data,
        &["--rates", rates.to_str().unwrap(), "ingest", "--source", "nsf", "--input", feed.to_str().unwrap()],
    );
    assert_eq!(stdout(&out), "applied=2 ignored=0 errors=0\n");
    assert_eq!(server.get("/api/overview", None).1["n_projects"], 15);
    server.signal("HUP");
    let mut reloaded = false;
    for _ in 0..100 {
        if server.get("/api/overview", None).1["n_projects"] == 17 {
            reloaded = true;
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    assert!(reloaded, "SIGHUP did not reload the catalog");

    server.signal("TERM");
    let status = server.child.wait().unwrap();
    assert!(status.success(), "{status:?}");
}

#[test]
#[cfg(unix)]
fn serve_enforces_the_configured_token() {
    let tmp = tempfile::tempdir().unwrap();
    let server = Server::start(tmp.path(), &["--token", "hunter2"]);
    assert_eq!(server.get("/api/overview", None).0, 401);
    assert_eq!(server.get("/api/overview", Some("wrong")).0, 401);
    let (status, body) = server.get("/api/overview", Some("hunter2"));
    assert_eq!(status, 200);
    assert_eq!(body["n_projects"], 0);
}
