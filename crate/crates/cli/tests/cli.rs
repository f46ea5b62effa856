use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

const NOW: &str = "1767225600000";

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn har(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

/// The binary, isolated from the caller's environment and config.
fn cmd(dir: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_routegraph"));
    c.current_dir(dir)
        .env("XDG_CONFIG_HOME", dir.join("xdg"))
        .env("HOME", dir)
        .env_remove("ROUTEGRAPH_REGISTRY")
        .env_remove("ROUTEGRAPH_WALLET");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    cmd(dir).args(args).output().expect("binary runs")
}

fn ok_json(dir: &Path, args: &[&str]) -> Value {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited")
}

fn seeded_registry(dir: &Path) {
    for name in ["shop", "news", "weather"] {
        let h = har(&format!("{name}.har"));
        ok_json(dir, &["--now", NOW, "distill", h.to_str().unwrap(), "--out", name]);
    }
    for skill in ["shop", "news", "weather/api.weather.test", "weather/www.weather.test"] {
        ok_json(dir, &["--now", NOW, "--seed", "1", "publish", skill]);
    }
}

#[test]
fn distill_matches_golden_skill() {
    let tmp = tempfile::tempdir().unwrap();
    let h = har("shop.har");
    let v = ok_json(tmp.path(), &["--now", NOW, "distill", h.to_str().unwrap(), "--out", "skill"]);
    assert_eq!(v["skills"][0]["domain"], "shop.example.com");
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/shop");
    for f in ["manifest.md", "endpoints.json", "auth.local.json", "api.ts"] {
        let got = std::fs::read_to_string(tmp.path().join("skill").join(f)).unwrap();
        let want = std::fs::read_to_string(golden.join(f)).unwrap();
        assert_eq!(got, want, "{f} differs from golden");
    }
    // secrets stay in the vault
    let vault = std::fs::read_to_string(tmp.path().join(".routegraph/vault.json")).unwrap();
    assert!(vault.contains("sess-91ab77"));
    for f in ["manifest.md", "endpoints.json", "auth.local.json"] {
        assert!(!std::fs::read_to_string(tmp.path().join("skill").join(f)).unwrap().contains("sess-91ab77"));
    }
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let mode = std::fs::metadata(tmp.path().join("skill/auth.local.json")).unwrap().permissions().mode();
        assert_eq!(mode & 0o777, 0o600);
    }
}

#[test]
fn ingest_reports_kept_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let v = ok_json(tmp.path(), &["ingest", har("shop.har").to_str().unwrap()]);
    assert_eq!(v["entries"], 12);
    assert_eq!(v["kept"].as_array().unwrap().len(), 4);
    let dropped: u64 = v["dropped"].as_object().unwrap().values().map(|n| n.as_u64().unwrap()).sum();
    assert_eq!(dropped, 8);
}

#[test]
fn empty_ledger_reports_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["ledger"]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "{\"balances\":{},\"conserved\":true,\"entries\":0}\n");
}

#[test]
fn search_ranks_with_components() {
    let tmp = tempfile::tempdir().unwrap();
    seeded_registry(tmp.path());
    let v = ok_json(tmp.path(), &["--now", NOW, "--seed", "2", "search", "product price catalogue", "-k", "3"]);
    let hits = v["hits"].as_array().unwrap();
    assert_eq!(hits.len(), 3);
    assert_eq!(hits[0]["domain"], "shop.example.com");
    let mut last = f64::INFINITY;
    for h in hits {
        let c = &h["components"];
        let f = |k: &str| c[k].as_f64().unwrap();
        let composite = 0.4 * f("similarity") + 0.3 * f("reliability") + 0.15 * f("freshness") + 0.15 * f("verification");
        assert!((h["composite"].as_f64().unwrap() - composite).abs() < 1e-12);
        let rank = h["rank_score"].as_f64().unwrap();
        assert!(rank <= last);
        last = rank;
    }
    let receipt = v["receipt"].as_array().unwrap();
    assert_eq!(receipt.len(), 1);
    assert_eq!(receipt[0]["kind"], "tier3");
    assert_eq!(receipt[0]["amount"], 1000);

    let ledger = ok_json(tmp.path(), &["ledger", "--party", "platform"]);
    assert_eq!(ledger["balance"], 1000);
}

#[test]
fn install_pays_contributor_split() {
    let tmp = tempfile::tempdir().unwrap();
    seeded_registry(tmp.path());
    let hits = ok_json(tmp.path(), &["--now", NOW, "search", "weather forecast", "-k", "1"]);
    let id = hits["hits"][0]["id"].as_str().unwrap().to_owned();
    let price = hits["hits"][0]["install_price"].as_u64().unwrap();
    let v = ok_json(tmp.path(), &["--now", NOW, "install", &id, "--out", "installed"]);
    assert_eq!(v["price"].as_u64().unwrap(), price);
    assert!(tmp.path().join("installed/endpoints.json").exists());
    let ledger = ok_json(tmp.path(), &["ledger"]);
    assert_eq!(ledger["conserved"], true);
    assert_eq!(ledger["balances"]["marketplace"], 0);
    // the CLI's own wallet both paid and contributed every skill
    let agent = ledger["balances"]["local-agent"].as_i64().unwrap();
    let platform = ledger["balances"]["platform"].as_i64().unwrap();
    let treasury = ledger["balances"].get("treasury").and_then(Value::as_i64).unwrap_or(0);
    assert_eq!(agent + platform + treasury, 0);
}

#[test]
fn resolve_takes_all_three_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let sites = fixture("sites.json");
    let sites = sites.to_str().unwrap();
    let args = |id: &'static str| {
        vec!["--now", NOW, "resolve", "book price details", "--domain", "books.sim", "--param", id, "--sites", sites]
    };
    let first = ok_json(tmp.path(), &args("id=55"));
    assert_eq!(first["timing"]["source"], "discovery");
    assert_eq!(first["data"]["id"], 55);
    let again = ok_json(tmp.path(), &args("id=55"));
    assert_eq!(again["timing"]["source"], "cache");
    assert_eq!(again["fees_paid"], serde_json::json!([]));

    // a second agent with its own state buys the published skill
    let other = tmp.path().join("other");
    std::fs::create_dir(&other).unwrap();
    let reg = tmp.path().join(".routegraph/registry");
    let mut c = cmd(&other);
    c.env("ROUTEGRAPH_REGISTRY", &reg).args(args("id=56"));
    let out = c.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let graph: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(graph["timing"]["source"], "graph");
    let kinds: Vec<&str> = graph["fees_paid"].as_array().unwrap().iter().map(|f| f["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["tier3", "tier1"]);
}

#[test]
fn replays_are_byte_identical() {
    let script: Vec<Vec<String>> = {
        let h = har("shop.har").display().to_string();
        let sites = fixture("sites.json").display().to_string();
        let fleet = fixture("fleet.json").display().to_string();
        let base = ["--now", NOW, "--seed", "9"].map(String::from).to_vec();
        let with = |rest: &[&str]| base.iter().cloned().chain(rest.iter().map(|s| s.to_string())).collect();
        vec![
            with(&["ingest", &h]),
            with(&["distill", &h, "--out", "skill"]),
            with(&["publish", "skill"]),
            with(&["search", "product price", "-k", "2"]),
            with(&["resolve", "forecast for a city", "--domain", "weather.sim", "--param", "id=7", "--sites", &sites]),
            with(&["verify", "--once", "--sites", &sites]),
            with(&["ledger"]),
            with(&["simulate", &fleet]),
            with(&["bench", &fleet]),
        ]
    };
    let transcript = || {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = Vec::new();
        for args in &script {
            let o = cmd(tmp.path()).args(args).output().unwrap();
            assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
            out.push(o.stdout);
        }
        out
    };
    let a = transcript();
    assert_eq!(a, transcript());
    // one compact JSON document per command
    assert!(a.iter().all(|o| o.iter().filter(|b| **b == b'\n').count() == 1 && o.ends_with(b"\n")));
}

#[test]
fn pretty_changes_layout_only() {
    let tmp = tempfile::tempdir().unwrap();
    let compact = run(tmp.path(), &["ingest", har("weather.har").to_str().unwrap()]);
    let pretty = run(tmp.path(), &["--pretty", "ingest", har("weather.har").to_str().unwrap()]);
    assert!(pretty.stdout.len() > compact.stdout.len());
    let a: Value = serde_json::from_slice(&compact.stdout).unwrap();
    let b: Value = serde_json::from_slice(&pretty.stdout).unwrap();
    assert_eq!(a, b);
}

#[test]
fn error_classes_have_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let sites = fixture("sites.json");
    let cases: Vec<(Vec<&str>, i32, &str)> = vec![
        (vec!["ingest", "missing.har"], 3, "input"),
        (vec!["verify"], 2, "usage"),
        (vec!["--registry", "http://127.0.0.1:9/", "ledger"], 2, "usage"),
        (vec!["search", "x", "-k", "0"], 2, "usage"),
        (vec!["install", "sk_0000000000000000"], 5, "not_found"),
        (vec!["search", "x", "--budget", "10"], 6, "payment"),
        (vec!["resolve", "stock quotes", "--domain", "nowhere.sim", "--sites", sites.to_str().unwrap()], 7, "unresolvable"),
        (vec!["--registry", "http://127.0.0.1:9/", "search", "x"], 8, "network"),
    ];
    for (args, want, class) in cases {
        let out = run(d, &args);
        assert_eq!(code(&out), want, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        let err: Value = serde_json::from_slice(&out.stderr).expect("stderr is json");
        assert_eq!(err["error"], class, "{args:?}");
        assert!(out.stdout.is_empty());
    }
    // malformed flags are rejected by the parser with the usage code
    assert_eq!(code(&run(d, &["resolve", "x", "--param", "novalue"])), 2);
}

#[test]
fn validation_failure_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let h = har("shop.har");
    ok_json(tmp.path(), &["--now", NOW, "distill", h.to_str().unwrap(), "--out", "skill"]);
    let path = tmp.path().join("skill/endpoints.json");
    let mut pkg: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    pkg["endpoints"] = serde_json::json!([]);
    std::fs::write(&path, pkg.to_string()).unwrap();
    let out = run(tmp.path(), &["publish", "skill"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn env_overrides_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::create_dir_all(d.join("xdg/routegraph")).unwrap();
    std::fs::write(
        d.join("xdg/routegraph/config.toml"),
        "registry = \"from-file\"\nagent_id = \"carol\"\n[fees]\nf_search = 2500\nf_install = 10000\n",
    )
    .unwrap();
    let h = har("shop.har");
    ok_json(d, &["--now", NOW, "distill", h.to_str().unwrap(), "--out", "skill"]);
    ok_json(d, &["--now", NOW, "publish", "skill"]);
    assert!(d.join("from-file/records").is_dir());

    let out = cmd(d).env("ROUTEGRAPH_REGISTRY", d.join("from-env")).args(["--now", NOW, "publish", "skill"]).output().unwrap();
    assert!(out.status.success());
    assert!(d.join("from-env/records").is_dir());

    let v = ok_json(d, &["--now", NOW, "search", "product", "-k", "1"]);
    assert_eq!(v["receipt"][0]["amount"], 2500);
    assert_eq!(v["receipt"][0]["payer"], "carol");

    // a config file that does not parse is an input error
    std::fs::write(d.join("bad.toml"), "registry = [").unwrap();
    assert_eq!(code(&run(d, &["--config", "bad.toml", "ledger"])), 3);
}

#[test]
fn simulate_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let fleet = fixture("fleet.json");
    let v = ok_json(tmp.path(), &["simulate", fleet.to_str().unwrap(), "--csv", "steps.csv"]);
    assert_eq!(v["resolves"], 15);
    assert_eq!(v["ledger_conserved"], true);
    let csv = std::fs::read_to_string(tmp.path().join("steps.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16);

    let par = ok_json(tmp.path(), &["bench", fleet.to_str().unwrap()]);
    let seq = ok_json(tmp.path(), &["bench", fleet.to_str().unwrap(), "--sequential"]);
    assert_eq!(par, seq);
    assert!(par["summary"]["speedup"].as_f64().unwrap() >= 3.0);
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_exposes_gated_registry() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let h = har("shop.har");
    ok_json(d, &["--now", NOW, "distill", h.to_str().unwrap(), "--out", "skill"]);
    let mut child = cmd(d).args(["serve", "--addr", "127.0.0.1:0", "--no-verify"]).stdout(Stdio::piped()).spawn().unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let _server = Server(child);
    let addr = serde_json::from_str::<Value>(&line).unwrap()["listening"].as_str().unwrap().to_owned();
    let url = format!("http://{addr}");

    // publishing over the socket, then searching as a paying remote client
    let out = run(d, &["--registry", &url, "publish", "skill"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let unpaid = ureq::get(&format!("{url}/v1/skills/search?q=product&k=1")).call();
    let Err(ureq::Error::Status(402, resp)) = unpaid else { panic!("search was not gated") };
    let terms: Value = serde_json::from_str(&resp.into_string().unwrap()).unwrap();
    assert_eq!(terms["amount"], 1000);
    assert_eq!(terms["resource"], "/v1/skills/search?q=product&k=1");

    // serve enrolled the default wallet, which this client shares
    let v = ok_json(d, &["--registry", &url, "search", "product", "-k", "1"]);
    assert_eq!(v["hits"][0]["domain"], "shop.example.com");

    let bad = ureq::post(&format!("{url}/v1/intent/resolve")).send_string("not json");
    assert!(matches!(bad, Err(ureq::Error::Status(400, _))));
}
