use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wayfarer_core::mcq::McqItem;
use wayfarer_core::plan::{feasible, Itinerary, PlanInstance};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(rel: &str) -> PathBuf {
    root().join("fixtures").join(rel)
}

fn wayfarer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wayfarer")).args(args).env("WAYFARER_LOG", "off").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = wayfarer(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], code: i32) -> String {
    let out = wayfarer(args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stdout));
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn build_table1(out: &Path, seed: &str) {
    let t = fixture("table1");
    ok(&[
        "build-dataset",
        "--pois",
        s(&t.join("pois.jsonl")),
        "--facts",
        s(&t.join("facts.jsonl")),
        "--cot",
        s(&t.join("cot.jsonl")),
        "--out",
        s(out),
        "--seed",
        seed,
        "--augmented",
        "30",
    ]);
}

#[test]
fn help_everywhere_and_usage_errors() {
    let commands = [
        "ingest",
        "build-dataset",
        "split",
        "report",
        "convert-mcq",
        "evaluate",
        "plan",
        "plan-session",
        "serve",
        "sus-score",
    ];
    assert!(ok(&["--help"]).contains("sus-score"));
    for c in commands {
        assert!(ok(&[c, "--help"]).contains("Usage"), "{c}");
    }
    let err = fails(&["teleport"], 2);
    assert!(err.contains("Usage"), "{err}");
    let v = ok(&["--version"]);
    assert!(v.contains("record format v1") && v.contains("trace format v1"), "{v}");
}

#[test]
fn table1_build_report_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let before = snapshot(&fixture("table1"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    build_table1(&a, "7");
    build_table1(&b, "7");
    assert_eq!(snapshot(&a), snapshot(&b), "same argv and inputs must give identical outputs");
    assert_eq!(snapshot(&fixture("table1")), before, "inputs were modified");
    for f in ["pois.jsonl", "qa.jsonl", "cot.jsonl", "manual_queue.jsonl", "rejected.jsonl", "split.json", "report.txt"] {
        assert!(a.join(f).is_file(), "{f}");
    }

    let report = ok(&["report", "--dir", s(&a)]);
    assert!(report.contains("expected 160, got 160"), "{report}");
    assert!(report.contains("expected 102, got 102"), "{report}");
    assert!(report.contains("place-disjointness violations: 0"), "{report}");
    assert!(!report.contains("FAIL"));

    // dropping one text pair breaks the facts x k + augmented identity
    let qa = fs::read_to_string(a.join("qa.jsonl")).unwrap();
    let drop = qa.lines().position(|l| l.contains("\"modality\":\"text\"")).unwrap();
    let kept: String = qa.lines().enumerate().filter(|(i, _)| *i != drop).map(|(_, l)| format!("{l}\n")).collect();
    fs::write(b.join("qa.jsonl"), kept).unwrap();
    fails(&["report", "--dir", s(&b)], 1);

    let c = dir.path().join("c");
    build_table1(&c, "8");
    assert_ne!(fs::read(a.join("split.json")).unwrap(), fs::read(c.join("split.json")).unwrap());
}

#[test]
fn split_writes_elsewhere_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let built = dir.path().join("built");
    build_table1(&built, "1");
    let before = snapshot(&built);
    let (x, y) = (dir.path().join("x"), dir.path().join("y"));
    ok(&["split", "--dir", s(&built), "--ratio", "0.7", "--seed", "5", "--out", s(&x)]);
    ok(&["split", "--dir", s(&built), "--ratio", "0.7", "--seed", "5", "--out", s(&y)]);
    assert_eq!(snapshot(&x), snapshot(&y));
    assert_eq!(snapshot(&built), before);
    let err = fails(&["split", "--dir", s(&built), "--seed", "5", "--out", s(&built)], 1);
    assert!(err.contains("refusing to overwrite"), "{err}");
    let err = fails(&["split", "--dir", s(&built), "--out", s(&x)], 1);
    assert!(err.contains("seed"), "{err}");
}

#[test]
fn mcq_conversion_and_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let built = dir.path().join("built");
    build_table1(&built, "3");
    let qa = built.join("qa.jsonl");
    let pois = built.join("pois.jsonl");
    let items = dir.path().join("items.jsonl");

    let err = fails(&["convert-mcq", "--qa", s(&qa), "--pois", s(&pois), "--out", s(&items)], 1);
    assert!(err.contains("missing seed"), "{err}");
    assert!(!items.exists());

    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 11\n").unwrap();
    ok(&["--config", s(&cfg), "convert-mcq", "--qa", s(&qa), "--pois", s(&pois), "--out", s(&items), "--split", "test"]);
    let again = dir.path().join("again.jsonl");
    ok(&["convert-mcq", "--qa", s(&qa), "--pois", s(&pois), "--out", s(&again), "--split", "test", "--seed", "11"]);
    assert_eq!(fs::read(&items).unwrap(), fs::read(&again).unwrap());

    let parsed: Vec<McqItem> =
        fs::read_to_string(&items).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!parsed.is_empty());
    let preds: String = parsed
        .iter()
        .map(|it| serde_json::json!({"qa_id": it.qa_id, "response": it.correct()}).to_string() + "\n")
        .collect();
    let pred_path = dir.path().join("preds.jsonl");
    fs::write(&pred_path, preds).unwrap();
    let report = dir.path().join("report.txt");
    let json = dir.path().join("report.json");
    let out = ok(&[
        "evaluate",
        "--items",
        s(&items),
        "--predictions",
        s(&pred_path),
        "--out",
        s(&report),
        "--json",
        s(&json),
        "--published",
    ]);
    assert!(out.contains("Full       100.0"), "{out}");
    assert_eq!(fs::read_to_string(&report).unwrap(), out);
    let j: serde_json::Value = serde_json::from_slice(&fs::read(&json).unwrap()).unwrap();
    assert_eq!(j["full_score"], 100.0);
    // one reasoning row carries printed gains that do not follow from its columns
    assert_eq!(out.matches("MISMATCH").count(), 1, "{out}");
    assert!(out.lines().any(|l| l.contains("TraveLLaMA") && l.contains("MISMATCH")));

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"qa_id\":\"nope\",\"response\":\"x\"}\n").unwrap();
    let err = fails(&["evaluate", "--items", s(&items), "--predictions", s(&bad), "--out", s(&report)], 1);
    assert!(err.contains("unknown item"), "{err}");
    let err = fails(
        &["evaluate", "--items", s(&items), "--predictions", s(&pred_path), "--out", s(&report), "--threshold", "3"],
        1,
    );
    assert!(err.contains("matcher_threshold"), "{err}");
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 1\nmatcher_threshold = 0.5\nlambda = -2.0\n").unwrap();
    let err = fails(&["--config", s(&cfg), "report", "--dir", "."], 1);
    assert!(err.contains("lambda"), "{err}");
    let err = fails(&["--config", s(&dir.path().join("absent.toml")), "report"], 1);
    assert!(err.contains("--config"), "{err}");
}

#[test]
fn ingest_canonicalizes_and_reports_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let src = fixture("brooklyn/pois.jsonl");
    let out = dir.path().join("pois.jsonl");
    let msg = ok(&["ingest", "--pois", s(&src), "--out", s(&out)]);
    assert!(msg.starts_with("7 places"), "{msg}");
    let ids: Vec<String> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["id"].as_str().unwrap().to_string())
        .collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);

    let broken = dir.path().join("broken.jsonl");
    let mut text = fs::read_to_string(&src).unwrap();
    text.push_str("{\"id\": \"half\"\n");
    fs::write(&broken, text).unwrap();
    let err = fails(&["ingest", "--pois", s(&broken), "--out", s(&dir.path().join("o.jsonl"))], 1);
    assert!(err.contains("broken.jsonl:8"), "{err}");
    let err = fails(&["ingest", "--pois", s(&src), "--out", s(&src)], 1);
    assert!(err.contains("refusing"), "{err}");
}

#[test]
fn plan_solves_an_instance_file() {
    let dir = tempfile::tempdir().unwrap();
    let pois: Vec<wayfarer_core::model::Poi> = fs::read_to_string(fixture("brooklyn/pois.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let inst: PlanInstance = serde_json::from_value(serde_json::json!({
        "candidates": pois,
        "day": "sat",
        "day_window": {"start": 540, "end": 1080},
        "budget": {"amount": 10000, "currency": "USD"},
        "group_size": 2,
        "locked": ["grimaldis"],
    }))
    .unwrap();
    let path = dir.path().join("instance.json");
    fs::write(&path, serde_json::to_string(&inst).unwrap()).unwrap();
    let mut results = Vec::new();
    for beam in ["1", "8", "unbounded"] {
        let out = dir.path().join(format!("it-{beam}.json"));
        ok(&["plan", "--instance", s(&path), "--beam", beam, "--out", s(&out)]);
        let it: Option<Itinerary> = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
        let it = it.unwrap();
        assert!(feasible(&it, &inst).unwrap().is_ok());
        assert!(it.visits.iter().any(|v| v.poi_id == "grimaldis"));
        results.push(it.total_utility);
    }
    assert!(results[0] <= results[1] && results[1] <= results[2], "{results:?}");
    fails(&["plan", "--instance", s(&path), "--beam", "0", "--out", s(&dir.path().join("x.json"))], 2);
}

#[test]
fn plan_session_on_the_bridge_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let city = fixture("brooklyn");
    let q = "Plan a Saturday around this bridge for 2 people with $150";
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for out in [&a, &b] {
        let text = ok(&["plan-session", "--query", q, "--image", "brooklyn_bridge.jpg", "--city-fixture", s(&city), "--out", s(out)]);
        assert!(text.starts_with("outcome: complete"), "{text}");
        assert!(text.contains("t001 map_locate") && text.contains("t002 hours"), "{text}");
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let text = ok(&["plan-session", "--query", "a day out", "--city-fixture", s(&city)]);
    assert!(text.starts_with("outcome: clarification"), "{text}");
    let err = fails(&["plan-session", "--query", q], 1);
    assert!(err.contains("--city-fixture"), "{err}");
}

#[test]
fn sus_score_reports_groups_and_published_columns() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("responses.csv");
    let mut rows = String::from("participant,system,q1,q2,q3,q4,q5,q6,q7,q8,q9,q10,q11,q12,q13,q14\n");
    for i in 0..20 {
        let hi = 4 + (i % 2);
        let lo = 1 + (i % 2);
        rows.push_str(&format!("p{i},ours,{hi},{lo},{hi},{lo},{hi},{lo},{hi},{lo},{hi},{lo},5,4,5,4\n"));
        rows.push_str(&format!("q{i},baseline,3,3,3,3,3,3,3,3,3,3,3,3,4,4\n"));
    }
    fs::write(&csv, rows).unwrap();
    let out = dir.path().join("study.txt");
    let text = ok(&["sus-score", "--responses", s(&csv), "--group-by", "system", "--out", s(&out), "--published"]);
    assert_eq!(fs::read_to_string(&out).unwrap(), text);
    assert!(text.contains("baseline") && text.contains("mean SUS 50.00"), "{text}");
    assert!(text.contains("Welch t"), "{text}");
    assert!(text.contains("Supplementary items"), "{text}");
    assert!(text.lines().any(|l| l.contains("TraveLLaMA") && l.contains("item sum 83.5") && l.contains("INCONSISTENT")));
    assert!(text.lines().any(|l| l.contains("Claude 3.5") && l.contains("item sum 76.3") && l.contains("consistent")));

    fs::write(&csv, "system,q1,q2,q3\nA,1,2,3\n").unwrap();
    fails(&["sus-score", "--responses", s(&csv)], 1);
}
