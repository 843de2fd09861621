use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fragsearch"));
    c.env_remove("FRAGSEARCH_INDEX");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a 100-doc fixture and builds it.
fn fixture(dir: &Path) {
    let o = run(&["fixture", "--out", p(dir), "--docs", "100", "--queries", "10", "--dim", "64", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&[
        "build",
        "--input",
        p(&dir.join("fragments.jsonl")),
        "--embeddings",
        p(&dir.join("embeddings.bin")),
        "--out",
        p(&dir.join("index")),
        "--dim",
        "64",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("100 docs"), "{}", stdout(&o));
}

#[test]
fn build_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("index/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["doc_count"], 100);
    assert_eq!(m["k"], 8);
    assert_eq!(m["max_vectors"], 768);
}

#[test]
fn build_names_unknown_embedding_id() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(&["fixture", "--out", p(d), "--docs", "20", "--queries", "2", "--dim", "16"]);
    assert!(o.status.success());
    let frags = std::fs::read_to_string(d.join("fragments.jsonl")).unwrap();
    let kept: String = frags.lines().filter(|l| !l.contains("\"Doc 7#0\"")).map(|l| format!("{l}\n")).collect();
    std::fs::write(d.join("fragments.jsonl"), kept).unwrap();
    let o = run(&[
        "build",
        "--input",
        p(&d.join("fragments.jsonl")),
        "--embeddings",
        p(&d.join("embeddings.bin")),
        "--out",
        p(&d.join("index")),
        "--dim",
        "16",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Doc 7#0"), "{}", stderr(&o));
    assert!(!d.join("index").exists());
}

#[test]
fn zero_k_is_usage_error() {
    let o = run(&["build", "--input", "a", "--embeddings", "b", "--out", "c", "--k", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = run(&["search", "--index", "x", "--query-emb", "q", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_lists_every_flag() {
    let o = run(&["search", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    let h = stdout(&o);
    for flag in ["--index", "--query-emb", "--n1", "--n2", "--oversample", "--one-stage", "--json", "--full-query"] {
        assert!(h.contains(flag), "missing {flag}");
    }
    assert!(h.contains("[default: 100]") && h.contains("[default: 5]") && h.contains("[default: 2]"));
    let o = run(&["corpus", "select", "--help"]);
    assert!(stdout(&o).contains("[default: 5]"));
}

#[test]
fn missing_index_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["search", "--index", p(&dir.path().join("none")), "--query-emb", "q.bin"]);
    assert_eq!(o.status.code(), Some(2));
}

fn search_json(dir: &Path, extra: &[&str]) -> serde_json::Value {
    let (index, queries) = (dir.join("index"), dir.join("queries.bin"));
    let mut args = vec!["search", "--index", p(&index), "--query-emb", p(&queries), "--json"];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    serde_json::from_str(&stdout(&o)).unwrap()
}

fn hits(v: &serde_json::Value) -> Vec<serde_json::Value> {
    v.as_array().unwrap().iter().map(|q| q["hits"].clone()).collect()
}

#[test]
fn one_stage_matches_wide_two_stage() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let one = search_json(dir.path(), &["--one-stage"]);
    let two = search_json(dir.path(), &["--n1", "100"]);
    assert_eq!(hits(&one), hits(&two));
    let first = &one[0]["hits"][0];
    assert_eq!(one[0]["query_id"], "q0");
    assert_eq!(first["fragment_id"], "Doc 0#0");
}

#[test]
fn index_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let o = bin()
        .env("FRAGSEARCH_INDEX", dir.path().join("index"))
        .args(["search", "--query-emb", p(&dir.path().join("queries.bin"))])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("query q0"));
}

#[test]
fn eval_reports_four_configs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    let report = d.join("report.json");
    let o = run(&[
        "eval",
        "--index",
        p(&d.join("index")),
        "--queries",
        p(&d.join("queries.bin")),
        "--qrels",
        p(&d.join("qrels.tsv")),
        "--configs",
        "all",
        "--report",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("NDCG@5"));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let full_filtered = rows.iter().find(|r| r["label"] == "full-one-stage/filtered").unwrap();
    assert_eq!(full_filtered["mean_recall_at_1"], 1.0);
}

#[test]
fn malformed_qrels_names_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fixture(d);
    std::fs::write(d.join("bad.tsv"), "q0\tDoc 0#0\nq1 Doc 10#0\n").unwrap();
    let o = run(&[
        "eval",
        "--index",
        p(&d.join("index")),
        "--queries",
        p(&d.join("queries.bin")),
        "--qrels",
        p(&d.join("bad.tsv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn corpus_assemble_counts() {
    let dir = tempfile::tempdir().unwrap();
    let pages = dir.path().join("pages.jsonl");
    std::fs::write(
        &pages,
        r#"{"title":"Mona Lisa","elements":[{"type":"paragraph","text":"Intro."},{"type":"image","image_ref":"ml.jpg","caption":"The painting"},{"type":"paragraph","text":"History."}]}"#,
    )
    .unwrap();
    let out = dir.path().join("frags.jsonl");
    let o = run(&["corpus", "assemble", "--pages", p(&pages), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "2 fragments: 1 text-only, 1 with images");
    assert_eq!(std::fs::read_to_string(out).unwrap().lines().count(), 2);
}

#[test]
fn corpus_select() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("g.json");
    std::fs::write(
        &graph,
        r#"{"categories":["Visual Arts","Painting","Frescoes"],"pages":["Mona Lisa","Sistine Chapel"],"subcat_edges":[["Visual Arts","Painting"],["Painting","Frescoes"]],"page_edges":[["Painting","Mona Lisa"],["Frescoes","Sistine Chapel"]]}"#,
    )
    .unwrap();
    let o = run(&["corpus", "select", "--graph", p(&graph), "--roots", "Visual Arts"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "Mona Lisa\nSistine Chapel\n");
    let o = run(&["corpus", "select", "--graph", p(&graph), "--roots", "Visual Arts", "--depth", "1"]);
    assert_eq!(stdout(&o), "Mona Lisa\n");
    let o = run(&["corpus", "select", "--graph", p(&graph), "--roots", "Sculpture"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fixture_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert!(run(&["fixture", "--out", p(d), "--docs", "30", "--queries", "3", "--dim", "16", "--seed", "9"]).status.success());
    }
    for f in ["embeddings.bin", "queries.bin", "qrels.tsv", "fragments.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}
