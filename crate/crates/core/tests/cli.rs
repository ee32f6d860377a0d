use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn hinrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hinrec"))
        .args(args)
        .env_remove("HINREC_OUT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hinrec(args);
    assert!(
        out.status.success(),
        "hinrec {} failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap()
}

fn write_graph(dir: &Path, nodes: &str, edges: &str) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("nodes.tsv"), nodes).unwrap();
    fs::write(dir.join("edges.tsv"), edges).unwrap();
}

/// Small planted graph with enough recipes for 100 eval negatives.
fn synth(tmp: &TempDir) -> PathBuf {
    let g = tmp.path().join("graph");
    ok(&["synth", "--out", s(&g), "--users", "30", "--recipes", "140", "--ingredients", "16", "--interactions", "6"]);
    g
}

#[test]
fn ingest_echoes_counts_at_full_scale() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src");
    let mut nodes = String::from("node_id\ttype\texternal_key\n");
    for (prefix, ty, n) in [("u", "User", 7958), ("r", "Recipe", 68794), ("i", "Ingredient", 8847)] {
        for k in 0..n {
            writeln!(nodes, "{prefix}{k}\t{ty}\t{k}").unwrap();
        }
    }
    let edges = "relation\tsrc_id\tdst_id\tweight\nuser-recipe\tu0\tr5\t4\nrecipe-ingredient\tr5\ti1\n";
    write_graph(&src, &nodes, edges);
    let out = tmp.path().join("ingested");
    let text = ok(&["ingest", "--nodes", s(&src.join("nodes.tsv")), "--edges", s(&src.join("edges.tsv")), "--out", s(&out)]);
    for n in ["7958", "68794", "8847"] {
        assert!(text.contains(n), "stdout lacks {n}:\n{text}");
    }
    let stats = json(out.join("stats.json"));
    assert_eq!(stats["nodes"]["User"], 7958);
    assert_eq!(stats["nodes"]["Recipe"], 68794);
    assert_eq!(stats["nodes"]["Ingredient"], 8847);
    assert_eq!(stats["edges"]["user-recipe"], 1);
    assert_eq!(stats["edges"]["recipe-recipe"], 0);
    assert!(json(out.join("manifest.json"))["config_sha256"].is_string());
    assert_eq!(fs::read_to_string(out.join("nodes.tsv")).unwrap(), nodes);
}

#[test]
fn ingest_without_edges_reports_zero() {
    let tmp = TempDir::new().unwrap();
    write_graph(tmp.path(), "node_id\ttype\texternal_key\nu\tUser\t\nr\tRecipe\t\n", "relation\tsrc_id\tdst_id\tweight\n");
    let out = tmp.path().join("out");
    ok(&["ingest", "--nodes", s(&tmp.path().join("nodes.tsv")), "--edges", s(&tmp.path().join("edges.tsv")), "--out", s(&out)]);
    assert_eq!(json(out.join("stats.json"))["edges"]["user-recipe"], 0);
}

#[test]
fn bad_tsv_fails_with_message() {
    let tmp = TempDir::new().unwrap();
    write_graph(tmp.path(), "node_id\ttype\texternal_key\nu\tUser\n", "");
    let out = hinrec(&["ingest", "--nodes", s(&tmp.path().join("nodes.tsv")), "--edges", s(&tmp.path().join("edges.tsv"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nodes.tsv:2"), "{err}");
}

#[test]
fn pathsim_fixture_table() {
    let tmp = TempDir::new().unwrap();
    let g = tmp.path().join("g");
    write_graph(
        &g,
        "node_id\ttype\texternal_key\nu1\tUser\t\nu2\tUser\t\nu3\tUser\t\nu4\tUser\t\nA\tRecipe\t\nB\tRecipe\t\n",
        "relation\tsrc_id\tdst_id\tweight\nuser-recipe\tu1\tA\nuser-recipe\tu2\tA\nuser-recipe\tu2\tB\nuser-recipe\tu3\tB\nuser-recipe\tu4\tB\n",
    );
    let table = tmp.path().join("t.jsonl");
    ok(&["pathsim", "--graph", s(&g), "--metapath", "R-U-R", "--m", "1", "--out", s(&table)]);
    let first: serde_json::Value = serde_json::from_str(fs::read_to_string(&table).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["src"], "A");
    assert_eq!(first["neighbors"][0]["id"], "B");
    assert_eq!(first["neighbors"][0]["score"], 0.4);

    let unknown = hinrec(&["pathsim", "--graph", s(&g), "--metapath", "X-Y-X"]);
    assert!(!unknown.status.success());
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("X-Y-X"));
    assert!(!hinrec(&["pathsim", "--graph", s(&g), "--metapath", "R-U-R", "--m", "0"]).status.success());
}

#[test]
fn train_outputs_and_defaults() {
    let tmp = TempDir::new().unwrap();
    let g = synth(&tmp);
    let run = tmp.path().join("a/b/run");
    ok(&["train", "--graph", s(&g), "--out", s(&run), "--epochs", "1", "--embed-dim", "4", "--out-dim", "4", "--variant", "hgat_only"]);
    assert_eq!(json(run.join("manifest.json"))["config"]["model"]["variant"], "hgat_only");
    assert!(run.join("checkpoint.bin").exists());
    assert!(!run.join("tables").exists());

    fs::write(tmp.path().join("cfg.json"), r#"{"train": {"epochs": 0}}"#).unwrap();
    let out = hinrec(&["train", "--graph", s(&g), "--out", s(&tmp.path().join("z")), "--config", s(&tmp.path().join("cfg.json"))]);
    assert!(!out.status.success(), "zero epochs must be rejected");

    let defaults = tmp.path().join("d");
    ok(&["train", "--graph", s(&g), "--out", s(&defaults), "--embed-dim", "4", "--out-dim", "4", "--m", "2"]);
    let m = json(defaults.join("manifest.json"));
    assert_eq!(m["config"]["train"]["learning_rate"], 0.005);
    assert_eq!(m["config"]["train"]["batch_size"], 412);
    assert_eq!(m["config"]["train"]["epochs"], 50);
    assert_eq!(m["seed"], 42);
    assert_eq!(fs::read_to_string(defaults.join("loss.csv")).unwrap().lines().count(), 51);
    assert!(defaults.join("tables/U-R-U.jsonl").exists());

    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = hinrec(&["train", "--graph", s(&g), "--out", s(&blocker.join("sub")), "--epochs", "1"]);
    assert!(!out.status.success());
}

#[test]
fn split_train_eval_round_trip() {
    let tmp = TempDir::new().unwrap();
    let g = synth(&tmp);
    let split = tmp.path().join("split");
    ok(&["split", "--graph", s(&g), "--out", s(&split), "--seed", "3"]);
    let run = tmp.path().join("run");
    ok(&[
        "train", "--graph", s(&g), "--split", s(&split.join("split.jsonl")), "--out", s(&run), "--epochs", "2",
        "--embed-dim", "4", "--out-dim", "4",
    ]);
    assert!(!run.join("split.jsonl").exists());
    let loss = fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);
    for fold in ["val", "test"] {
        let eval = tmp.path().join(format!("eval-{fold}"));
        ok(&[
            "eval", "--graph", s(&g), "--split", s(&split.join("split.jsonl")), "--model", s(&run), "--fold", fold,
            "--out", s(&eval),
        ]);
        let report = json(eval.join("report.json"));
        let ks: Vec<&String> = report["k"].as_object().unwrap().keys().collect();
        assert_eq!(ks.len(), 10);
        assert!(report["avg"]["hr"].as_f64().unwrap() <= 1.0);
        let ranks = fs::read_to_string(eval.join("ranks.csv")).unwrap();
        assert_eq!(ranks.lines().count() as u64, report["trials"].as_u64().unwrap() + 1);
    }
}

#[test]
fn ablate_rows() {
    let tmp = TempDir::new().unwrap();
    let g = synth(&tmp);
    let cfg = tmp.path().join("ablate.json");
    fs::write(
        &cfg,
        r#"{
  "model": {"embed_dim": 4, "out_dim": 4, "heads": 2, "layers": 1},
  "train": {"epochs": 1},
  "ablation": {
    "variants": ["full", "hgat_only", "metapath_only"],
    "metapath_sets": [["U-R-U"], ["U-R-U", "R-U-R", "R-I-R"]],
    "m_values": [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
  }
}"#,
    )
    .unwrap();
    let out = tmp.path().join("ab");
    ok(&["ablate", "--graph", s(&g), "--config", s(&cfg), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 15);
    let labels: Vec<&str> = rows.iter().map(|r| r[1]).collect();
    assert_eq!(&labels[..5], ["full", "hgat_only", "metapath_only", "U-R-U", "U-R-U + R-U-R + R-I-R"]);
    assert_eq!(labels[5], "m=1");
    assert_eq!(labels[14], "m=10");
    assert!(rows.iter().all(|r| r[9] == "ok"));
    assert!(json(out.join("manifest.json"))["config"]["ablation"]["m_values"].is_array());
}

#[test]
fn out_root_from_env() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hinrec"))
        .args(["synth", "--users", "4", "--recipes", "6", "--ingredients", "2", "--interactions", "2"])
        .env("HINREC_OUT", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("synth/nodes.tsv").exists());
}
