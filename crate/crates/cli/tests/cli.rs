use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rvos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvos"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rvos(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn spec() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/data/pan_cats.toml")
        .display()
        .to_string()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_run_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    let s = scene.to_str().unwrap();
    let printed = ok(&["simulate", "--spec", &spec(), "--seed", "3", "--out", s]);
    assert!(printed.contains("the cat stationary"), "{printed}");
    for f in [
        "video.json",
        "detections.json",
        "propagations.json",
        "embeddings.json",
        "ground_truth.json",
        "query.txt",
    ] {
        assert!(scene.join(f).is_file(), "{f}");
    }

    let summary: serde_json::Value = serde_json::from_str(&ok(&["validate", "--bundle", s])).unwrap();
    assert_eq!(summary["frame_count"], 31);
    assert_eq!(summary["keyframes"], serde_json::json!([0, 15, 30]));

    let out = tmp.path().join("out");
    let o = out.to_str().unwrap();
    let query = fs::read_to_string(scene.join("query.txt")).unwrap();
    let line = ok(&[
        "run",
        "--bundle",
        s,
        "--query",
        query.trim(),
        "--out",
        o,
        "--offline",
        "--overlay",
        "--gt",
        s,
    ]);
    assert!(line.contains("J&F 1.000"), "{line}");
    let results = json(&out.join("results.json"));
    assert_eq!(results["frame_count"], 31);
    assert_eq!(results["selected_ids"].as_array().unwrap().len(), 1);
    assert!(results["masks"][0]["counts"].is_string());
    assert_eq!(fs::read_dir(out.join("overlays")).unwrap().count(), 31);
    let stages: Vec<String> = fs::read_to_string(out.join("trace.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["stage"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(stages.first().map(String::as_str), Some("decompose"));
    assert_eq!(stages.last().map(String::as_str), Some("select"));
    assert!(stages.iter().any(|s| s == "camera"));

    let ev_path = tmp.path().join("eval.json");
    let printed = ok(&["eval", "--pred", o, "--gt", s, "--out", ev_path.to_str().unwrap()]);
    let ev: serde_json::Value = serde_json::from_str(&printed).unwrap();
    assert_eq!(ev, json(&ev_path));
    assert_eq!(ev["jf_mean"], 1.0);
    assert!(ev.get("j_mean").is_some() && ev.get("f_mean").is_some());

    // Reruns are byte-identical.
    let out2 = tmp.path().join("out2");
    ok(&[
        "run",
        "--bundle",
        s,
        "--query",
        query.trim(),
        "--out",
        out2.to_str().unwrap(),
        "--offline",
        "--gt",
        s,
    ]);
    for f in ["results.json", "trace.jsonl"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(out2.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn queries_file_gets_subdirectories() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    let s = scene.to_str().unwrap();
    ok(&["simulate", "--spec", &spec(), "--out", s]);
    let qs = tmp.path().join("queries.txt");
    fs::write(&qs, "the stationary cat\n\nthe cat moving right\nthe dog\n").unwrap();
    let out = tmp.path().join("out");
    let printed = ok(&[
        "run",
        "--bundle",
        s,
        "--queries",
        qs.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--offline",
        "--overlay",
    ]);
    assert_eq!(printed.lines().count(), 3);
    assert!(printed.lines().nth(2).unwrap().contains("no candidates"));
    for q in ["q000", "q001", "q002"] {
        assert!(out.join(q).join("results.json").is_file());
        assert!(out.join(q).join("overlays").is_dir());
    }
    let index = json(&out.join("index.json"));
    assert_eq!(index[1]["query"], "the cat moving right");
    let a = json(&out.join("q000/results.json"));
    let b = json(&out.join("q001/results.json"));
    assert_ne!(a["selected_ids"], b["selected_ids"]);
}

#[test]
fn config_file_and_ablation() {
    let tmp = tempfile::tempdir().unwrap();
    let scenes = tmp.path().join("scenes");
    ok(&[
        "simulate",
        "--suite",
        "2",
        "--seed",
        "1",
        "--out",
        scenes.to_str().unwrap(),
    ]);
    let cfg = tmp.path().join("config.toml");
    fs::write(&cfg, "theta_iou = 0.5\nseed = 4\n").unwrap();
    let report = tmp.path().join("report/ablation.json");
    let table = ok(&[
        "ablate",
        "--scenes",
        scenes.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(table.lines().count(), 9);
    assert!(table.lines().next().unwrap().contains("J&F"));
    let r = json(&report);
    assert_eq!(r["scene_count"], 2);
    assert_eq!(r["rows"].as_array().unwrap().len(), 8);
}

#[test]
fn errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing");
    let out = rvos(&[
        "run",
        "--bundle",
        missing.to_str().unwrap(),
        "--query",
        "the cat",
        "--out",
        "x",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "tau = 0\n").unwrap();
    let scene = tmp.path().join("scene");
    ok(&["simulate", "--spec", &spec(), "--out", scene.to_str().unwrap()]);
    let out = rvos(&[
        "run",
        "--bundle",
        scene.to_str().unwrap(),
        "--query",
        "the cat",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        "x",
    ]);
    assert!(!out.status.success());

    assert!(!rvos(&["run", "--bundle", "b", "--out", "x"]).status.success());
}
