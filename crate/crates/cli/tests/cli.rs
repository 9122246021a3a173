use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dartsolve"));
    c.env_remove("DARTSOLVE_CACHE");
    c
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

/// All four treble fixtures in one CSV.
fn treble_csv(dir: &Path) -> PathBuf {
    let mut out = String::from("player,target,outcome,count\n");
    for t in ["T20", "T19", "T18", "T17"] {
        let s = std::fs::read_to_string(fixtures().join(format!("{t}.csv"))).unwrap();
        for line in s.lines().skip(1) {
            out.push_str(line);
            out.push('\n');
        }
    }
    let p = dir.join("trebles.csv");
    std::fs::write(&p, out).unwrap();
    p
}

fn run(c: &mut Command) -> Output {
    c.output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn fit_store(dir: &Path) -> PathBuf {
    let data = treble_csv(dir);
    let out = dir.join("fit");
    let o = run(bin()
        .args(["fit", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .args(["--resolution", "1.0"]));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    out.join("store.json")
}

#[test]
fn summarize_total_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = run(bin()
        .args(["summarize", "--data"])
        .arg(fixtures().join("T20.csv"))
        .arg("--out")
        .arg(&out));
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let total = text.lines().find(|l| l.starts_with("Total")).unwrap();
    assert!(
        total.contains("117600") && total.contains("41.2%") && total.contains("35.4"),
        "{total}"
    );
    let j = json(&out.join("summary.json"));
    assert_eq!(j["config"]["command"], "summarize");
    assert_eq!(j["seed"], 0);
    assert!(std::fs::read_to_string(out.join("summary.txt")).unwrap().starts_with("# config: "));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "player,target,outcome,count\n").unwrap();
    let o = run(bin().args(["summarize", "--data"]).arg(&empty));
    assert_eq!(o.status.code(), Some(2));
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "player,target,outcome,count\nX,T20,D16,3\n").unwrap();
    assert_eq!(run(bin().args(["summarize", "--data"]).arg(&bad)).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(run(bin().arg("nope")).status.code(), Some(1));
    assert_eq!(run(bin().args(["summarize", "--data", "/no/such/file.csv"])).status.code(), Some(1));
    assert_eq!(run(bin().args(["fit", "--data", "x", "--mode", "sideways"])).status.code(), Some(1));
    assert_eq!(run(bin().arg("--help")).status.code(), Some(0));
}

#[test]
fn fit_is_reproducible_and_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = treble_csv(dir.path());
    let a = dir.path().join("a");
    let go = || {
        let o = run(bin()
            .args(["fit", "--data"])
            .arg(&data)
            .arg("--out")
            .arg(&a)
            .args(["--source", "raw", "--resolution", "1.0"]));
        assert_eq!(o.status.code(), Some(0));
        ["store.json", "fit_report.json", "fit_report.txt"].map(|f| std::fs::read(a.join(f)).unwrap())
    };
    let first = go();
    // same inputs and config, byte-identical outputs
    assert!(first == go());
    let report = json(&a.join("fit_report.json"));
    assert_eq!(report["config"]["source"], "raw");
    let records = report["records"].as_array().unwrap();
    assert_eq!(records.len(), 64);
    for r in records.iter().filter(|r| r["target"] == "T20") {
        assert!(r["meta"]["mean_abs_error"].as_f64().unwrap() <= 0.006, "{}", r["player"]);
    }
}

#[test]
fn failed_region_keeps_going() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(
        &data,
        "player,target,outcome,count\nA,T20,T20,40\nA,T20,S20,50\nA,T20,T5,3\nB,T20,T20,12\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = run(bin()
        .args(["fit", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .args(["--source", "raw", "--resolution", "1.0"]));
    assert_eq!(o.status.code(), Some(3));
    let report = json(&out.join("fit_report.json"));
    assert_eq!(report["records"].as_array().unwrap().len(), 1);
    assert_eq!(report["failures"][0]["player"], "B");
    assert!(out.join("store.json").exists());
}

#[test]
fn solve_and_heatmap() {
    let dir = tempfile::tempdir().unwrap();
    let store = fit_store(dir.path());
    let cache = dir.path().join("cache");
    let out = dir.path().join("solve");
    let solve = |out: &Path| {
        run(bin()
            .env("DARTSOLVE_CACHE", &cache)
            .args(["solve", "--store"])
            .arg(&store)
            .args([
                "--player-a",
                "Cross",
                "--player-b",
                "Cross",
                "--max-score",
                "101",
                "--legs",
                "1,3,35",
                "--out",
            ])
            .arg(out))
    };
    let o = solve(&out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let j = json(&out.join("solve.json"));
    let pa = j["p_a_star"].as_f64().unwrap();
    // the first thrower has the edge
    assert!(pa > 0.5);
    assert!((pa + j["p_b_star"].as_f64().unwrap() - 1.0).abs() < 1e-5);
    assert_eq!(j["matches"][0]["a_first"].as_f64().unwrap(), pa);
    assert_eq!(j["cached"], false);
    let again = dir.path().join("again");
    assert_eq!(solve(&again).status.code(), Some(0));
    let j2 = json(&again.join("solve.json"));
    assert_eq!(j2["cached"], true);
    assert_eq!(j2["p_a_star"], j["p_a_star"]);

    let even = run(bin()
        .args(["solve", "--store"])
        .arg(&store)
        .args(["--player-a", "Cross", "--player-b", "Cross", "--legs", "2"]));
    assert_eq!(even.status.code(), Some(1));
    let unknown =
        run(bin()
            .args(["solve", "--store"])
            .arg(&store)
            .args(["--player-a", "Nobody", "--player-b", "Cross", "--max-score", "41"]));
    assert_eq!(unknown.status.code(), Some(2));

    let hm = dir.path().join("hm");
    let o = run(bin()
        .env("DARTSOLVE_CACHE", &cache)
        .args(["heatmap", "--store"])
        .arg(&store)
        .args([
            "--player-a",
            "Cross",
            "--player-b",
            "Cross",
            "--max-score",
            "101",
            "--state",
            "40,32,A,3,0",
            "--heat-lattice",
            "4",
            "--out",
        ])
        .arg(&hm));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let h = json(&hm.join("heatmap.json"));
    assert_eq!(h["cached_solve"], true);
    let vals: Vec<f64> = h["heatmap"]["values"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let max = vals.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(h["heatmap"]["argmax_value"].as_f64().unwrap(), max);
    assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));

    let bad =
        run(bin()
            .args(["heatmap", "--store"])
            .arg(&store)
            .args(["--player-a", "Cross", "--player-b", "Cross", "--state", "40,32,A,4,0"]));
    assert_eq!(bad.status.code(), Some(1));
}
