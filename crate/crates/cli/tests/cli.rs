use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn outreach(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_outreach"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn solve_example_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = outreach(&[
        "solve",
        "--fixture",
        "example1",
        "-t",
        "4",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "distribution.json",
        "metrics.csv",
        "layout.json",
        "stacked.svg",
        "flat.svg",
        "proportionality.svg",
        "targets.json",
        "trace.json",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["config"]["method"], "greedy-equal");
    let dist = json(&out.join("distribution.json"));
    assert_eq!(dist["instance_digest"], manifest["instance_digest"]);
    assert_eq!(dist["t"], 4);
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("# instance_digest="));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = outreach(&[
            "solve",
            "--fixture",
            "fig6",
            "-t",
            "3",
            "--method",
            "column-generation",
            "--out",
            p(out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(
        fs::read(a.join("manifest.json")).unwrap(),
        fs::read(b.join("manifest.json")).unwrap()
    );
}

#[test]
fn greedy_failure_exits_two_with_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f");
    let o = outreach(&["solve", "--fixture", "fig5", "-t", "4", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    let failure = json(&out.join("failure.json"));
    assert_eq!(failure["method"], "greedy-equal");
    assert!(!failure["trace"].is_null());
    assert!(!out.join("distribution.json").exists());
}

#[test]
fn sampling_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = outreach(&[
        "solve",
        "--fixture",
        "example1",
        "-t",
        "4",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0);
    let dist = out.join("distribution.json");
    let draw = |seed: &str| {
        outreach(&[
            "sample",
            "--distribution",
            p(&dist),
            "-k",
            "20",
            "--seed",
            seed,
        ])
        .stdout
    };
    let first = draw("5");
    assert_eq!(first, draw("5"));
    let text = String::from_utf8(first).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("draw,city_id,letters"));
    let mut per_draw = [0u64; 20];
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        per_draw[f[0].parse::<usize>().unwrap()] += f[2].parse::<u64>().unwrap();
    }
    assert!(per_draw.iter().all(|&s| s == 60), "{per_draw:?}");
}

#[test]
fn report_refuses_foreign_roster() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    assert_eq!(
        code(&outreach(&[
            "solve",
            "--fixture",
            "example1",
            "-t",
            "4",
            "--out",
            p(&out)
        ])),
        0
    );
    let dist = out.join("distribution.json");
    let ok = outreach(&[
        "report",
        "--distribution",
        p(&dist),
        "--fixture",
        "example1",
        "--out",
        p(&dir.path().join("ok")),
    ]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let bad = outreach(&[
        "report",
        "--distribution",
        p(&dist),
        "--fixture",
        "fig6",
        "--out",
        p(&dir.path().join("bad")),
    ]);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("refusing"));
}

#[test]
fn ingest_applies_cap_rule() {
    let dir = tempfile::tempdir().unwrap();
    let roster = dir.path().join("roster.csv");
    fs::write(
        &roster,
        "id,name,state,population\na,Alpha,S1,400\nb,Beta,S1,1000\nc,Gamma,S2,10000\n",
    )
    .unwrap();
    let out = dir.path().join("i");
    let o = outreach(&[
        "ingest",
        "--roster",
        p(&roster),
        "--letters",
        "100",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let written = fs::read_to_string(out.join("roster.csv")).unwrap();
    let mut caps = std::collections::HashMap::new();
    let mut rdr = csv::Reader::from_reader(written.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let id_col = headers.iter().position(|h| h == "id").unwrap();
    let cap_col = headers.iter().position(|h| h == "cap").unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        caps.insert(
            rec[id_col].to_string(),
            rec[cap_col].parse::<f64>().unwrap(),
        );
    }
    assert_eq!(caps["a"], 200.0);
    assert_eq!(caps["b"], 250.0);
    assert_eq!(caps["c"], 1000.0);
    let summary = json(&out.join("instance.json"));
    assert_eq!(summary["cities"], 3);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "method = \"buckets\"\nbudget = 3\nseed = 11\n").unwrap();
    let out = dir.path().join("c");
    let o = outreach(&[
        "--config",
        p(&cfg),
        "solve",
        "--fixture",
        "example1",
        "--method",
        "column-generation",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["method"], "column-generation");
    assert_eq!(manifest["seed"], 11);
    assert_eq!(json(&out.join("distribution.json"))["t"], 3);
    assert!(out.join("colgen_log.csv").exists());
}

#[test]
fn exit_codes_separate_usage_from_io() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    assert_eq!(
        code(&outreach(&[
            "ingest",
            "--roster",
            p(&missing),
            "--letters",
            "5"
        ])),
        3
    );
    assert_eq!(code(&outreach(&["frobnicate"])), 1);
    assert_eq!(
        code(&outreach(&["solve", "--out", p(&dir.path().join("x"))])),
        1
    );
    assert_eq!(code(&outreach(&["--help"])), 0);
    let bad_cfg = dir.path().join("bad.toml");
    fs::write(&bad_cfg, "lettres = 3\n").unwrap();
    assert_ne!(
        code(&outreach(&[
            "--config",
            p(&bad_cfg),
            "solve",
            "--fixture",
            "example1"
        ])),
        0
    );
}

#[test]
fn apportion_small_roster() {
    let dir = tempfile::tempdir().unwrap();
    let roster = dir.path().join("roster.csv");
    let mut text = String::from("id,name,state,population\n");
    for k in 0..12 {
        let state = if k % 2 == 0 { "North" } else { "South" };
        text += &format!("m{k},Town {k},{state},{}\n", 800 + 150 * k);
    }
    fs::write(&roster, text).unwrap();
    let out = dir.path().join("a");
    let o = outreach(&[
        "apportion",
        "--roster",
        p(&roster),
        "--letters",
        "400",
        "-t",
        "6",
        "--solve",
        "--jobs",
        "2",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "plan.csv",
        "plan.json",
        "local_vs_global.csv",
        "group_results.csv",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let results = fs::read_to_string(out.join("group_results.csv")).unwrap();
    assert_eq!(results.lines().count(), 3, "{results}");
}
