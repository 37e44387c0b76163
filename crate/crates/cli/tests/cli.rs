use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prefrank_core::sim::{draw_coefficients, synthesize_battles, SamplingPolicy};
use serde_json::Value;
use sha2::{Digest, Sha256};

fn prefrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prefrank")).args(args).output().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_log(dir: &Path) -> PathBuf {
    let xi = draw_coefficients(4, 2.0, 4.0, 1).unwrap();
    let log = synthesize_battles(&xi, 2_000, &SamplingPolicy::Uniform, 1).unwrap();
    let path = dir.join("log.jsonl");
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf).unwrap();
    std::fs::write(&path, buf).unwrap();
    path
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn rank_writes_leaderboard_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let log = write_log(tmp.path());
    let out = tmp.path().join("out");
    let res = prefrank(&[
        "--seed",
        "3",
        "--out-dir",
        path_str(&out),
        "rank",
        "--alpha",
        "0.05",
        "--interval",
        "sandwich",
        path_str(&log),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));

    let board: Value = serde_json::from_slice(&std::fs::read(out.join("leaderboard.json")).unwrap()).unwrap();
    assert!(board.is_object());
    let m = manifest(&out);
    assert_eq!(m["subcommand"], "rank");
    assert_eq!(m["seed"], 3);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    let settings = &m["config"]["command"]["rank"]["settings"];
    assert_eq!(settings["alpha"], 0.05);
    assert_eq!(settings["interval"], "sandwich");
    // defaults are materialized
    assert_eq!(settings["boot_reps"], 1000);
    let digest: String = Sha256::digest(std::fs::read(&log).unwrap()).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(m["inputs"][0]["sha256"], digest.as_str());
    let listed: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for name in &listed {
        assert!(out.join(name).is_file(), "{name} listed but missing");
    }
    assert!(listed.contains(&"leaderboard.json"));
}

#[test]
fn identical_runs_give_identical_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let log = write_log(tmp.path());
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let res = prefrank(&["--seed", "9", "--out-dir", path_str(&out), "winmatrix", path_str(&log)]);
        assert_eq!(res.status.code(), Some(0));
        std::fs::read(out.join("manifest.json")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn missing_input_exits_one_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let res = prefrank(&["--out-dir", path_str(&out), "rank", path_str(&tmp.path().join("absent.jsonl"))]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_one() {
    let res = prefrank(&["frobnicate"]);
    assert_eq!(res.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("Usage"), "{stderr}");
    assert!(res.stdout.is_empty());
}

#[test]
fn separation_without_ridge_exits_two_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("sep.jsonl");
    // a beats b every time: no finite maximum likelihood estimate
    let lines: String =
        (0..20).map(|_| "{\"model_a\": \"a\", \"model_b\": \"b\", \"winner\": \"model_a\", \"p\": 1.0}\n").collect();
    std::fs::write(&log, lines).unwrap();
    let out = tmp.path().join("out");
    let res = prefrank(&["--seed", "1", "--out-dir", path_str(&out), "rank", "--ridge", "0", path_str(&log)]);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(!out.exists() || std::fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn invalid_flag_value_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let log = write_log(tmp.path());
    let out = tmp.path().join("out");
    let res = prefrank(&["--out-dir", path_str(&out), "rank", "--alpha", "1.5", path_str(&log)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.exists() || std::fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn config_file_sets_flags_and_command_line_wins() {
    let tmp = tempfile::tempdir().unwrap();
    let log = write_log(tmp.path());
    let cfg = tmp.path().join("run.conf");
    std::fs::write(&cfg, "alpha = 0.2\nmultiplicity = none\n").unwrap();

    let out = tmp.path().join("from-file");
    let res =
        prefrank(&["--seed", "1", "--config", path_str(&cfg), "--out-dir", path_str(&out), "rank", path_str(&log)]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let settings = manifest(&out)["config"]["command"]["rank"]["settings"].clone();
    assert_eq!(settings["alpha"], 0.2);
    assert_eq!(settings["multiplicity"], "none");

    let out = tmp.path().join("overridden");
    let res = prefrank(&[
        "--seed",
        "1",
        "--config",
        path_str(&cfg),
        "--out-dir",
        path_str(&out),
        "rank",
        "--alpha",
        "0.1",
        path_str(&log),
    ]);
    assert_eq!(res.status.code(), Some(0));
    let settings = manifest(&out)["config"]["command"]["rank"]["settings"].clone();
    assert_eq!(settings["alpha"], 0.1);
    assert_eq!(settings["multiplicity"], "none");
}

#[test]
fn absent_seed_is_drawn_and_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let log = write_log(tmp.path());
    let out = tmp.path().join("out");
    let res = prefrank(&["--out-dir", path_str(&out), "sample-plan", path_str(&log)]);
    assert_eq!(res.status.code(), Some(0));
    assert!(manifest(&out)["seed"].is_u64());
}

#[test]
fn simulate_coverage_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let res = prefrank(&[
            "--seed",
            "7",
            "--out-dir",
            path_str(&out),
            "simulate",
            "coverage",
            "--m",
            "5",
            "--gamma",
            "2",
            "--trials",
            "10",
            "--t",
            "2000",
        ]);
        assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn help_lists_a_default_for_every_flag() {
    let subcommands: &[&[&str]] = &[
        &["rank"],
        &["winmatrix"],
        &["sample-plan"],
        &["detect"],
        &["simulate", "coverage"],
        &["simulate", "efficiency"],
        &["replay"],
    ];
    for sub in subcommands {
        let mut args = sub.to_vec();
        args.push("--help");
        let res = prefrank(&args);
        assert_eq!(res.status.code(), Some(0));
        let text = String::from_utf8(res.stdout).unwrap();
        let options = text.split("Options:").nth(1).expect("options section");

        // one entry per flag; long help puts the description on following lines
        let mut entries: Vec<String> = Vec::new();
        for line in options.lines() {
            let trimmed = line.trim_start();
            if trimmed.starts_with("--") || trimmed.starts_with("-h") {
                entries.push(trimmed.to_owned());
            } else if let Some(last) = entries.last_mut() {
                last.push(' ');
                last.push_str(trimmed);
            }
        }
        assert!(entries.len() > 5, "{sub:?}: too few flags parsed");
        for entry in entries.iter().filter(|e| !e.starts_with("-h")) {
            assert!(entry.contains("[default:"), "{sub:?}: no default in `{entry}`");
        }
    }
}
