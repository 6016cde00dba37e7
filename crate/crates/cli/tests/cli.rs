use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn edgesim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgesim"))
        .arg("--config-dir")
        .arg(configs())
        .args(args)
        .output()
        .expect("spawn edgesim")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const HEADER: &str = "scenario_id,design,phase,cycles,dram_bytes,utilization,latency_ms,\
throughput_tokens_per_s,prune_ratio_mean,bw_ratio,manifest_hash";

#[test]
fn run_writes_comparison_table() {
    let out = tempfile::tempdir().unwrap();
    let o = edgesim(&["run", "--out", path_str(out.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.path().join("compare.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(HEADER));
    let body: Vec<&str> = lines.collect();
    assert_eq!(body.len(), 16);
    for design in ["homo-cc", "homo-mc", "hetero", "simd"] {
        let n = body.iter().filter(|l| l.split(',').nth(1) == Some(design)).count();
        assert_eq!(n, 4, "{design}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("summary.json")).unwrap()).unwrap();
    let hash = summary["manifest_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(body.iter().all(|l| l.ends_with(hash)));
    assert_eq!(summary["scenarios"][0]["scenario_id"], "compare");
}

#[test]
fn identical_inputs_give_identical_tables() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = edgesim(&[
            "run",
            "--scenario",
            path_str(&configs().join("scenarios/pruning.toml")),
            "--out",
            path_str(d.path()),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for name in ["dense.csv", "pruned.csv", "pruned-uniform-30.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn seed_changes_the_manifest_hash() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let smoke = configs().join("scenarios/smoke.toml");
    for (d, seed) in [(&a, "1"), (&b, "2")] {
        let o = edgesim(&[
            "run",
            "--scenario",
            path_str(&smoke),
            "--seed",
            seed,
            "--out",
            path_str(d.path()),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let x = std::fs::read_to_string(a.path().join("smoke.csv")).unwrap();
    let y = std::fs::read_to_string(b.path().join("smoke.csv")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn empty_pack_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let pack = dir.path().join("empty.toml");
    std::fs::write(&pack, "compare = false\n").unwrap();
    let out = dir.path().join("out");
    let o = edgesim(&["run", "--scenario", path_str(&pack), "--out", path_str(&out)]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("warning"));
    assert!(!out.exists());
}

#[test]
fn invalid_arch_exits_2_and_names_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("arch/default.toml")).unwrap();
    let broken = text
        .lines()
        .map(|l| {
            if l.starts_with("clock_hz") {
                "clock_hz = 0.0".to_string()
            } else if l.starts_with("throttle_interval_cycles") {
                "throttle_interval_cycles = 0".to_string()
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let arch = dir.path().join("bad.toml");
    std::fs::write(&arch, broken).unwrap();
    let o = edgesim(&[
        "run",
        "--arch",
        path_str(&arch),
        "--out",
        path_str(&dir.path().join("out")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("clock"), "{err}");
    assert!(err.contains("interval") || err.contains("throttle"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_field_in_pack_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let pack = dir.path().join("typo.toml");
    std::fs::write(
        &pack,
        "[[scenario]]\nid = \"x\"\ninput_tokens = 4\noutput_tokens = 4\nbatchh = 2\n",
    )
    .unwrap();
    let o = edgesim(&["validate", "--scenario", path_str(&pack)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn duplicate_scenario_ids_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let pack = dir.path().join("dup.toml");
    let one = "[[scenario]]\nid = \"x\"\ninput_tokens = 4\noutput_tokens = 4\n";
    std::fs::write(&pack, format!("{one}{one}")).unwrap();
    let o = edgesim(&[
        "run",
        "--scenario",
        path_str(&pack),
        "--out",
        path_str(&dir.path().join("out")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("duplicate"));
}

#[test]
fn counter_overflow_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("models/sphinx-tiny.toml")).unwrap();
    let huge = text
        .replace("d_model = 2048", "d_model = 4000000000")
        .replace("d_ffn = 5632", "d_ffn = 4000000000");
    let model = dir.path().join("huge.toml");
    std::fs::write(&model, huge).unwrap();
    let o = edgesim(&[
        "run",
        "--model",
        path_str(&model),
        "--scenario",
        path_str(&configs().join("scenarios/smoke.toml")),
        "--out",
        path_str(&dir.path().join("out")),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn gen_trace_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    for p in [&a, &b] {
        let o = edgesim(&[
            "gen-trace",
            "--layers",
            "2",
            "--schedule",
            "3,8",
            "--tokens",
            "4",
            "--seed",
            "9",
            "--out",
            path_str(p),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let c = dir.path().join("c.bin");
    let o = edgesim(&[
        "gen-trace",
        "--layers",
        "2",
        "--schedule",
        "3,8",
        "--tokens",
        "4",
        "--seed",
        "10",
        "--out",
        path_str(&c),
    ]);
    assert!(o.status.success());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn gen_trace_text_reports_kurtosis_and_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.txt");
    let o = edgesim(&[
        "gen-trace",
        "--layers",
        "2",
        "--schedule",
        "3,30",
        "--tokens",
        "8",
        "--eval",
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "layer target_kurtosis measured_kurtosis prune_ratio");
    assert_eq!(lines.len(), 3);
    let ratio = |l: &str| l.split(' ').nth(3).unwrap().parse::<f64>().unwrap();
    assert!(ratio(lines[2]) > ratio(lines[1]));
    assert!(out.exists());
}

#[test]
fn gen_trace_schedule_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.bin");
    let o = edgesim(&["gen-trace", "--layers", "3", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schedule"));
    assert!(!out.exists());
}

#[test]
fn validate_accepts_shipped_configs() {
    for pack in ["compare", "length-sweep", "pruning", "smoke"] {
        let p = configs().join(format!("scenarios/{pack}.toml"));
        let o = edgesim(&["validate", "--scenario", path_str(&p)]);
        assert!(o.status.success(), "{pack}: {}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok"));
    }
}

#[test]
fn sweep_writes_grid_table() {
    let out = tempfile::tempdir().unwrap();
    let o = edgesim(&[
        "sweep",
        "--scenario",
        path_str(&configs().join("scenarios/length-sweep.toml")),
        "--jobs",
        "2",
        "--out",
        path_str(out.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(out.path().join("sweep.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let id = headers.iter().position(|h| h == "scenario_id").unwrap();
    let ids: Vec<String> = rdr.records().map(|r| r.unwrap()[id].to_string()).collect();
    assert!(ids.contains(&"length-batch-l1024-b16-dynamic".to_string()));
    for i in &ids {
        assert!(out.path().join(format!("{i}.csv")).exists(), "{i}");
    }
}

#[test]
fn run_ignores_sweeps_with_warning() {
    let out = tempfile::tempdir().unwrap();
    let o = edgesim(&[
        "run",
        "--scenario",
        path_str(&configs().join("scenarios/length-sweep.toml")),
        "--out",
        path_str(out.path()),
    ]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("ignored"));
}

#[test]
fn config_dir_comes_from_environment() {
    let out = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_edgesim"))
        .env("EDGESIM_CONFIG_DIR", configs())
        .current_dir(out.path())
        .args(["run", "--scenario"])
        .arg(configs().join("scenarios/smoke.toml"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.path().join("results/smoke.csv").exists());
}

#[test]
fn missing_config_dir_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_edgesim"))
        .env_remove("EDGESIM_CONFIG_DIR")
        .current_dir(dir.path())
        .args(["validate"])
        .output()
        .unwrap();
    assert!(!o.status.success());
}
