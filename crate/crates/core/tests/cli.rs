use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dtsim::metrics::{self, Comparison, RunSummary};

fn dtsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn default_scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.cfg")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn both_modes_write_the_documented_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let o = dtsim(&[
        "run",
        "--scenario",
        default_scenario().to_str().unwrap(),
        "--deployment",
        "both",
        "--duration",
        "20",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "centralized.records.csv",
            "centralized.summary.json",
            "comparison.json",
            "multilayer.records.csv",
            "multilayer.summary.json",
        ]
    );

    // the comparison is a pure function of the two record files
    let c = metrics::read_records_csv(&out.join("centralized.records.csv")).unwrap();
    let m = metrics::read_records_csv(&out.join("multilayer.records.csv")).unwrap();
    let written: Comparison = serde_json::from_slice(&std::fs::read(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(written, metrics::compare(&c, &m, 20.0));
    let mean = |r: &[metrics::DemandRecord]| r.iter().map(|x| x.latency_s).sum::<f64>() / r.len() as f64;
    let delta = written.latency_delta_s.unwrap();
    assert!((delta - (mean(&c) - mean(&m))).abs() < 1e-12);

    // summary agrees with its own record file
    let s: RunSummary = serde_json::from_slice(&std::fs::read(out.join("multilayer.summary.json")).unwrap()).unwrap();
    assert_eq!(s.completed, m.len());
    assert_eq!(s.duration_s, 20.0);
    assert_eq!(s.series.len(), 20);
}

#[test]
fn csv_header_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o = dtsim(&[
        "run",
        "--deployment",
        "multilayer",
        "--duration",
        "15",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(out.join("multilayer.records.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "demand_id,origin,class,serving_layer,t_created,t_completed,latency_s,queue_wait_s,\
         transmission_s,compute_s,buffering_s,signaling_bytes,handover_affected"
    );
    let records = metrics::records_from_csv(text.as_bytes()).unwrap();
    assert!(!records.is_empty());
    let again = metrics::records_to_csv(&records).unwrap();
    assert_eq!(String::from_utf8(again).unwrap(), text);
}

#[test]
fn json_format_matches_csv_records() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, format) in [(&a, "csv"), (&b, "json")] {
        let o = dtsim(&[
            "run",
            "--deployment",
            "centralized",
            "--duration",
            "10",
            "--format",
            format,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
    }
    let csv = metrics::read_records_csv(&a.join("centralized.records.csv")).unwrap();
    let json: Vec<metrics::DemandRecord> =
        serde_json::from_slice(&std::fs::read(b.join("centralized.records.json")).unwrap()).unwrap();
    assert_eq!(csv, json);
}

#[test]
fn seed_flag_overrides_file_and_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(dir.path(), "s.cfg", "[simulation]\nseed = 7\nduration_s = 10\n");
    let run = |seed: Option<&str>, out: &str| {
        let out = dir.path().join(out);
        let mut args = vec!["run", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        assert!(dtsim(&args).status.success());
        std::fs::read(out.join("multilayer.records.csv")).unwrap()
    };
    let from_file = run(None, "a");
    assert_eq!(from_file, run(Some("7"), "b"));
    assert_ne!(from_file, run(Some("8"), "c"));
}

#[test]
fn validation_errors_exit_1_with_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.cfg",
        "[workload]\nmix_local = 0.5\nmix_edge = 0.3\nmix_cloud = 0.1\n\n[mobility]\nmovers = 11\n\n[topology]\nwarp = 9\n",
    );
    let o = dtsim(&["validate", "--scenario", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("[workload] mix_local"), "{err}");
    assert!(err.contains("[mobility] movers"), "{err}");
    assert!(err.contains("warp"), "{err}");

    let o = dtsim(&["run", "--scenario", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let syntax = write(dir.path(), "syntax.cfg", "[topology\nterminals = 3\n");
    let o = dtsim(&["validate", "--scenario", syntax.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn negative_duration_flag_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = dtsim(&["run", "--duration", "-1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn io_failures_exit_2() {
    let o = dtsim(&["validate", "--scenario", "/nonexistent/dir/x.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let blocker = write(dir.path(), "file", "");
    let o = dtsim(&["run", "--duration", "2", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_prints_a_loadable_config() {
    let o = dtsim(&["validate", "--scenario", default_scenario().to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let back = dtsim::config::parse_str(&text).unwrap();
    assert_eq!(back, dtsim::config::parse_file(&default_scenario()).unwrap());
}

#[test]
fn empty_scenario_is_the_reference_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.cfg", "");
    let o = dtsim(&["validate", "--scenario", empty.to_str().unwrap()]);
    assert!(o.status.success());
    let cfg = dtsim::config::parse_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(cfg, dtsim::ScenarioConfig::default());
    assert_eq!((cfg.terminals, cfg.edges, cfg.movers), (10, 2, 5));
}

#[test]
fn calibrate_emits_a_fragment_and_leaves_input_alone() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[workload]\nrate_per_terminal = 0.15\nedge_compute_gflop = 1\n";
    let input = write(dir.path(), "in.cfg", text);
    let o = dtsim(&["calibrate", "--scenario", input.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&input).unwrap(), text);
    let frag = String::from_utf8(o.stdout).unwrap();
    assert!(frag.contains("predicted mean 0.900000 s"));
    assert!(frag.contains("predicted mean 0.345000 s"));
    // the fragment merges into the input and parses
    let merged = format!("{text}{}", frag.split("[workload]\n").nth(1).unwrap());
    let cfg = dtsim::config::parse_str(&merged).unwrap();
    assert!(cfg.edge.semantic_kb > 0.0);
}

#[test]
fn unreachable_band_exits_3_with_nearest_value() {
    let o = dtsim(&["calibrate", "--centralized", "0.001,0.002"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nearest achievable"));
    let o = dtsim(&["calibrate", "--multilayer", "0.4,0.3"]);
    assert_eq!(o.status.code(), Some(1));
}
