use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use passim::Manifest;
use serde_json::{json, Value};

fn abc_config(task: &str, n: usize, j: usize) -> Value {
    json!({
        "task": task,
        "model": {
            "kind": "abc",
            "grid": {"dim": 2, "n_per_axis": n},
            "admissibility": {"a_lower": 0.5},
            "params": {
                "a": {"kind": "gaussian-bump", "center": [0.4, 0.5], "width": 0.2, "amplitude": 0.3, "base": 1.0},
                "b": [{"kind": "constant", "value": 0.05}, {"kind": "sinusoid", "wavenumber": [0.5, 0.0], "amplitude": 0.05}],
                "c": {"kind": "gaussian-bump", "center": [0.6, 0.5], "width": 0.15, "amplitude": 0.3}
            }
        },
        "source": {"kind": "white", "J": j, "seed": 5}
    })
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn passim(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_passim")).args(args).output().unwrap();
    let text = format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    (out.status.code().unwrap_or(-1), text)
}

fn run(task: &str, config: &Path, output: &Path, extra: &[&str]) -> (i32, String) {
    let mut args = vec![task, "--config", config.to_str().unwrap(), "--output", output.to_str().unwrap()];
    args.extend_from_slice(extra);
    passim(&args)
}

fn files_with_suffix(dir: &Path, prefix: &str, suffix: &str) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| {
            let name = e.as_ref().unwrap().file_name().into_string().unwrap();
            name.starts_with(prefix) && name.ends_with(suffix)
        })
        .count()
}

#[test]
fn forward_writes_one_file_per_state_plus_kernel_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "f.json", &abc_config("forward", 8, 8));
    let out = tmp.path().join("out");
    let (code, text) = run("forward", &cfg, &out, &[]);
    assert_eq!(code, 0, "{text}");
    assert_eq!(files_with_suffix(&out, "state_", ".bin"), 8);
    assert_eq!(files_with_suffix(&out, "state_", ".json"), 8);
    assert_eq!(files_with_suffix(&out, "kernel", ".bin"), 1);
    assert!(out.join("manifest.json").exists());
    let kernel = passim::io::read_kernel(&out.join("kernel.bin"), passim_core::grid::Grid::uniform(2, 8, 1.0).unwrap())
        .unwrap();
    assert!(kernel.is_covariance());
    let m = Manifest::read(&out.join("manifest.json")).unwrap();
    assert_eq!(m.solves.total, 8);
    assert_eq!(m.config_sha256.len(), 64);
    assert!(m.outputs.contains(&"state_007.bin".to_string()));
}

#[test]
fn metrics_are_byte_identical_across_runs_and_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = abc_config("tcc-scan", 8, 4);
    cfg["tcc_scan"] = json!({"blocks": ["c"], "count": 4});
    let path = write_config(tmp.path(), "t.json", &cfg);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run("tcc-scan", &path, &a, &["--threads", "1"]).0, 0);
    assert_eq!(run("tcc-scan", &path, &b, &["--threads", "3"]).0, 0);
    for f in ["tcc_scan.csv", "tcc_summary.csv"] {
        let x = fs::read(a.join(f)).unwrap();
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f} differs");
        assert!(!x.contains(&b'\r'));
    }
    let header = fs::read_to_string(a.join("tcc_scan.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), "t,E_lin,image_diff,cross_term,bound_ratio");
    assert_eq!(header.lines().count(), 5);
}

#[test]
fn adjoint_test_passes_and_reports_half_the_solves() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), "a.json", &abc_config("adjoint-test", 12, 6));
    let out = tmp.path().join("out");
    let (code, text) = run("adjoint-test", &path, &out, &[]);
    assert_eq!(code, 0, "{text}");
    let m = Manifest::read(&out.join("manifest.json")).unwrap();
    let err = m.assertions.iter().find(|a| a.name == "adjoint_identity_max_rel_error").unwrap();
    assert!(err.value <= 1e-8);
    let s = passim::solve_count_report(&m).unwrap();
    assert_eq!((s.extended_adjoint, s.direct, s.ratio), (144, 288, 0.5));
    let (code, text) = passim(&["report", "--manifest", out.join("manifest.json").to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(text.contains("ratio:                0.5"), "{text}");
    let rows = fs::read_to_string(out.join("adjoint_test.csv")).unwrap();
    assert_eq!(rows.lines().count(), 21);
}

#[test]
fn lowrank_baseline_ratio_is_rank_over_two_n() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = abc_config("adjoint-test", 8, 4);
    cfg["adjoint_test"] = json!({"pairs": 3, "route": "lowrank", "data_rank": 5});
    let path = write_config(tmp.path(), "a.json", &cfg);
    let out = tmp.path().join("out");
    assert_eq!(run("adjoint-test", &path, &out, &[]).0, 0);
    let s = passim::solve_count_report(&Manifest::read(&out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(s.extended_adjoint, 5);
    assert_eq!(s.ratio, 5.0 / 128.0);
}

#[test]
fn seed_flag_overrides_the_source_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), "f.json", &abc_config("forward", 6, 2));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run("forward", &path, &a, &[]).0, 0);
    assert_eq!(run("forward", &path, &b, &["--seed", "99"]).0, 0);
    assert_ne!(fs::read(a.join("kernel.bin")).unwrap(), fs::read(b.join("kernel.bin")).unwrap());
    assert_eq!(Manifest::read(&b.join("manifest.json")).unwrap().seeds.source, 99);
}

#[test]
fn reconstruct_writes_trace_with_final_stop_reason() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = abc_config("reconstruct", 8, 4);
    cfg["reconstruct"] = json!({
        "k_max": 15,
        "noise_level": 0.01,
        "active_blocks": ["c"],
        "initial": {"c": {"kind": "constant", "value": 0.0}},
        "expect": {"stop_reason": "discrepancy"}
    });
    let path = write_config(tmp.path(), "r.json", &cfg);
    let out = tmp.path().join("out");
    let (code, text) = run("reconstruct", &path, &out, &[]);
    assert_eq!(code, 0, "{text}");
    let trace = fs::read_to_string(out.join("landweber_trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "iteration,residual,param_error,mu,solves_cumulative,stop_reason");
    assert!(lines.last().unwrap().ends_with(",discrepancy"));
    assert!(lines[1..lines.len() - 1].iter().all(|l| l.ends_with(',')));
    assert_eq!(files_with_suffix(&out, "theta_final_", ".bin"), 4);
    let m = Manifest::read(&out.join("manifest.json")).unwrap();
    assert!(m.seeds.noise.is_some());
    assert_eq!(passim::solve_count_report(&m).unwrap().ratio, 0.5);
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");

    let broken = tmp.path().join("broken.json");
    fs::write(&broken, "{ not json").unwrap();
    assert_eq!(run("forward", &broken, &out, &[]).0, 2);

    let wrong_task = write_config(tmp.path(), "w.json", &abc_config("forward", 6, 2));
    assert_eq!(run("reconstruct", &wrong_task, &out, &[]).0, 2);

    let mut low = abc_config("forward", 6, 2);
    low["model"]["params"]["a"] = json!({"kind": "constant", "value": 0.1});
    let low = write_config(tmp.path(), "low.json", &low);
    let (code, text) = run("forward", &low, &out, &[]);
    assert_eq!(code, 3, "{text}");

    let mut strict = abc_config("tcc-scan", 6, 2);
    strict["tcc_scan"] = json!({"count": 3, "e_lin_slope": [5.0, 6.0]});
    let strict = write_config(tmp.path(), "s.json", &strict);
    let (code, text) = run("tcc-scan", &strict, &out, &[]);
    assert_eq!(code, 1, "{text}");
    assert!(text.contains("FAIL e_lin_slope"));

    let (code, _) = passim(&["report", "--manifest", out.join("manifest.json").to_str().unwrap()]);
    assert_eq!(code, 2);
}

#[test]
fn example_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        let (cfg, _) = passim::ExperimentConfig::load(&p).unwrap();
        cfg.setup(cfg.source.seed).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        seen += 1;
    }
    assert_eq!(seen, 5);
}
