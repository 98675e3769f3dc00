use std::fs;
use std::process::Command;

use kme_filter::harness::{run_experiment, ExperimentOptions};
use kme_filter::scenarios::{load_bundled, Overrides, Scenario};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kme-track"))
}

fn read_tree(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        out.push((entry.strip_prefix(dir).unwrap().display().to_string(), fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

#[test]
fn cli_outputs_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/a2.json");
    for name in ["first", "second"] {
        let out = bin()
            .args(["--scenario", scenario, "--runs", "1", "--seed", "7", "--horizon", "20", "--with-baseline", "--with-centralized", "--out"])
            .arg(tmp.path().join(name))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = read_tree(&tmp.path().join("first"));
    let b = read_tree(&tmp.path().join("second"));
    assert_eq!(a.len(), 3);
    assert_eq!(a, b);

    let summary: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("first/summary.json")).unwrap()).unwrap();
    for key in ["scenario", "seed", "runs", "methods", "comm", "divergences"] {
        assert!(summary.get(key).is_some(), "missing {key}");
    }
    for method in ["dnf", "cnf", "baseline"] {
        let t = &summary["methods"][method];
        assert!(t["aee_pos"].as_f64().unwrap() <= t["rmse_pos"].as_f64().unwrap());
        assert!(t["aee_vel"].as_f64().unwrap() <= t["rmse_vel"].as_f64().unwrap());
    }
    let trace = fs::read_to_string(tmp.path().join("first/traces/run_0000.csv")).unwrap();
    assert_eq!(
        trace.lines().next().unwrap(),
        "k,node,x_hat_0,x_hat_1,x_hat_2,x_hat_3,trace_P,sum_nu,qp_iters,consensus_rounds,bytes_gamma_xi,bytes_raw"
    );
}

#[test]
fn cli_bundled_name_and_bad_file() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = bin()
        .args(["--scenario", "b", "--runs", "1", "--horizon", "3", "--out"])
        .arg(tmp.path().join("b"))
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));

    let bad = tmp.path().join("bad.json");
    let text = load_bundled("a1").unwrap().to_json().replace("\"samples\"", "\"sampels\"");
    fs::write(&bad, text).unwrap();
    let out = bin().arg("--scenario").arg(&bad).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sampels") && err.contains("line"), "{err}");
}

#[test]
fn centralized_and_distributed_agree_at_full_consensus() {
    let mut cfg = load_bundled("a2").unwrap();
    cfg.apply(&Overrides {
        runs: Some(2),
        horizon: Some(15),
        consensus_rounds: Some(0),
        consensus_tol: Some(1e-12),
        ..Default::default()
    })
    .unwrap();
    let scenario = Scenario::from_config(cfg).unwrap();
    let exp = run_experiment(
        &scenario,
        ExperimentOptions {
            with_centralized: true,
            with_baseline: false,
        },
    )
    .unwrap();
    assert_eq!(exp.summary.divergences, 0);
    let gap = exp.summary.max_dnf_cnf_gap.unwrap();
    assert!(gap <= 1e-6, "gap {gap}");
}

#[test]
fn summary_is_reproducible_in_process() {
    let mut cfg = load_bundled("a1").unwrap();
    cfg.apply(&Overrides {
        runs: Some(3),
        horizon: Some(5),
        ..Default::default()
    })
    .unwrap();
    let scenario = Scenario::from_config(cfg).unwrap();
    let a = run_experiment(&scenario, ExperimentOptions::default()).unwrap();
    let b = run_experiment(&scenario, ExperimentOptions::default()).unwrap();
    assert_eq!(serde_json::to_string(&a.summary).unwrap(), serde_json::to_string(&b.summary).unwrap());
}
