use std::path::Path;
use std::process::Command;

use fsieq::io::{verify_manifest, Manifest, MANIFEST};

const BIN: &str = env!("CARGO_BIN_EXE_fsieq");

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_slice(&std::fs::read(dir.join(MANIFEST)).unwrap()).unwrap()
}

fn fsieq(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).env_remove("FSIEQ_THREADS").output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

const SINGLE: &str = r#"{"scenario":"single_equilibrium","body":{"shape":"sphere","radius":0.5},
  "grid":{"radius":4.0,"n":16},"params":{"lambda":0.05},"dump_fields":true}"#;

#[test]
fn validate_accepts_and_rejects() {
    let tmp = tempfile::tempdir().unwrap();
    let good = write(tmp.path(), "good.json", SINGLE);
    let (code, out, _) = fsieq(&["validate", good.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.contains("valid"));

    let bad = write(tmp.path(), "bad.json", &SINGLE.replace("0.5}", "-0.5}").replace("\"n\":16", "\"n\":15"));
    let (code, _, err) = fsieq(&["validate", bad.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("radius: -0.5") && err.contains("n must be even"), "{err}");

    let broken = write(tmp.path(), "broken.json", "{\n  \"scenario\": ,\n}");
    let (code, _, err) = fsieq(&["validate", broken.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("line 2"), "{err}");

    let (code, _, _) = fsieq(&["run", tmp.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(code, 1);
}

#[test]
fn single_run_writes_a_complete_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "single.json", SINGLE);
    let out = tmp.path().join("out");
    let (code, _, err) = fsieq(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--deterministic"]);
    assert_eq!(code, 0, "{err}");
    assert!(verify_manifest(&out).unwrap().is_empty());
    let manifest = manifest(&out);
    let names: Vec<_> = manifest.artifacts.iter().map(|a| a.path.clone()).collect();
    for want in ["history.csv", "summary.json", "perturbation_u.bin", "velocity_v.bin", "pressure.bin"] {
        assert!(names.iter().any(|n| n == want), "{want} missing from {names:?}");
    }
    assert_eq!(manifest.status, 0);
    assert!(manifest.deterministic);

    // tampering is detected
    std::fs::write(out.join("history.csv"), "changed").unwrap();
    assert_eq!(verify_manifest(&out).unwrap(), vec!["history.csv: hash mismatch".to_string()]);
}

#[test]
fn failed_sweep_points_give_partial_status() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "sweep.json",
        r#"{"scenario":"lambda_sweep","body":{"shape":"box","half_extents":[0.2,0.55,0.2]},"grid":{"radius":4.0,"n":24},
            "params":{"b_tilde":[0.0,0.8660254037844386,0.5]},"lifting":{"rho0":1.3,"eps":0.5,"rho_h":1.3},
            "lambdas":[0.01,40.0],"picard":{"damping":1.0,"max_iters":15}}"#,
    );
    let out = tmp.path().join("out");
    let (code, _, err) = fsieq(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(csv.contains("converged") && csv.contains("diverged"), "{csv}");
    assert_eq!(manifest(&out).status, 2);
}

#[test]
fn uniqueness_reports_every_start() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "u.json",
        r#"{"scenario":"uniqueness","body":{"shape":"box","half_extents":[0.2,0.55,0.2]},"grid":{"radius":4.0,"n":24},
            "params":{"lambda":0.02,"b_tilde":[0.0,0.8660254037844386,0.5]},"lifting":{"rho0":1.3,"eps":0.5,"rho_h":1.3}}"#,
    );
    let out = tmp.path().join("out");
    let (code, _, err) = fsieq(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(out.join("dispersion.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert!(rows.len() >= 3);
    assert!(rows.iter().all(|r| r.contains(",converged,")), "{csv}");
    assert!(rows.iter().any(|r| r.starts_with("theta_offset,")));
}
