use std::path::Path;
use std::process::Command;

fn localtb() -> Command {
    Command::new(env!("CARGO_BIN_EXE_localtb"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn gen_measure_surrogate_has_64_equal_atoms() {
    let out = localtb().args(["gen-measure", "lebesgue-surrogate", "k=3", "n=1"]).output().unwrap();
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let atoms = doc["atoms"].as_array().unwrap();
    assert_eq!(atoms.len(), 64);
    assert!(atoms.iter().all(|a| a[1].as_f64() == Some(1.0 / 64.0)));
}

#[test]
fn gen_measure_rejects_unknown_parameters() {
    let out = localtb().args(["gen-measure", "cantor", "k=3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_experiment_list_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"experiments": []}"#);
    let out_dir = dir.path().join("out");
    let out = localtb().args(["verify-all", "--config"]).arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["count"], 0);
    assert_eq!(summary["pass"], true);
}

#[test]
fn missing_measure_file_exits_two_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"measure": {"kind": "file", "path": "/definitely/missing/mu.json"}}"#);
    let out = localtb().args(["verify-all", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/missing/mu.json"));
}

#[test]
fn missing_config_and_bad_override_exit_two() {
    let out = localtb().args(["verify-all", "--config", "/definitely/missing/cfg.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = localtb().args(["classify", "--override", "grid.s=oops"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn measure_file_round_trip_through_config() {
    let dir = tempfile::tempdir().unwrap();
    let mu = dir.path().join("mu.json");
    let out = localtb().args(["gen-measure", "cantor", "depth=4", "--out"]).arg(&mu).output().unwrap();
    assert!(out.status.success());
    let cfg = write(
        dir.path(),
        "c.json",
        &format!(
            r#"{{"measure": {{"kind": "file", "path": {:?}}}, "experiments": ["measure"]}}"#,
            mu.display().to_string()
        ),
    );
    let out = localtb().args(["verify-all", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn zero_shift_classification_marks_boundary_cubes_bad() {
    let out = localtb()
        .args([
            "classify",
            "--zero-shifts",
            "--override",
            "grid.g_max=4",
            "--override",
            "grid.s=3",
            "--override",
            "grid.r=3",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let cubes = doc["cubes"].as_array().unwrap();
    // [0, 2^-j) touches the boundary of every unshifted ancestor
    let corner = cubes.iter().find(|c| c["generation"] == 4 && c["lo"][0].as_f64() == Some(0.0)).unwrap();
    assert_eq!(corner["good"], false);
}

#[test]
fn verify_subset_is_deterministic_and_report_renders_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"experiments": ["identities", {"name": "averaging", "draws": 100}, "final_sum"]}"#,
    );
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = localtb()
            .args(["verify-all", "--seed", "11", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["01-identities.json", "02-averaging.json", "03-final_sum.json", "summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = localtb().arg("report").arg(a.join("02-averaging.json")).output().unwrap();
    assert!(csv.status.success());
    let text = String::from_utf8(csv.stdout).unwrap();
    assert!(text.starts_with("draw,good_total,rejections\n"));
    assert_eq!(text.lines().count(), 101);
}

#[test]
fn sqfn_report_csv_columns() {
    let dir = tempfile::tempdir().unwrap();
    let sq = dir.path().join("sq.json");
    assert!(localtb().arg("sqfn").arg("--out").arg(&sq).status().unwrap().success());
    let csv = localtb().arg("report").arg(&sq).output().unwrap();
    let text = String::from_utf8(csv.stdout).unwrap();
    assert!(text.starts_with("generation,index,kind,t_lo,t_hi,value\n"));
    let decompose = localtb().arg("decompose").output().unwrap();
    let doc: serde_json::Value = serde_json::from_slice(&decompose.stdout).unwrap();
    assert!(doc["residual_norm"].as_f64().unwrap() <= 1e-10 * doc["f_norm"].as_f64().unwrap());
}
