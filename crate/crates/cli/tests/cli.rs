use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rewgm"));
    c.env_remove("REWGM_OUT");
    c
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn cqed_json_report_passes() {
    let out = bin().args(["cqed", "--format", "json", "--config"]).arg(config("pr_yso_resonator_a.cfg")).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["report"]["scenario"], "cavity_qed_numbers");
    let steps = v["report"]["steps"].as_array().unwrap();
    let crit = steps.iter().find(|s| s["name"] == "critical_numbers").unwrap();
    assert!((crit["outputs"]["N0"].as_f64().unwrap() / 2.15e5 - 1.0).abs() < 0.01);
}

#[test]
fn failed_check_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("er_yso.cfg")).unwrap()
        + "\n[[expect]]\nquantity = \"critical_numbers.N0\"\nvalue = 50.0\nrel_tol = 0.01\n";
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, text).unwrap();
    let out = bin().arg("cqed").arg("--config").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL critical_numbers.N0"));
}

#[test]
fn errors_exit_with_two() {
    let out = bin().args(["run", "nope", "--config"]).arg(config("er_yso.cfg")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown scenario"));
    let out = bin().arg("cqed").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("er_yso.cfg")).unwrap().replace("coupling_efficiency = 0.2", "coupling_efficiency = 1.3");
    let path = dir.path().join("eta.cfg");
    std::fs::write(&path, text).unwrap();
    let out = bin().arg("cqed").arg("--config").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("coupling_efficiency"));
}

#[test]
fn env_out_dir_and_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .env("REWGM_OUT", dir.path())
        .args(["run", "heating", "--config"])
        .arg(config("pr_yso_resonator_a.cfg"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("heating.report.json").exists());
    let out = bin().args(["fit", "--model", "heating", "--format", "json"]).arg(dir.path().join("heating.dat")).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["fit"]["model_name"], "heating_quadratic");
}

#[test]
fn fit_reads_model_from_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("decay.dat");
    let rows: String = (0..10).map(|i| {
        let t = 1e-5 * i as f64;
        format!("{t}, {}\n", (-2.0 * t / 68e-6).exp())
    }).collect();
    std::fs::write(&path, format!("# model: amp_2pe\n{rows}")).unwrap();
    let out = bin().arg("fit").arg(&path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("T2           6.800000e-5"), "{text}");
}
