use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn skidgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skidgp")).args(args).output().expect("spawn skidgp")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("skidgp-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn usage_errors_exit_one() {
    let out = skidgp(&["bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = skidgp(&["identify", "--dataset", "missing.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));

    assert_eq!(skidgp(&["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_dataset_reports_row() {
    let dir = scratch("bad");
    let csv = dir.join("bad.csv");
    fs::write(&csv, "t,x,y,theta,v_ref,omega_ref\n0,0,0,0,0.1,0\n0.1,0,zero,0,0.1,0\n").unwrap();
    let out = skidgp(&["identify", "--dataset", csv.to_str().unwrap(), "--out", dir.join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row"));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn unexcited_log_is_a_numerical_failure() {
    let dir = scratch("flat");
    let csv = dir.join("flat.csv");
    let mut text = String::from("t,x,y,theta,v_ref,omega_ref,v,omega\n");
    for k in 0..50 {
        text += &format!("{},0,0,0,0,0,0,0\n", k as f64 * 0.1);
    }
    fs::write(&csv, text).unwrap();
    let out = skidgp(&["identify", "--dataset", csv.to_str().unwrap(), "--out", dir.join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn synth_then_identify_writes_manifest() {
    let dir = scratch("ok");
    let data = dir.join("data");
    assert!(skidgp(&["synth", "--out", data.to_str().unwrap()]).status.success());
    let id = dir.join("id");
    let out = skidgp(&[
        "identify",
        "--dataset",
        data.join("ident/ident.csv").to_str().unwrap(),
        "--out",
        id.to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(id.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["subcommand"], "identify");
    let outputs: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|o| o["path"].as_str().unwrap()).collect();
    assert!(outputs.contains(&"params.json") && outputs.contains(&"report.json"));
    let _ = fs::remove_dir_all(&dir);
}
