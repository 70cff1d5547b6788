use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn magray(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magray")).current_dir(dir).args(args).output().expect("spawn magray")
}

fn config(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name).to_string_lossy().into_owned()
}

fn manifest(dir: &Path, stem: &str) -> Value {
    let text = std::fs::read_to_string(dir.join(format!("{stem}.manifest.json"))).expect("manifest");
    serde_json::from_str(&text).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let args = ["decompose", "--m", "2", "--seed", "11", "--out", "d.csv"];
    assert!(magray(a.path(), &args).status.success());
    assert!(magray(b.path(), &[&args[..], &["--workers", "2"]].concat()).status.success());
    let (ma, mb) = (manifest(a.path(), "d"), manifest(b.path(), "d"));
    assert_eq!(ma["checksums"], mb["checksums"]);
    assert_eq!(ma["checksums"].as_array().unwrap().len(), 5);
    assert_eq!(ma["workers"], 1);
    assert_eq!(mb["workers"], 2);

    let c = TempDir::new().unwrap();
    assert!(magray(c.path(), &["decompose", "--m", "2", "--seed", "12", "--out", "d.csv"]).status.success());
    assert_ne!(ma["checksums"], manifest(c.path(), "d")["checksums"]);
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let dir = TempDir::new().unwrap();
    let unknown = write(dir.path(), "u.json", r#"{"surface": {"nx": 16, "ny": 16}, "params": {"bogus": 1}}"#);
    let o = magray(dir.path(), &["simulate", "--config", &unknown]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("params"), "{}", stderr(&o));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));

    let bad_type = write(dir.path(), "t.json", r#"{"surface": {"nx": "sixteen", "ny": 16}}"#);
    let o = magray(dir.path(), &["simulate", "--config", &bad_type]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("surface.nx"), "{}", stderr(&o));

    let odd = write(dir.path(), "g.json", r#"{"surface": {"nx": 15, "ny": 16}}"#);
    assert_eq!(magray(dir.path(), &["simulate", "--config", &odd]).status.code(), Some(2));

    let o = magray(dir.path(), &["simulate", "--config", &config("decompose.json")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("experiment"));

    let missing = magray(dir.path(), &["simulate", "--config", "does-not-exist.json"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(!dir.path().join("out.manifest.json").exists());
}

#[test]
fn core_errors_map_to_exit_codes() {
    let dir = TempDir::new().unwrap();
    let capped = write(dir.path(), "c.json", r#"{"surface": {"nx": 16, "ny": 16}, "params": {"max_iter": 1}}"#);
    let o = magray(dir.path(), &["decompose", "--config", &capped, "--m", "2"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let o = magray(dir.path(), &["spectrum", "--N", "32"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = magray(dir.path(), &["rigidity", "--orbits", "none.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_decompose_config_leaves_a_solenoidal_part() {
    let dir = TempDir::new().unwrap();
    let o = magray(dir.path(), &["decompose", "--config", &config("decompose.json"), "--out", "dec.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(dir.path(), "dec");
    let rel = m["results"]["dmu_star_H_rel"].as_f64().unwrap();
    assert!(rel < 1e-8, "{rel}");
    assert!(m["results"]["orthogonality"].as_f64().unwrap().abs() < 1e-10);
    for f in ["dec.csv", "dec.potential.bin", "dec.potential.json", "dec.solenoidal.bin", "dec.solenoidal.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn pair_files_round_trip_and_check_the_grid() {
    let dir = TempDir::new().unwrap();
    let small = write(
        dir.path(),
        "s.json",
        r#"{"surface": {"nx": 16, "ny": 16}, "force": {"kind": "magnetic", "b": [{"kx": 0, "ky": 0, "re": 0.4}]}}"#,
    );
    assert!(magray(dir.path(), &["decompose", "--config", &small, "--out", "d.csv"]).status.success());
    // the solenoidal part is already solenoidal
    let o = magray(dir.path(), &["decompose", "--config", &small, "--pair", "d.solenoidal.bin", "--out", "again.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(manifest(dir.path(), "again")["results"]["iterations"], 0);

    let o = magray(dir.path(), &["decompose", "--pair", "d.solenoidal.bin", "--out", "wrong.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("16x16"), "{}", stderr(&o));
}

#[test]
fn shipped_symbol_probe_matches_the_prediction() {
    let dir = TempDir::new().unwrap();
    let o = magray(dir.path(), &["probe-symbol", "--config", &config("probe_symbol.json"), "--out", "p.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rel = manifest(dir.path(), "p")["results"]["max_rel_err"].as_f64().unwrap();
    assert!(rel <= 0.12, "{rel}");
    let csv = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert!(csv.starts_with("component,re_measured,im_measured,predicted,rel_err"));
}

#[test]
fn orbit_pipeline() {
    let dir = TempDir::new().unwrap();
    let torus = config("torus.json");
    let o = magray(dir.path(), &["orbits", "--config", &torus, "--out", "orbits.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let file: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("orbits.json")).unwrap()).unwrap();
    let orbits = file["orbits"].as_array().unwrap();
    assert!(!orbits.is_empty());
    assert!(orbits.iter().all(|o| o["closure_defect"].as_f64().unwrap() < 1e-8));

    for (cmd, stem) in [("xray", "x"), ("rigidity", "r"), ("stability", "s")] {
        let out = format!("{stem}.csv");
        let o = magray(dir.path(), &[cmd, "--config", &torus, "--orbits", "orbits.json", "--out", &out]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    assert_eq!(manifest(dir.path(), "x")["results"]["orbits"].as_u64().unwrap() as usize, orbits.len());
    assert!(manifest(dir.path(), "r")["results"]["kbar_lower"].as_f64().unwrap() > 0.0);
    assert!(manifest(dir.path(), "s")["results"]["spearman"].as_f64().unwrap() > 0.8);
}
