use std::fs;
use std::path::Path;
use std::process::Command;

use icefield::io::Manifest;

fn icefield(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_icefield")).args(args).output().unwrap();
    let text = String::from_utf8_lossy(&out.stderr).to_string() + &String::from_utf8_lossy(&out.stdout);
    (out.status.code().unwrap_or(-1), text)
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SIMULATE: &str = "mode = \"simulate\"\nseed = 3\n[simulate]\nn_obs = 40\nmesh_edge = 0.1\n";

#[test]
fn missing_seed_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "mode = \"simulate\"\n");
    let (code, text) = icefield(&["--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("seed"), "{text}");
}

#[test]
fn all_config_errors_are_listed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "mode = \"transport\"\nseed = 1\nextra = 2\n[transport]\ndx = -1.0\n");
    let (code, text) = icefield(&["--config", &cfg, "--out", "unused"]);
    assert_eq!(code, 2);
    assert!(text.contains("extra") && text.contains("transport.dx"), "{text}");
}

#[test]
fn io_failure_exits_with_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", SIMULATE);
    let blocker = write(tmp.path(), "file", "");
    let (code, text) = icefield(&["--config", &cfg, "--out", &blocker]);
    assert_eq!(code, 4, "{text}");
}

#[test]
fn repeated_runs_hash_identically_and_tampering_is_caught() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", SIMULATE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let (code, text) = icefield(&["--config", &cfg, "--out", d.to_str().unwrap()]);
        assert_eq!(code, 0, "{text}");
    }
    let (ma, mb) = (Manifest::read(&a).unwrap(), Manifest::read(&b).unwrap());
    assert_eq!(ma.files, mb.files);
    assert_eq!(ma.config_sha256, mb.config_sha256);
    let names: Vec<&str> = ma.files.iter().map(|f| f.path.as_str()).collect();
    assert_eq!(names, ["mesh.csv", "observations.csv", "polygon.csv", "truth.csv"]);
    assert_eq!(icefield(&["--verify", a.to_str().unwrap()]).0, 0);
    fs::write(a.join("truth.csv"), "group,item,value\n").unwrap();
    let (code, text) = icefield(&["--verify", a.to_str().unwrap()]);
    assert_ne!(code, 0);
    assert!(text.contains("truth.csv: hash mismatch"), "{text}");
}

#[test]
fn seed_flag_overrides_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", SIMULATE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(icefield(&["--config", &cfg, "--out", a.to_str().unwrap()]).0, 0);
    assert_eq!(icefield(&["--config", &cfg, "--seed", "4", "--out", b.to_str().unwrap()]).0, 0);
    let (ma, mb) = (Manifest::read(&a).unwrap(), Manifest::read(&b).unwrap());
    assert_eq!(mb.seed, 4);
    assert_ne!(ma.files, mb.files);
}

#[test]
fn simulated_data_feeds_a_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let cfg = write(tmp.path(), "s.toml", SIMULATE);
    assert_eq!(icefield(&["--config", &cfg, "--out", sim.to_str().unwrap()]).0, 0);
    let fit = write(
        tmp.path(),
        "f.toml",
        "mode = \"fit\"\nseed = 1\n[paths]\nmesh = \"sim/mesh.csv\"\nobservations = \"sim/observations.csv\"\n\
         [fit]\nestimate_hyperparameters = false\ngrid_resolution = 0.1\n",
    );
    let out = tmp.path().join("fit");
    let (code, text) = icefield(&["--config", &fit, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{text}");
    for f in ["coefficients.csv", "field_vertices.csv", "field_mean.csv", "field_sd.csv", "summary.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(!out.join(".incomplete").exists());
}
