use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ekick(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ekick")).args(args).output().expect("spawn ekick")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn recoil_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.json");
    let run = || {
        let o = ekick(&["recoil", "--energy-ratio", "3", "--no-refine", "--output", path(&out)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(&out).unwrap()
    };
    let first = run();
    assert_eq!(first, run());
    let v: serde_json::Value = serde_json::from_slice(&first).unwrap();
    let row = &v["data"][0];
    assert_eq!(row["energy_ratio"], 3.0);
    assert_eq!(row["symmetry"], "p_x");
    assert!(row["p1"].as_f64().unwrap() > 0.0);
    assert_eq!(v["metadata"]["config"]["command"], "recoil");
}

#[test]
fn dump_config_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let first = ekick(&["sweep", "--solver", "nonrecoil", "--axis", "rho:0.1:1:3", "--p1lin", "2.5", "--dump-config"]);
    assert_eq!(first.status.code(), Some(0));
    fs::write(&cfg, &first.stdout).unwrap();
    let second = ekick(&["sweep", "--config", path(&cfg), "--dump-config"]);
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"p1lin": 1, "unknown_key": 3}"#).unwrap();
    let o = ekick(&["recoil", "--config", path(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown_key"));

    let o = ekick(&["recoil", "--rho", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rho"));

    let missing = dir.path().join("no/such/dir/out.csv");
    assert_eq!(ekick(&["pointlike", "--output", path(&missing)]).status.code(), Some(2));

    // a near-threshold point on a far too coarse grid: written, flagged unconverged
    let coarse = dir.path().join("coarse.json");
    let o = ekick(&[
        "recoil",
        "--points",
        "11",
        "--energy-ratio",
        "1.01",
        "--grid-mode",
        "symmetric-full",
        "--no-refine",
        "--output",
        path(&coarse),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&coarse).unwrap()).unwrap();
    assert_eq!(v["data"][0]["converged"], false);
}

#[test]
fn per_symmetry_sweep_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("panels");
    let o = ekick(&[
        "sweep",
        "--solver",
        "nonrecoil",
        "--axis",
        "rho:0.1:1:3",
        "--axis",
        "p1lin:0.5:2:2",
        "--each-symmetry",
        "p_x",
        "--each-symmetry",
        "d_z2",
        "--output",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for s in ["p_x", "d_z2"] {
        let csv = fs::read_to_string(out.join(format!("fig2_{s}.csv"))).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines[0].starts_with("index,symmetry,rho,p1lin,"));
        assert!(lines[1..].iter().all(|l| l.contains(s)));
        assert!(out.join(format!("fig2_{s}.csv.meta.json")).exists());
    }
}

#[test]
fn all_failed_sweep_writes_header_and_failure_list() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty.csv");
    let o = ekick(&["sweep", "--solver", "recoil", "--axis", "energy_ratio:1:1.00000001:2", "--output", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 1);
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("empty.csv.meta.json")).unwrap()).unwrap();
    let failures = meta["diagnostics"]["failures"].as_array().unwrap();
    assert_eq!(failures.len(), 2);
    assert_eq!(failures[0]["threshold_exclusion"], true);
}
