use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_orthosonar"))
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

#[test]
fn render_writes_both_images() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("frame");
    let status = bin()
        .args(["render", "--scene"])
        .arg(repo("scenes/piling_marina.toml"))
        .args(["--pose", "0,0,0,-15", "--out"])
        .arg(&stem)
        .status()
        .unwrap();
    assert!(status.success());
    for side in ["horizontal", "vertical"] {
        let bytes = std::fs::read(dir.path().join(format!("frame_{side}.pgm"))).unwrap();
        assert!(bytes.starts_with(b"P5"));
    }
}

#[test]
fn run_with_short_route_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    std::fs::write(
        &cfg,
        format!(
            "scene = {:?}\nseed = 3\n[route]\nspeed = 0.5\nwaypoints = [[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]]\n",
            repo("scenes/piling_marina.toml")
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let res = bin()
        .args(["run", "--mode", "submap", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stdout).contains("keyframes"));
    assert!(out.join("map_submapping.ply").is_file());
    assert!(out.join("coverage.csv").is_file());
}

#[test]
fn bad_inputs_fail_cleanly() {
    let res = bin()
        .args(["run", "--config", "/nonexistent/config.toml"])
        .output()
        .unwrap();
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("loading"));
    let res = bin()
        .args(["render", "--scene"])
        .arg(repo("scenes/aircraft.toml"))
        .args(["--pose", "1,2", "--out", "/tmp/x"])
        .output()
        .unwrap();
    assert!(!res.status.success());
}
