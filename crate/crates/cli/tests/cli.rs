use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../paper.cfg")
}

fn echoguide(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echoguide"))
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

#[test]
fn modes_writes_one_guided_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = echoguide(&["modes"], &config(), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = rows(&dir.path().join("modes.csv"));
    assert_eq!(rows.len(), 1);
    let frac_sub: f64 = rows[0][7].parse().unwrap();
    assert!((0.05..=0.09).contains(&frac_sub));
}

#[test]
fn echo2p_sweep_refits_t2() {
    let dir = tempfile::tempdir().unwrap();
    let out = echoguide(&["echo2p", "--tau-us", "10:150:20"], &config(), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(rows(&dir.path().join("echo2p_decay.csv")).len(), 20);
    let t2_us: f64 = rows(&dir.path().join("echo2p_fit.csv"))[0][0].parse().unwrap();
    assert!((t2_us / 70.0 - 1.0).abs() < 0.01, "{t2_us}");
}

#[test]
fn storage_sweep_flag_sets_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = echoguide(&["echo3p", "--T-s", "0.1:1000:9"], &config(), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = rows(&dir.path().join("echo3p_decay.csv"));
    let t: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(t.len(), 9);
    assert!((t[1] / t[0] - 10f64.powf(0.5)).abs() < 1e-4);
}

#[test]
fn config_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    let text = std::fs::read_to_string(config()).unwrap();
    std::fs::write(&bad, format!("{text}\nunexpected_key = 1\n")).unwrap();
    let out = echoguide(&["modes"], &bad, dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));

    let missing = echoguide(&["modes"], &dir.path().join("absent.cfg"), dir.path());
    assert_eq!(missing.status.code(), Some(2));

    let sweep = echoguide(&["echo2p", "--tau-us", "10:150"], &config(), dir.path());
    assert_eq!(sweep.status.code(), Some(2));

    let workers = echoguide(&["modes", "--workers", "0"], &config(), dir.path());
    assert_eq!(workers.status.code(), Some(2));
}

#[test]
fn physics_failure_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = echoguide(&["echo2p", "--tau-us", "1e6:2e6:4"], &config(), dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn output_is_identical_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, workers) in [(&a, "1"), (&b, "4")] {
        let out = echoguide(&["chip", "--workers", workers, "--seed", "7"], &config(), dir.path());
        assert_eq!(out.status.code(), Some(0));
        let out = echoguide(&["echo2p", "--workers", workers, "--seed", "7", "--noise", "0.02"], &config(), dir.path());
        assert_eq!(out.status.code(), Some(0));
    }
    for name in ["chip_devices.csv", "chip_total.csv", "echo2p_trace.csv", "echo2p_decay.csv", "echo2p_fit.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn verify_prints_every_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let out = echoguide(&["verify"], &config(), dir.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().filter(|l| l.starts_with("[PASS]") || l.starts_with("[FAIL]")).collect();
    assert_eq!(lines.len(), 11, "{stdout}");
    let all_pass = lines.iter().all(|l| l.starts_with("[PASS]"));
    assert_eq!(out.status.code(), Some(if all_pass { 0 } else { 1 }));
    assert!(dir.path().join("modes.csv").exists());
}
