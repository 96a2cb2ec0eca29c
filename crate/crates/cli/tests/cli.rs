use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "\
mesh.M = 15
graph = sign
initial = sine:1
noise.modes = 4
solver.T = 0.1
solver.dt = 1e-2
study.kind = simulate
run.paths = 30
";

// Yosida parameters so large that the drift is negligible: the differences
// decay like 1/λ and the Cauchy slope comes out negative.
const FAILING: &str = "\
mesh.M = 15
graph = sign
initial = sine:1
noise.modes = 4
solver.T = 0.1
solver.dt = 1e-2
study.kind = cauchy
study.lambdas = 1000, 500, 250, 125
run.paths = 30
";

fn monospde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_monospde")).args(args).output().expect("spawn monospde")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Runs `text` into `<tmp>/<name>` and returns the artifact directory.
fn run_into(tmp: &TempDir, name: &str, text: &str, extra: &[&str]) -> PathBuf {
    let cfg = write_config(tmp.path(), &format!("{name}.cfg"), text);
    let out = tmp.path().join(name);
    let mut args = vec!["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = monospde(&args);
    assert!(o.status.success(), "run failed: {}", stderr(&o));
    out
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| (e.path().strip_prefix(dir).unwrap().display().to_string(), fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn validate_names_the_regime() {
    let smoke = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.cfg");
    let o = monospde(&["validate", smoke.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("regime: strict_mild"), "{}", stdout(&o));
    assert!(stdout(&o).contains("digest: "));

    let tmp = TempDir::new().unwrap();
    let bad = write_config(
        tmp.path(),
        "bad.cfg",
        "graph = signed_power:2\nsolver.p = 1\nsolver.q = 4\nsolver.regime = strict_mild\n",
    );
    let o = monospde(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("p* = 1.5 ≤ d = 2"), "{}", stderr(&o));
}

#[test]
fn too_few_paths_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.cfg", SMALL);
    let o = monospde(&["validate", cfg.to_str().unwrap(), "--paths", "29"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("below the minimum 30"), "{}", stderr(&o));
}

#[test]
fn unknown_and_duplicate_keys_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "typo.cfg", "mesh.m = 15\n");
    let o = monospde(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mesh.m"), "{}", stderr(&o));

    let cfg = write_config(tmp.path(), "dup.cfg", "mesh.M = 15\nmesh.M = 31\n");
    let o = monospde(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical_and_thread_count_is_irrelevant() {
    let tmp = TempDir::new().unwrap();
    let a = run_into(&tmp, "a", SMALL, &["--dump-states"]);
    let b = run_into(&tmp, "b", SMALL, &["--dump-states", "--threads", "1"]);
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.iter().any(|(n, _)| n.starts_with("trajectories/")));
    assert_eq!(fa, fb);

    let o = monospde(&["report", a.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("overall: PASS"));
}

#[test]
fn report_exits_one_on_a_failed_verdict() {
    let tmp = TempDir::new().unwrap();
    let dir = run_into(&tmp, "fail", FAILING, &[]);
    let o = monospde(&["report", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("overall: FAIL (cauchy)"));
}

#[test]
fn tampering_is_an_integrity_error() {
    let tmp = TempDir::new().unwrap();
    let dir = run_into(&tmp, "t", SMALL, &[]);
    let path = dir.join("simulate.csv");
    let text = fs::read_to_string(&path).unwrap();
    let last = text.trim_end().rsplit_once(',').unwrap().0.to_string();
    // Flip the last verdict while keeping the digest column intact.
    fs::write(&path, format!("{last},{}\n", if text.trim_end().ends_with("true") { "false" } else { "true" })).unwrap();
    let o = monospde(&["report", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("integrity"), "{}", stderr(&o));
    assert!(stderr(&o).contains("simulate.csv"), "{}", stderr(&o));

    fs::write(dir.join("stray.txt"), "x").unwrap();
    let o = monospde(&["report", dir.to_str().unwrap()]);
    assert!(stderr(&o).contains("stray.txt is not listed"), "{}", stderr(&o));
}

#[test]
fn mixed_digests_are_refused() {
    let tmp = TempDir::new().unwrap();
    let a = run_into(&tmp, "a", SMALL, &[]);
    let b = run_into(&tmp, "b", SMALL, &["--seed", "7"]);
    fs::copy(b.join("simulate.csv"), a.join("simulate.csv")).unwrap();
    let o = monospde(&["report", a.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mixed config digests"), "{}", stderr(&o));

    let c = run_into(&tmp, "c", SMALL, &[]);
    fs::copy(b.join("config.echo"), c.join("config.echo")).unwrap();
    let o = monospde(&["report", c.to_str().unwrap()]);
    assert!(stderr(&o).contains("mixed config digests"), "{}", stderr(&o));
}
