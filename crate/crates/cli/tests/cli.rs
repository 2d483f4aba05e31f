use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn suspension(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_suspension")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

const TINY_RUN: &str = "\
[schedule]
n_per_axis = 2, 4
phi = 0.02, 0.008
seed = 11

[numerics]
grid_h_max = 0.1
sampler_spacing = 0.25
lp_cell = 0.25

[output]
beta_sweep = true
beta_range = 3, 7
";

#[test]
fn gen_then_validate_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("lattice.txt");
    let out = suspension(&["gen", "--n", "4", "--phi", "0.01", "-o", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = suspension(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));

    let rsa = dir.path().join("rsa.txt");
    let out = suspension(&["gen", "--generator", "rsa", "--n", "20", "--phi", "0.01", "-o", rsa.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(code(&suspension(&["validate", rsa.to_str().unwrap()])), 0);
}

#[test]
fn overlapping_configuration_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("overlap.txt");
    fs::write(&cfg, "SSL1\n2 1e-1 1e0 0\n0 0 0\n1.5e-1 0 0\n").unwrap();
    let out = suspension(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&suspension(&["gen", "--bogus"])), 2);
    assert_eq!(code(&suspension(&["selftest", "nonsense"])), 2);
    assert_eq!(code(&suspension(&["validate", "/nonexistent/config.txt"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "[numerics]\nwobble = 3\n").unwrap();
    let out = suspension(&["run", "--config", bad.to_str().unwrap(), "-o", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn kernel_selftest_passes() {
    let out = suspension(&["selftest", "kernels"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
}

#[test]
fn default_run_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("default.cfg");
    assert_eq!(code(&suspension(&["gen", "--run-config", "-o", path.to_str().unwrap()])), 0);
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.contains("[schedule]") && text.contains("seed = 20240611"));
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn tiny_run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, TINY_RUN).unwrap();
    let out_dir = dir.path().join("out");
    let out = suspension(&["--threads", "1", "run", "--config", cfg.to_str().unwrap(), "-o", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    assert_eq!(read(&out_dir, "config.echo"), TINY_RUN);
    assert!(read(&out_dir, "config.resolved").contains("reflect_tol"));
    let csv = read(&out_dir, "report.csv");
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("N,phi,"));
    let manifest = read(&out_dir, "manifest.txt");
    for key in ["root_seed = 11", "threads = 1", "entry_seed[1]", "beta_opt", "wall_seconds"] {
        assert!(manifest.contains(key), "manifest lacks {key}:\n{manifest}");
    }
    assert!(read(&out_dir, "beta_sweep.csv").lines().count() > 5);
    let svgs = fs::read_dir(&out_dir).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg")).count();
    assert_eq!(svgs, 6);
}

#[test]
fn norms_compares_sampled_fields() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "x,y,z,ux,uy,uz\n0,0,0,1,0,0\n1,0,0,0,0,0\n").unwrap();
    fs::write(&b, "x,y,z,ux,uy,uz\n0,0,0,1,0,0\n1,0,0,0,3,4\n").unwrap();
    let out = suspension(&["norms", "--a", a.to_str().unwrap(), "--b", b.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("points = 2"));
    assert!(text.contains("sup = 5e0"), "{text}");

    fs::write(&b, "x,y,z,ux,uy,uz\n0,0,0,1,0,0\n").unwrap();
    assert_eq!(code(&suspension(&["norms", "--a", a.to_str().unwrap(), "--b", b.to_str().unwrap()])), 2);
}
