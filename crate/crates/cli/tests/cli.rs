use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("steinflow-cli-{}-{name}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn steinflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steinflow"))
        .args(args)
        .output()
        .unwrap()
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let out = dir.join("out.csv");
    let text = format!(
        r#"
[target]
kind = "gaussian"
mean = [0.0]
covariance = [[1.0]]

[kernel]
kind = "linear"

[sampler]
nu = 0.5
step = "constant"
step_size = 0.05

[run]
particles = 20
iters = 5
replicates = 2
seed = 9
init_std = [2.0]
output = "{}"
{extra}
"#,
        out.display()
    );
    let path = dir.join("cfg.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_writes_csv_and_is_deterministic() {
    let dir = scratch("run");
    let cfg = small_config(&dir, "");
    let first = steinflow(&["run", cfg.to_str().unwrap()]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let a = fs::read(dir.join("out.csv")).unwrap();
    let text = String::from_utf8(a.clone()).unwrap();
    assert!(text.starts_with("replicate,iteration,wall_ms,ksd2,reg_ksd2,mse_h1,mse_h2,mse_h3\n"));
    assert!(!text.contains('\r'));
    // header plus two replicates of iterations 0..=5
    assert_eq!(text.lines().count(), 1 + 2 * 6);

    assert!(steinflow(&["run", cfg.to_str().unwrap()]).status.success());
    assert_eq!(a, fs::read(dir.join("out.csv")).unwrap());
}

#[test]
fn misspelled_key_fails_with_its_name() {
    let dir = scratch("badkey");
    let cfg = small_config(&dir, "itres = 3");
    let out = steinflow(&["run", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("run.itres"), "{err}");
}

#[test]
fn missing_config_fails() {
    let out = steinflow(&["diagnose", "/nonexistent/steinflow.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonexistent"));
}

#[test]
fn gaussian_oracle_and_diagnose_write_tables() {
    let dir = scratch("oracle");
    let cfg = small_config(&dir, "");
    let out = steinflow(&["gaussian-oracle", cfg.to_str().unwrap(), "--delta", "0.1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.join("out.csv")).unwrap();
    assert!(text.starts_with("n,rel_err,kl_closed,bound_rhs\n"));

    let out = steinflow(&["diagnose", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.join("out.csv")).unwrap();
    assert!(text.starts_with("replicate,iteration,ksd2,reg_ksd2\n"));
}

#[test]
fn sweep_writes_one_file_per_point_and_a_summary() {
    let dir = scratch("sweep");
    let cfg = small_config(&dir, "");
    let out = steinflow(&["sweep", cfg.to_str().unwrap(), "--nu", "0.5,1", "--particles", "10,20"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.join("out.csv")).unwrap();
    assert!(summary.starts_with("nu,particles,iteration,"));
    let points = fs::read_dir(&dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("out_nu"))
        .count();
    assert_eq!(points, 4);
}

#[test]
fn bench_rejects_nu_one() {
    let dir = scratch("bench");
    let cfg = small_config(&dir, "");
    let text = fs::read_to_string(&cfg).unwrap().replace("nu = 0.5", "nu = 1.0");
    fs::write(&cfg, text).unwrap();
    let out = steinflow(&["bench", cfg.to_str().unwrap(), "--counts", "10,20"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sampler.nu"));
}
