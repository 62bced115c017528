use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
name = "tiny"
output_dir = "unused"

[system]
kind = "exact-double-well"

[partition]
cells_per_axis = 50

[noise]
t_min = -15.0
t_max = 15.0
dt = 0.01

[seeds]
list = [3, 4]

[schedule]
t_ladder = [0.0, 2.0, 5.0, 10.0]
time_step = 0.1
samples_per_cell = 3
stop_tol = 0.08

[sets.upper]
intervals = [[0.5, 1.0]]

[sets.one]
intervals = [[1.0, 1.0]]

[[analyses]]
op = "omega-limit"
id = "omega-upper"
set = "upper"
target = "one"
"#;

fn morseflow(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_morseflow"));
    cmd.args(args).env_remove("MORSEFLOW_OUTPUT_DIR");
    if let Some(dir) = env_out {
        cmd.env("MORSEFLOW_OUTPUT_DIR", dir);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn lists_bundled_scenarios() {
    let o = morseflow(&["list-scenarios"], None);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "double-well-morse");
}

#[test]
fn validates_bundled_and_rejects_broken_files() {
    let o = morseflow(&["validate", "double-well-morse"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = TINY
        .replace("dt = 0.01", "dt = -0.01")
        .replace("target = \"one\"", "target = \"nowhere\"");
    fs::write(&bad, text).unwrap();
    let o = morseflow(&["validate", bad.to_str().unwrap()], None);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.lines().count() >= 2, "{err}");
    assert!(err.contains("nowhere"), "{err}");

    let o = morseflow(&["validate", "/nonexistent/scenario.toml"], None);
    assert!(!o.status.success());
}

#[test]
fn run_writes_to_flag_or_environment_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();

    let flagged = dir.path().join("flag");
    let o = morseflow(
        &[
            "run",
            cfg.to_str().unwrap(),
            "--out",
            flagged.to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("omega-upper"));
    let report = fs::read_to_string(flagged.join("report.csv")).unwrap();
    assert!(report.starts_with("id,op,status,detail,files\n"));

    let via_env = dir.path().join("env");
    let o = morseflow(&["run", cfg.to_str().unwrap()], Some(&via_env));
    assert!(o.status.success());
    for name in ["report.csv", "omega-upper.csv", "omega-upper-history.csv"] {
        assert_eq!(
            fs::read(flagged.join(name)).unwrap(),
            fs::read(via_env.join(name)).unwrap(),
            "{name}"
        );
    }
}
