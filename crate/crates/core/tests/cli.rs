use std::fs;
use std::path::{Path, PathBuf};

use fkmeasure::cli::{run, EXIT_INPUT, EXIT_OK, EXIT_SOLVER, EXIT_VERIFY};
use tempfile::TempDir;

const LINEAR: &str = r#"
[operator]
preset = "laplacian"

[domain]
kind = "interval"
a = 0.0
b = 1.0

[measure]
density = 1.0

[sim]
dt = 1e-3
paths = 2000
seed = 11

[picard]
grid = 11
measure_term = "pathwise"

[verify]
x0 = [0.5]
"#;

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("fkmeasure").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_writes_outputs_and_reruns_byte_identically() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "linear.toml", LINEAR);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(cli(&["solve", "--config", s(&cfg), "--out", s(&a)]), EXIT_OK);
    assert_eq!(cli(&["solve", "--config", s(&cfg), "--out", s(&b), "--threads", "3"]), EXIT_OK);
    let sol = fs::read_to_string(a.join("solution.csv")).unwrap();
    assert_eq!(sol, fs::read_to_string(b.join("solution.csv")).unwrap());
    let mut lines = sol.lines();
    assert_eq!(lines.next(), Some("x1,u,stderr"));
    assert_eq!(lines.count(), 11);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert!(report.is_object());
}

#[test]
fn seed_override_changes_the_estimate() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "linear.toml", LINEAR);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(cli(&["solve", "--config", s(&cfg), "--out", s(&a)]), EXIT_OK);
    assert_eq!(cli(&["solve", "--config", s(&cfg), "--out", s(&b), "--seed", "12"]), EXIT_OK);
    assert_ne!(fs::read(a.join("solution.csv")).unwrap(), fs::read(b.join("solution.csv")).unwrap());
}

#[test]
fn path_dump_is_opt_in() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "linear.toml", LINEAR);
    let out = dir.path().join("o");
    assert_eq!(cli(&["solve", "--config", s(&cfg), "--out", s(&out), "--paths", "200"]), EXIT_OK);
    assert!(!out.join("paths.csv").exists());
    assert_eq!(cli(&["solve", "--config", s(&cfg), "--out", s(&out), "--paths", "200", "--dump-paths"]), EXIT_OK);
    let dump = fs::read_to_string(out.join("paths.csv")).unwrap();
    assert!(dump.starts_with("path_index,t,x1"));
}

#[test]
fn unknown_keys_and_bad_values_are_input_errors() {
    let dir = TempDir::new().unwrap();
    let typo = write_config(&dir, "typo.toml", &LINEAR.replace("[sim]", "[sim]\npathz = 3"));
    assert_eq!(cli(&["solve", "--config", s(&typo)]), EXIT_INPUT);
    let neg = write_config(&dir, "neg.toml", &LINEAR.replace("dt = 1e-3", "dt = -1.0"));
    assert_eq!(cli(&["solve", "--config", s(&neg), "--out", s(&dir.path().join("o"))]), EXIT_INPUT);
    assert_eq!(cli(&["solve", "--config", s(&dir.path().join("missing.toml"))]), EXIT_INPUT);
    assert_eq!(cli(&["frobnicate"]), EXIT_INPUT);
}

#[test]
fn non_monotone_nonlinearity_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "nm.toml", &format!("{LINEAR}\n[nonlinearity]\nf = \"y\"\n"));
    assert_eq!(cli(&["solve", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]), EXIT_INPUT);
}

#[test]
fn short_horizon_is_a_solver_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "short.toml", &LINEAR.replace("seed = 11", "seed = 11\nmax_horizon = 0.01"));
    assert_eq!(cli(&["solve", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]), EXIT_SOLVER);
}

#[test]
fn iteration_budget_exhaustion_is_a_solver_error() {
    let dir = TempDir::new().unwrap();
    let text = LINEAR.replace("grid = 11", "grid = 11\nmax_iterations = 2\ntolerance = 1e-12")
        + "\n[nonlinearity]\nf = \"-y^3\"\n";
    let cfg = write_config(&dir, "budget.toml", &text);
    assert_eq!(cli(&["solve", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]), EXIT_SOLVER);
}

#[test]
fn verify_without_checks_is_a_no_op() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "linear.toml", LINEAR);
    assert_eq!(cli(&["verify", "--config", s(&cfg), "--out", s(&dir.path().join("o")), "--checks"]), EXIT_OK);
}

#[test]
fn verify_needs_a_solution() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "linear.toml", LINEAR);
    let out = dir.path().join("o");
    assert_eq!(cli(&["verify", "--config", s(&cfg), "--out", s(&out), "--checks", "l1"]), EXIT_INPUT);
}

#[test]
fn verify_passes_on_solved_field_and_fails_on_corrupted_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "linear.toml", LINEAR);
    let out = dir.path().join("o");
    assert_eq!(cli(&["solve", "--config", s(&cfg), "--out", s(&out)]), EXIT_OK);
    assert_eq!(cli(&["verify", "--config", s(&cfg), "--out", s(&out), "--checks", "l1,duality"]), EXIT_OK);
    assert!(out.join("l1.csv").exists() && out.join("duality.csv").exists() && out.join("verify.json").exists());

    // raise u by 0.2 at every interior node: the duality pairing must notice
    let sol = fs::read_to_string(out.join("solution.csv")).unwrap();
    let bad: Vec<String> = sol
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            let x: f64 = cols[0].parse().unwrap_or(0.0);
            if i == 0 || x <= 0.0 || x >= 1.0 {
                line.to_string()
            } else {
                format!("{},{},{}", cols[0], cols[1].parse::<f64>().unwrap() + 0.2, cols[2])
            }
        })
        .collect();
    let bad_path = dir.path().join("bad.csv");
    fs::write(&bad_path, bad.join("\n") + "\n").unwrap();
    let code = cli(&["verify", "--config", s(&cfg), "--out", s(&out), "--checks", "duality", "--solution", s(&bad_path)]);
    assert_eq!(code, EXIT_VERIFY);
}

#[test]
fn convergence_ladder_must_be_monotone() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "linear.toml", LINEAR);
    let out = dir.path().join("o");
    let args = ["convergence", "--config", s(&cfg), "--out", s(&out), "--axis", "paths", "--ladder"];
    let mut bad = args.to_vec();
    bad.push("2000,1000,4000");
    assert_eq!(cli(&bad), EXIT_INPUT);
    let mut good = args.to_vec();
    good.push("1000,2000,4000");
    let code = cli(&good);
    assert!(code == EXIT_OK || code == EXIT_VERIFY);
    let table = fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert_eq!(table.lines().next(), Some("axis_value,estimate,stderr"));
    assert_eq!(table.lines().count(), 4);
}
