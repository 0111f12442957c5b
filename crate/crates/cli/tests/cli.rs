use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hjb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn solve(cfg: &str, dir: &Path, extra: &[&str]) -> Output {
    let d = dir.to_string_lossy().into_owned();
    let mut args = vec!["solve", cfg, "--out-dir", &d];
    args.extend_from_slice(extra);
    hjb(&args)
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn validate_unit_sigma_passes() {
    let o = hjb(&["validate", &config("exit_time.toml")]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("A1  PASS"));
}

#[test]
fn validate_degenerate_sigma_fails_a1() {
    let o = hjb(&["validate", &config("degenerate_sigma.toml")]);
    assert_eq!(code(&o), 1);
    let out = stdout(&o);
    assert!(out.contains("A1  FAIL"), "{out}");
    assert!(out.contains("bounded away from zero"), "{out}");
}

#[test]
fn validate_reports_worst_pair_for_inconsistent_constants() {
    let o = hjb(&["validate", &config("declared_constants.toml")]);
    assert_eq!(code(&o), 1);
    let line = stdout(&o).lines().find(|l| l.starts_with("A1")).unwrap().to_string();
    assert!(line.contains("FAIL") && line.contains("worst=") && line.contains("exceeds declared 0.05"), "{line}");
    // sigma is linear with slope 1/8, so no sampled quotient can exceed it
    let q: f64 = line.split("q=").nth(1).unwrap().split(';').next().unwrap().trim().parse().unwrap();
    assert!(q > 0.05 && q <= 0.125 + 1e-12, "{q}");
}

#[test]
fn config_errors_exit_3_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let src = fs::read_to_string(config("exit_time.toml")).unwrap() + "\n[mesh2]\nnx = 3\n";
    fs::write(&path, &src).unwrap();
    let o = hjb(&["validate", path.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let line = src.lines().position(|l| l == "[mesh2]").unwrap() + 1;
    assert!(stderr(&o).contains(&format!("line {line}")), "{}", stderr(&o));

    let o = hjb(&["solve", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 3);
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(code(&hjb(&["--help"])), 0);
    assert_eq!(code(&hjb(&["--version"])), 0);
    assert_eq!(code(&hjb(&["solve"])), 3);
    assert_eq!(code(&hjb(&["frobnicate"])), 3);
    assert_eq!(code(&hjb(&["solve", &config("exit_time.toml"), "--nx", "many"])), 3);
}

#[test]
fn constant_hamiltonian_converges_in_two_iterations_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let o = solve(&config("exit_time.toml"), dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let s = summary(dir.path());
    assert_eq!(s["converged"], true);
    assert!(s["iterations"].as_u64().unwrap() <= 2);

    let d = dir.path().to_str().unwrap();
    let o = hjb(&["verify", &config("exit_time.toml"), d, "--paths", "20000", "--points", "4"]);
    let out = stdout(&o);
    assert_eq!(code(&o), 0, "{out}");
    assert!(out.contains("check pde-vs-analytic: PASS"));
    assert!(out.contains("check mc-vs-analytic: PASS"));
    assert!(!out.contains("FAIL"));

    // scale the value column by 1.5
    let path = dir.path().join("value.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    let mut tampered = format!("{}\n", lines.next().unwrap());
    for l in lines {
        let mut f: Vec<String> = l.split(',').map(str::to_string).collect();
        f[2] = (1.5 * f[2].parse::<f64>().unwrap()).to_string();
        tampered.push_str(&f.join(","));
        tampered.push('\n');
    }
    fs::write(&path, tampered).unwrap();
    let o = hjb(&["verify", &config("exit_time.toml"), d, "--paths", "2000", "--points", "3"]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
    assert!(stdout(&o).contains("verify: FAIL"));
}

#[test]
fn drift_control_solves_and_beats_comparison_policies() {
    let dir = tempfile::tempdir().unwrap();
    let o = solve(&config("drift_control.toml"), dir.path(), &["--nx", "81", "--nt", "201", "--x-max", "6"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    for f in ["value.csv", "policy.csv", "diagnostics.jsonl", "summary.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let diag = fs::read_to_string(dir.path().join("diagnostics.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(diag.lines().last().unwrap()).unwrap();
    assert!(last["bielecki_diff"].as_f64().unwrap() <= 1e-8);
    assert_eq!(
        fs::read_to_string(dir.path().join("policy.csv")).unwrap().lines().next(),
        Some("x,t,alpha")
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("value.csv")).unwrap().lines().next(),
        Some("x,t,u,du_dx")
    );

    let d = dir.path().to_str().unwrap();
    let o = hjb(&["verify", &config("drift_control.toml"), d, "--paths", "4000", "--points", "3"]);
    let out = stdout(&o);
    assert_eq!(code(&o), 0, "{out}");
    assert_eq!(out.matches("check optimality: PASS").count(), 3);
}

#[test]
fn max_iter_one_exits_2_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = solve(
        &config("drift_control.toml"),
        dir.path(),
        &["--max-iter", "1", "--nx", "41", "--nt", "51"],
    );
    assert_eq!(code(&o), 2);
    assert!(dir.path().join("value.csv").exists());
    assert_eq!(summary(dir.path())["converged"], false);
}

#[test]
fn identical_invocations_are_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let flags = ["--nx", "41", "--nt", "51", "--seed", "11"];
    assert_eq!(code(&solve(&config("drift_control.toml"), a.path(), &flags)), 0);
    let mut wide = flags.to_vec();
    wide.extend(["--workers", "3"]);
    assert_eq!(code(&solve(&config("drift_control.toml"), b.path(), &wide)), 0);
    for f in ["value.csv", "policy.csv", "diagnostics.jsonl", "summary.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

fn bench_table(args: &[&str]) -> Vec<Vec<String>> {
    let mut full = vec!["bench"];
    full.extend_from_slice(args);
    let o = hjb(&full);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("benchmark,level,n_x,n_t,paths,iterations,value,error,seconds"));
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn bench_refinement_rows_double_resolution() {
    let rows = bench_table(&["--levels", "3", "--nx", "21", "--nt", "26", "--paths", "200"]);
    let linear: Vec<_> = rows.iter().filter(|r| r[0] == "linear_exit").collect();
    assert_eq!(linear.len(), 3);
    for w in linear.windows(2) {
        let n = |r: &Vec<String>, k: usize| r[k].parse::<usize>().unwrap();
        assert_eq!(n(w[1], 2), 2 * n(w[0], 2));
        assert_eq!(n(w[1], 3), 2 * n(w[0], 3));
    }
    // the sup error of the linear solve shrinks under refinement
    let e: Vec<f64> = linear.iter().map(|r| r[7].parse().unwrap()).collect();
    assert!(e[2] < e[0], "{e:?}");
    assert_eq!(rows.iter().filter(|r| r[0] == "drift_control").count(), 3);
}

#[test]
fn bench_single_level_and_reproducible_mc_row() {
    let dir = tempfile::tempdir().unwrap();
    let out: PathBuf = dir.path().join("bench.csv");
    let o = hjb(&[
        "bench", "--levels", "1", "--nx", "21", "--nt", "26", "--paths", "500", "--seed", "4", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 4);

    let args = ["--levels", "1", "--nx", "21", "--nt", "26", "--paths", "500", "--seed", "4"];
    let mc = |rows: Vec<Vec<String>>| rows.into_iter().find(|r| r[0] == "mc_exit_time").unwrap();
    let a = mc(bench_table(&args));
    let b = mc(bench_table(&args));
    assert_eq!(a[..8], b[..8]);
    assert_eq!(a[4], "500");
}
