use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rpmqp(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rpmqp"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn qptest_writes_one_row_per_solver() {
    let dir = tempfile::tempdir().unwrap();
    let o = rpmqp(dir.path(), &["qptest"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("qptest_reports.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for (row, solver) in rows.iter().zip(["rpm", "asm", "oracle"]) {
        assert!(row.starts_with(solver), "{row}");
        // Every row reports the same optimum to four decimals.
        assert!(row.contains("4.3718"), "{row}");
    }
}

#[test]
fn solve_reads_a_problem_file() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("box.json");
    // min (u - 3)^2 subject to u <= 1.
    fs::write(&problem, r#"{"H": [[2.0]], "f": [-6.0], "G": [[1.0]], "w": [1.0]}"#).unwrap();
    let o = rpmqp(dir.path(), &["solve", "--problem", problem.to_str().unwrap(), "--solver", "asm"]);
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("solve_box_asm.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains("-5"), "{csv}");
}

#[test]
fn aircraft_short_run_passes_its_audit() {
    let dir = tempfile::tempdir().unwrap();
    let o = rpmqp(dir.path(), &["--sequential", "aircraft", "--horizon", "5", "--tsim", "30"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("rcso:"));
    assert!(text.contains("rpm audit: violations=0"), "{text}");
    for name in ["summary", "rcso", "reports", "rpm_trace", "asm_trace"] {
        assert!(dir.path().join(format!("aircraft_N5_{name}.csv")).exists(), "{name}");
    }
}

#[test]
fn random_suite_reports_zero_failures() {
    let dir = tempfile::tempdir().unwrap();
    let o = rpmqp(dir.path(), &["random", "--count", "20", "--seed", "9"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let csv = fs::read_to_string(dir.path().join("random_instances.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    assert!(dir.path().join("random_summary.txt").exists());
}

#[test]
fn bad_input_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = rpmqp(dir.path(), &["solve", "--problem", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = rpmqp(dir.path(), &["qptest", "--slack-tol", "-1"]);
    assert_eq!(o.status.code(), Some(2));
}
