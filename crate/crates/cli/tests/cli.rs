use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn otcert(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otcert"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn reproduce_cylinder_example_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = otcert(
        dir.path(),
        &[
            "reproduce",
            "--example",
            "3.1",
            "--grid",
            "16",
            "--out-dir",
            "r",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("equal marginals") && text.contains("equal costs"));
    let summary = json(&dir.path().join("r/summary.json"));
    assert_eq!(summary["passed"], true);
    assert_eq!(summary["marginal_gap"].as_f64(), Some(0.0));
    assert_eq!(summary["certificate"]["verdict"], "certified");
    for f in [
        "source.csv",
        "target.csv",
        "gamma.json",
        "gamma_bar.json",
        "certificate.json",
    ] {
        assert!(dir.path().join("r").join(f).is_file(), "{f} missing");
    }
    // The written plans load back through check-monotone.
    let check = otcert(
        dir.path(),
        &[
            "check-monotone",
            "--plan",
            "r/gamma_bar.json",
            "--cost",
            "example31",
        ],
    );
    assert_eq!(code(&check), 0);
}

#[test]
fn reproduce_polar_example_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = otcert(
        dir.path(),
        &[
            "reproduce",
            "--example",
            "3.2",
            "--grid",
            "50",
            "--out-dir",
            ".",
        ],
    );
    assert_eq!(code(&out), 0);
    assert_eq!(json(&dir.path().join("summary.json"))["passed"], true);
}

#[test]
fn antimonotone_pairs_fail_with_one_violation() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("anti.csv"), "x1,y1\n0,1\n1,0\n").unwrap();
    let out = otcert(
        dir.path(),
        &[
            "check-monotone",
            "--pairs",
            "anti.csv",
            "--cost",
            "bilinear",
            "--out",
            "m.json",
        ],
    );
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("violations 1"));
    let report = json(&dir.path().join("m.json"));
    assert_eq!(report["violation_count"], 1);
    assert_eq!(report["verdict"], "fail");
}

#[test]
fn mismatched_masses_are_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.csv"), "x1,weight\n0,0.5\n1,0.5\n").unwrap();
    fs::write(dir.path().join("t.csv"), "x1,weight\n0,0.5\n1,0.6\n").unwrap();
    let out = otcert(
        dir.path(),
        &[
            "solve",
            "--source",
            "s.csv",
            "--target",
            "t.csv",
            "--cost",
            "quadratic",
            "--out",
            "p.json",
        ],
    );
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("p.json").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&otcert(dir.path(), &["bogus"])), 2);
    assert_eq!(code(&otcert(dir.path(), &["solve", "--nope"])), 2);
    let out = otcert(
        dir.path(),
        &["analyze-cost", "--cost", "nosuch", "--out", "t.json"],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("available costs"));
}

fn write_line_measures(dir: &Path) {
    let n = 12;
    let mut src = String::from("x1,weight\n");
    let mut tgt = String::from("x1,weight\n");
    for k in 0..n {
        let x = -1.0 + 2.0 * (k as f64 + 0.5) / n as f64;
        src += &format!("{x},{}\n", 1.0 / n as f64);
        tgt += &format!("{},{}\n", 1.5 * x + 0.25, 1.0 / n as f64);
    }
    fs::write(dir.join("s.csv"), src).unwrap();
    fs::write(dir.join("t.csv"), tgt).unwrap();
}

#[test]
fn solve_then_analyse_the_plan() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_line_measures(d);
    let out = otcert(
        d,
        &[
            "solve",
            "--source",
            "s.csv",
            "--target",
            "t.csv",
            "--cost",
            "quadratic",
            "--out",
            "p.json",
            "--dual",
            "d.json",
        ],
    );
    assert_eq!(code(&out), 0);
    let plan = json(&d.join("p.json"));
    assert_eq!(plan["source_file"], "s.csv");
    assert_eq!(plan["entries"].as_array().unwrap().len(), 12);
    assert_eq!(json(&d.join("d.json"))["phi"].as_array().unwrap().len(), 12);

    let out = otcert(
        d,
        &[
            "check-monotone",
            "--plan",
            "p.json",
            "--cost",
            "quadratic",
            "--cycles",
            "3",
        ],
    );
    assert_eq!(code(&out), 0);

    let out = otcert(
        d,
        &[
            "rectify",
            "--plan",
            "p.json",
            "--cost",
            "quadratic",
            "--out",
            "c.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert_eq!(json(&d.join("c.json"))["verdict"], "certified");
    let uv = fs::read_to_string(d.join("c.uv.csv")).unwrap();
    assert!(uv.starts_with("u1,v1,ratio\n"));

    let args = [
        "jacobian",
        "--plan",
        "p.json",
        "--f-plus",
        "uniform:-1:1",
        "--f-minus",
        "uniform:-1.25:1.75",
        "--out",
        "j.json",
    ];
    let out = otcert(d, &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(json(&d.join("j.json"))["max_residual"].as_f64().unwrap() <= 1e-12);
    assert!(d.join("j.samples.csv").is_file());
    // A wrong target density is caught by the residual threshold.
    let mut bad = args.to_vec();
    bad[6] = "uniform:-1:1";
    bad.extend(["--max-residual", "0.01"]);
    assert_eq!(code(&otcert(d, &bad)), 1);
}

#[test]
fn analyze_cost_finds_cylinder_collisions() {
    let dir = tempfile::tempdir().unwrap();
    let out = otcert(
        dir.path(),
        &[
            "analyze-cost",
            "--cost",
            "example31",
            "--grid",
            "3",
            "--scan-box",
            "0:1,0:12.566370614359172",
            "--scan-grid",
            "50",
            "--out",
            "t.json",
        ],
    );
    assert_eq!(code(&out), 0);
    let report = json(&dir.path().join("t.json"));
    assert_eq!(report["injective_on_sample"], false);
    assert_eq!(report["collisions"].as_array().unwrap().len(), 1250);
    let csv = fs::read_to_string(dir.path().join("t.hessian.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 81);
}

#[test]
fn config_supplies_flags_and_explicit_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("anti.csv"), "x1,y1\n0,1\n1,0\n").unwrap();
    fs::write(
        d.join("cfg.json"),
        r#"{"pairs": "anti.csv", "cost": "bilinear", "tol": 5.0}"#,
    )
    .unwrap();
    // The loose tolerance from the config hides the unit defect.
    assert_eq!(
        code(&otcert(d, &["--config", "cfg.json", "check-monotone"])),
        0
    );
    // An explicit flag overrides it.
    assert_eq!(
        code(&otcert(
            d,
            &["check-monotone", "--config", "cfg.json", "--tol", "1e-9"]
        )),
        1
    );
}

#[test]
fn reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        let res = otcert(
            d,
            &[
                "--seed",
                "7",
                "--threads",
                "2",
                "reproduce",
                "--example",
                "3.1",
                "--grid",
                "16",
                "--out-dir",
                out,
            ],
        );
        assert_eq!(code(&res), 0);
    }
    for f in ["summary.json", "gamma.json", "certificate.json"] {
        assert_eq!(
            fs::read(d.join("a").join(f)).unwrap(),
            fs::read(d.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}
