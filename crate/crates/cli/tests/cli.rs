use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sir-control"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_short_config(dir: &Path) -> String {
    let path = dir.join("short.cfg");
    fs::write(&path, "T=1\ndt=0.01\n").unwrap();
    path.to_string_lossy().into_owned()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn compare_writes_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_short_config(dir.path());
    let out = dir.path().join("out");
    let o = run(&[
        "compare",
        "--config",
        &cfg,
        "--gammas",
        "-1",
        "--paths",
        "2",
        "--policy",
        "fixed-0.25",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> = files(&out).into_iter().map(|(n, _)| n).collect();
    assert_eq!(
        names,
        [
            "summary.csv",
            "trajectory_fixed-0.25_-1.csv",
            "trajectory_full_-1.csv",
            "trajectory_low-constant_-1.csv",
            "trajectory_none_-1.csv",
        ]
    );
    assert!(String::from_utf8_lossy(&o.stdout).contains("low-constant"));
}

#[test]
fn repeated_compare_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_short_config(dir.path());
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run(&[
            "compare",
            "--config",
            &cfg,
            "--gammas=-1,-5",
            "--paths",
            "50",
            "--seed",
            "9",
            "--treatment-rate",
            "ou",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(files(&out));
    }
    assert_eq!(outputs[0].len(), 7);
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let bad_cfg = dir.path().join("bad.cfg");
    fs::write(&bad_cfg, "gamma=2\n").unwrap();
    let cases: [&[&str]; 7] = [
        &["frobnicate"],
        &["compare", "--gammas", "1", "--paths", "2", "--out", out],
        &["compare", "--policy", "sometimes", "--out", out],
        &["compare", "--expansion-order", "3", "--out", out],
        &["compare", "--config", bad_cfg.to_str().unwrap(), "--out", out],
        &["compare", "--config", "/nonexistent/run.cfg", "--out", out],
        &["verify", "--hjb-grid", "400", "--out", out],
    ];
    for args in cases {
        let o = run(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn verify_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let o = run(&[
        "verify",
        "--g-draws",
        "2000",
        "--martingale-paths",
        "200",
        "--hjb-grid",
        "200,40",
        "--out",
        out.to_str().unwrap(),
    ]);
    let code = o.status.code();
    assert!(code == Some(0) || code == Some(2), "{code:?}: {}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("verification.csv")).unwrap();
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().count() - 1, stdout.lines().count());
    assert_eq!(code == Some(0), !text.contains(",false"));
}
