use std::path::Path;
use std::process::{Command as Proc, Output};

use clap::Parser;
use cvxdistill::cli::{expand_config, Cli, Command};
use cvxdistill::pipeline::ExperimentReport;

const BIN: &str = env!("CARGO_BIN_EXE_cvxdistill");

const TINY_TASK: &[&str] = &[
    "--classes",
    "3",
    "--dim",
    "6",
    "--train-per-class",
    "40",
    "--test-per-class",
    "20",
];

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Proc::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("CVXDISTILL_SEED")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
    let argv: Vec<std::ffi::OsString> = std::iter::once("cvxdistill")
        .chain(args.iter().copied())
        .map(Into::into)
        .collect();
    Cli::try_parse_from(expand_config(argv).unwrap())
}

#[test]
fn distill_flags_parse() {
    let cli = parse(&[
        "distill",
        "--acts",
        "a.cvxa",
        "--gates",
        "64",
        "--lambda-points",
        "20",
        "--out",
        "run1/",
    ])
    .unwrap();
    let Command::Distill(a) = cli.command else {
        panic!("wrong command");
    };
    assert_eq!(a.acts, Path::new("a.cvxa"));
    assert_eq!(a.distill.gates, Some(64));
    assert_eq!(a.distill.lambda_points, 20);
    assert_eq!(a.common.out, Path::new("run1/"));
    assert!(a.distill.polish);
}

#[test]
fn every_command_takes_seed_and_out() {
    for cmd in [
        "teacher-train",
        "extract",
        "distill",
        "polish",
        "swap-eval",
        "compare",
        "sweep",
        "enumerate-gates",
        "verify",
    ] {
        let out = Proc::new(BIN).args([cmd, "--help"]).output().unwrap();
        assert_eq!(code(&out), 0, "{cmd}");
        let help = String::from_utf8(out.stdout).unwrap();
        assert!(help.contains("--seed") && help.contains("--out"), "{cmd}");
        assert!(help.contains("--config"), "{cmd}");
    }
}

#[test]
fn boolean_flags_accept_bare_and_valued_forms() {
    let base = ["distill", "--acts", "a", "--out", "o"];
    let get = |extra: &[&str]| {
        let args: Vec<&str> = base.iter().chain(extra).copied().collect();
        match parse(&args).unwrap().command {
            Command::Distill(a) => a.distill.polish,
            _ => unreachable!(),
        }
    };
    assert!(get(&[]));
    assert!(get(&["--polish"]));
    assert!(!get(&["--polish", "false"]));
    assert!(!get(&["--polish=false"]));
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "gates = 64\nlambda_points = 7\nout = from-file\n").unwrap();
    let cli = parse(&[
        "distill",
        "--config",
        cfg.to_str().unwrap(),
        "--acts",
        "a.cvxa",
        "--gates",
        "8",
    ])
    .unwrap();
    let Command::Distill(a) = cli.command else {
        panic!("wrong command");
    };
    assert_eq!(a.distill.gates, Some(8));
    assert_eq!(a.distill.lambda_points, 7);
    assert_eq!(a.common.out, Path::new("from-file"));
}

#[test]
fn exit_code_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.cfg"), "no-such-flag = 1\n").unwrap();
    std::fs::write(d.join("junk.cvxa"), b"NOPE").unwrap();
    let cases: &[(&[&str], i32)] = &[
        (&["verify", "--tiny", "--out", "v"], 0),
        (
            &["enumerate-gates", "--n", "5", "--d", "2", "--out", "g"],
            0,
        ),
        (&["distill", "--bogus", "1", "--out", "x"], 2),
        (&["distill", "--acts", "a.cvxa"], 2),
        (
            &["distill", "--acts", "a", "--out", "x", "--gates", "many"],
            2,
        ),
        (&["frobnicate", "--out", "x"], 2),
        (&[], 2),
        (&["verify", "--out", "x", "--config", "missing.cfg"], 2),
        (&["verify", "--out", "x", "--config", "bad.cfg"], 2),
        (&["distill", "--acts", "missing.cvxa", "--out", "x"], 1),
        (&["distill", "--acts", "junk.cvxa", "--out", "x"], 1),
        (
            &["enumerate-gates", "--n", "40", "--d", "6", "--out", "g"],
            1,
        ),
        (&["compare", "--out", "x", "--time-budget-factor", "0.5"], 1),
    ];
    for (args, want) in cases {
        let out = run_in(d, args);
        assert_eq!(
            code(&out),
            *want,
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        if *want != 0 {
            assert!(!out.stderr.is_empty(), "{args:?} printed no diagnostic");
        }
    }
}

#[test]
fn pipeline_commands_chain_and_stay_under_out() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut teacher = vec![
        "teacher-train",
        "--out",
        "t",
        "--hidden",
        "6,16,6",
        "--epochs",
        "20",
    ];
    teacher.extend_from_slice(TINY_TASK);
    let steps: Vec<Vec<&str>> = vec![
        teacher,
        vec![
            "extract",
            "--out",
            "e",
            "--model",
            "t/teacher.json",
            "--data",
            "t/train.csv",
        ],
        vec![
            "distill",
            "--out",
            "s",
            "--acts",
            "e/acts.cvxa",
            "--gates",
            "8",
            "--lambda-points",
            "4",
        ],
        vec![
            "polish",
            "--out",
            "p",
            "--student",
            "s/student.json",
            "--acts",
            "e/acts.cvxa",
        ],
        vec![
            "swap-eval",
            "--out",
            "w",
            "--teacher",
            "t/teacher.json",
            "--student",
            "p/student.json",
            "--data",
            "t/test.csv",
        ],
    ];
    for args in &steps {
        let out = run_in(d, args);
        assert_eq!(
            code(&out),
            0,
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let stdout = String::from_utf8(out.stdout).unwrap();
        let lines: Vec<&str> = stdout.lines().collect();
        assert_eq!(lines.len(), 2, "{stdout}");
        assert!(lines[0].starts_with(args[2]), "{}", lines[0]);
        assert!(d.join(lines[0]).is_file());
    }
    for f in [
        "t/teacher.json",
        "t/train.csv",
        "t/test.csv",
        "e/acts.cvxa",
        "s/student.json",
        "s/trace.jsonl",
        "p/student.json",
        "p/trace.jsonl",
        "w/report.json",
    ] {
        assert!(d.join(f).is_file(), "{f}");
    }
    let mut entries: Vec<String> = std::fs::read_dir(d)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    entries.sort();
    assert_eq!(entries, vec!["e", "p", "s", "t", "w"]);

    // The distilled student's block is 6 -> 6; layer 1 maps 6 -> 16.
    let out = run_in(
        d,
        &[
            "swap-eval",
            "--out",
            "bad",
            "--teacher",
            "t/teacher.json",
            "--student",
            "s/student.json",
            "--data",
            "t/test.csv",
            "--block-start",
            "1",
            "--block-end",
            "2",
        ],
    );
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension mismatch"));
}

#[test]
fn compare_reports_each_requested_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "compare",
        "--out",
        "c",
        "--seeds",
        "1,2,3",
        "--teacher-hidden",
        "6,16,6",
        "--teacher-epochs",
        "10",
        "--gates",
        "8",
        "--lambda-points",
        "4",
        "--nonconvex-epochs",
        "10",
    ];
    args.extend_from_slice(TINY_TASK);
    let out = run_in(dir.path(), &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("c/report.json")).unwrap();
    let report = ExperimentReport::from_json(&text).unwrap();
    for m in ["convex", "nonconvex", "prune", "teacher"] {
        let seeds: Vec<u64> = report.rows_for(m).map(|r| r.seed).collect();
        assert_eq!(seeds, vec![1, 2, 3], "{m}");
    }
    let csv = std::fs::read_to_string(dir.path().join("c/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + report.rows.len());
    for s in 1..=3 {
        assert!(dir
            .path()
            .join(format!("c/traces/seed-{s}-convex.jsonl"))
            .is_file());
    }
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let enumerate = |seed_env: Option<&str>, extra: &[&str], out: &str| {
        let mut p = Proc::new(BIN);
        p.args(["enumerate-gates", "--n", "6", "--d", "2", "--out", out])
            .args(extra)
            .current_dir(dir.path())
            .env_remove("CVXDISTILL_SEED");
        if let Some(s) = seed_env {
            p.env("CVXDISTILL_SEED", s);
        }
        assert_eq!(code(&p.output().unwrap()), 0);
        std::fs::read_to_string(dir.path().join(out).join("gates.json")).unwrap()
    };
    let by_env = enumerate(Some("17"), &[], "a");
    let by_flag = enumerate(None, &["--seed", "17"], "b");
    let default = enumerate(None, &[], "c");
    let flag_wins = enumerate(Some("3"), &["--seed", "17"], "d");
    assert_eq!(by_env, by_flag);
    assert_eq!(flag_wins, by_flag);
    assert_ne!(by_env, default);
}
