use std::path::Path;
use std::process::{Command, Output};

use pde_arena::bench::{records_from_json, CSV_COLUMNS, PARETO_COLUMNS};
use pde_arena::nn::Mlp;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pde-arena"));
    c.env("PDE_ARENA_CACHE", Path::new(env!("CARGO_TARGET_TMPDIR")).join("gt-cache"));
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn help_lists_every_flag() {
    let cases: &[(&[&str], &[&str])] = &[
        (&[], &["--threads", "--verbose"]),
        (&["gt", "build"], &["--problem", "--force", "--cache", "--scale", "--accept-long-runtime", "--manifest"]),
        (&["fem", "solve"], &["--problem", "--n", "--dt", "--scheme", "--out", "--with-error", "--cache", "--scale"]),
        (&["pinn", "train"], &["--problem", "--arch", "--seed", "--epochs", "--lbfgs-iters", "--out", "--log", "--with-error"]),
        (&["compare"], &["--problem", "--seed", "--repeats", "--method", "--fem-n", "--arch", "--parallel", "--out", "--format"]),
        (&["report"], &["--in", "--format", "--out"]),
        (&["manifest"], &["--out"]),
    ];
    for (sub, flags) in cases {
        let mut args = sub.to_vec();
        args.push("--help");
        let o = run(&args);
        assert!(o.status.success(), "{sub:?}");
        let text = stdout(&o);
        for f in *flags {
            assert!(text.contains(f), "{sub:?} help lacks {f}");
        }
    }
    assert!(run(&["gt", "--help"]).status.success());
    assert!(run(&["fem", "--help"]).status.success());
    assert!(run(&["pinn", "--help"]).status.success());
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["compare", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["fem", "solve", "--problem", "poisson9d", "--n", "4"]).status.code(), Some(2));
    assert_eq!(run(&["fem", "solve", "--problem", "poisson3d", "--n", "9999999"]).status.code(), Some(2));
    assert_eq!(run(&["fem", "solve", "--problem", "poisson1d", "--n", "64", "--scale", "paper"]).status.code(), Some(2));
    assert_eq!(run(&["pinn", "train", "--problem", "schrodinger1d", "--arch", "5,1"]).status.code(), Some(2));
    assert_eq!(run(&["pinn", "train", "--problem", "poisson1d", "--arch", "5,0,1"]).status.code(), Some(2));
}

#[test]
fn paper_scale_runs_once_acknowledged() {
    let o = run(&["fem", "solve", "--problem", "poisson1d", "--n", "64", "--scale", "paper", "--accept-long-runtime"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("l2_rel_error"));
}

#[test]
fn fem_solve_writes_fields_and_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let field = dir.path().join("p2.json");
    let o = run(&["fem", "solve", "--problem", "poisson2d", "--n", "16", "--out", field.to_str().unwrap()]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&field).unwrap()).unwrap();
    assert_eq!(v["coefficients"].as_array().unwrap().len(), 17 * 17);

    let traj = dir.path().join("ac.jsonl");
    let o = run(&["fem", "solve", "--problem", "allen_cahn1d", "--n", "32", "--out", traj.to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&traj).unwrap();
    assert_eq!(text.lines().count(), 5);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["t"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn pinn_train_writes_checkpoint_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.json");
    let log = dir.path().join("train.jsonl");
    let o = run(&[
        "pinn", "train", "--problem", "poisson1d", "--arch", "8,1", "--seed", "3", "--epochs", "30", "--lbfgs-iters", "5",
        "--out", ckpt.to_str().unwrap(), "--log", log.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = Mlp::<f64>::from_checkpoint_json(&std::fs::read_to_string(&ckpt).unwrap()).unwrap();
    assert_eq!(m.widths(), &[1, 8, 1]);
    assert_eq!(m.seed(), Some(3));
    let entries: Vec<serde_json::Value> =
        std::fs::read_to_string(&log).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!entries.is_empty());
    for e in &entries {
        assert!(e["epoch"].is_u64() && e["loss"].is_f64() && e["wall_time"].is_f64());
    }
}

#[test]
fn report_reemits_csv_from_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&[
        "compare", "--problem", "poisson1d", "--method", "fem", "--fem-n", "64", "--fem-n", "128", "--repeats", "1",
        "--out", out.to_str().unwrap(), "--format", "json",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json = out.join("records.json");
    let recs = records_from_json(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(recs.len(), 2);
    assert!(!out.join("records.csv").exists());

    let csv_dir = dir.path().join("csv");
    let o = run(&["report", "--in", json.to_str().unwrap(), "--format", "csv", "--out", csv_dir.to_str().unwrap()]);
    assert!(o.status.success());
    let mut rdr = csv::Reader::from_path(csv_dir.join("records.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), CSV_COLUMNS);
    assert_eq!(rdr.records().count(), 2);
    let mut pareto = csv::Reader::from_path(csv_dir.join("pareto.csv")).unwrap();
    assert_eq!(pareto.headers().unwrap().iter().collect::<Vec<_>>(), PARETO_COLUMNS);

    std::fs::write(dir.path().join("bad.json"), "[{\"schema\": \"v0\"}]").unwrap();
    let bad = dir.path().join("bad.json");
    assert_eq!(run(&["report", "--in", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn manifest_round_trips() {
    let o = run(&["manifest"]);
    assert!(o.status.success());
    let m = pde_arena::problems::Manifest::from_json(&stdout(&o)).unwrap();
    assert_eq!(m, pde_arena::problems::Manifest::default());
}
