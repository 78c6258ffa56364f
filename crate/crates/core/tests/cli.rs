use std::fs;
use std::path::Path;

use gaze3d::cli::run;

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn gaze3d(args: &[&str]) -> Output {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(
        std::iter::once("gaze3d").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn error_line(stderr: &str) -> serde_json::Value {
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    serde_json::from_str(lines[0]).unwrap()
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        path(dir.path(), "a.jsonl"),
        path(dir.path(), "b.jsonl"),
        path(dir.path(), "c.jsonl"),
    );
    for out in [&a, &b] {
        let r = gaze3d(&["simulate", "--seed", "5", "--noise-px", "0.5", "--out", out]);
        assert_eq!(r.code, 0, "{}", r.stderr);
    }
    gaze3d(&["simulate", "--seed", "6", "--noise-px", "0.5", "--out", &c]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn default_sweep_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (path(dir.path(), "a.csv"), path(dir.path(), "b.csv"));
    let r = gaze3d(&["sweep", "--out", &a]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stderr.is_empty(), "{}", r.stderr);
    assert!(r.stdout.contains("mapper=3d3d k=1 "));
    gaze3d(&["sweep", "--out", &b]);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().count(), 1 + 3 * 155);

    let mut reader = csv::Reader::from_path(&a).unwrap();
    let rigid_k1: Vec<f64> = reader
        .records()
        .map(Result::unwrap)
        .filter(|r| &r[0] == "3d3d" && &r[1] == "1")
        .map(|r| r[5].parse().unwrap())
        .collect();
    assert_eq!(rigid_k1.len(), 25);
    let mean = rigid_k1.iter().sum::<f64>() / 25.0;
    assert!(mean < 0.1, "{mean}");
}

#[test]
fn fit_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "d.jsonl");
    let model = path(dir.path(), "m.txt");
    let results = path(dir.path(), "r.csv");
    assert_eq!(gaze3d(&["simulate", "--out", &data]).code, 0);
    let before = fs::read(&data).unwrap();

    let r = gaze3d(&[
        "fit",
        "--dataset",
        &data,
        "--depths",
        "1,2",
        "--mappers",
        "2d3d,3d3d",
        "--out",
        &model,
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stderr.is_empty(), "{}", r.stderr);
    let text = fs::read_to_string(&model).unwrap();
    assert!(
        text.contains("mapper=2d3d\ncalibration_depths_m=1.0 2.0\n"),
        "{text}"
    );

    let r = gaze3d(&[
        "evaluate",
        "--model",
        &model,
        "--dataset",
        &data,
        "--out",
        &results,
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let csv = fs::read_to_string(&results).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 5);
    assert!(csv
        .lines()
        .skip(1)
        .all(|l| l.ends_with(",ok") && l.contains(",2,1;2,")));
    assert_eq!(fs::read(&data).unwrap(), before);

    let r = gaze3d(&[
        "evaluate",
        "--model",
        &model,
        "--dataset",
        &data,
        "--out",
        &model,
    ]);
    assert_eq!(r.code, 2);
    assert_eq!(error_line(&r.stderr)["error"], "usage");
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "seed = 3\n[noise]\npupil_sigma = 1.0\n").unwrap();
    let r = gaze3d(&[
        "--config",
        cfg.to_str().unwrap(),
        "simulate",
        "--out",
        &path(dir.path(), "x"),
    ]);
    assert_ne!(r.code, 0);
    let err = error_line(&r.stderr);
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("pupil_sigma"));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn usage_and_validation_errors() {
    let r = gaze3d(&["sweep", "--mappers", "2d2d,4d4d"]);
    assert_eq!(r.code, 2);
    assert!(error_line(&r.stderr)["message"]
        .as_str()
        .unwrap()
        .contains("4d4d"));

    let r = gaze3d(&["simulate", "--noise-px=-1"]);
    assert_eq!(r.code, 2);
    assert_eq!(error_line(&r.stderr)["error"], "config");

    let r = gaze3d(&["fit", "--dataset", "/nonexistent/d.jsonl"]);
    assert_eq!(r.code, 1);
    assert_eq!(error_line(&r.stderr)["error"], "dataset");

    assert_eq!(gaze3d(&["--help"]).code, 0);
}

#[test]
fn recorded_data_without_poses() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "d.jsonl");
    gaze3d(&["simulate", "--out", &data]);
    let stripped: String = fs::read_to_string(&data)
        .unwrap()
        .lines()
        .enumerate()
        .map(|(i, l)| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            if i == 0 {
                v["source"] = "recorded".into();
                v.as_object_mut().unwrap().remove("eyeball_center_m");
            } else {
                v.as_object_mut().unwrap().remove("pupil_pose");
            }
            v.to_string() + "\n"
        })
        .collect();
    let recorded = path(dir.path(), "rec.jsonl");
    fs::write(&recorded, stripped).unwrap();

    let r = gaze3d(&[
        "fit",
        "--dataset",
        &recorded,
        "--mappers",
        "2d2d,3d3d",
        "--out",
        &path(dir.path(), "m.txt"),
    ]);
    assert_ne!(r.code, 0);
    let lines: Vec<&str> = r.stderr.lines().collect();
    assert!(
        lines[0].starts_with("warning: 125 calibration records"),
        "{}",
        r.stderr
    );
    assert_eq!(
        serde_json::from_str::<serde_json::Value>(lines[1]).unwrap()["error"],
        "fit"
    );

    let r = gaze3d(&[
        "sweep",
        "--dataset",
        &recorded,
        "--mappers",
        "2d2d",
        "--out",
        &path(dir.path(), "s.csv"),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
}

#[test]
fn participants_are_pooled() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (path(dir.path(), "a.jsonl"), path(dir.path(), "b.jsonl"));
    gaze3d(&["simulate", "--seed", "1", "--noise-px", "0.5", "--out", &a]);
    gaze3d(&["simulate", "--seed", "2", "--noise-px", "1.5", "--out", &b]);
    let out = path(dir.path(), "s.csv");
    let r = gaze3d(&[
        "sweep",
        "--dataset",
        &a,
        "--dataset",
        &b,
        "--mappers",
        "2d3d",
        "--depths",
        "1,1.5,2",
        "--out",
        &out,
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let participant_lines: Vec<&str> = r
        .stdout
        .lines()
        .filter(|l| l.starts_with("participants "))
        .collect();
    assert_eq!(participant_lines.len(), 3);
    assert!(participant_lines.iter().all(|l| l.ends_with(" n=2")));
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 1 + 7 * 5);
    assert!(csv.lines().skip(1).all(|l| l.contains(",32,")));
}

#[test]
fn selftest_passes() {
    let r = gaze3d(&["selftest"]);
    assert_eq!(r.code, 0, "{}{}", r.stdout, r.stderr);
    assert!(r.stdout.lines().all(|l| l.starts_with("PASS ")));
}
