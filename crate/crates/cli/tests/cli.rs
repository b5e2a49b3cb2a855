use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nlscore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlscore")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: [&str; 8] = ["--set", "rounds=2", "--set", "dims=4", "--set", "sigmas=0.5,2", "--set", "n_classes=20"];

fn simulate_small(preset: &str, dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--preset", preset, "--output-dir", dir.to_str().unwrap()];
    args.extend(SMALL);
    args.extend(extra);
    nlscore(&args)
}

#[test]
fn simulate_writes_metrics_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate_small("desk-known", dir.path(), &["--set", "n_enroll=50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next().unwrap(), nlscore::evaluation::METRICS_HEADER);
    // 3 score types x 2 sigmas x (2 rounds + aggregate)
    assert_eq!(lines.count(), 18);
    let meta = fs::read_to_string(dir.path().join("meta.txt")).unwrap();
    assert!(meta.contains("preset=desk-known"));
    assert!(meta.contains("seed=20201016"));
}

#[test]
fn identical_invocations_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = simulate_small("desk-unknown", d.path(), &[]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["metrics.csv", "meta.txt"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn negative_sigma_in_config_exits_2_naming_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = nlscore::preset("desk-known").unwrap();
    config.sigmas = vec![0.5, -1.0];
    let path = dir.path().join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let o = nlscore(&["simulate", "--config", path.to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sigmas[1]"), "{}", stderr(&o));
    assert!(!dir.path().join("metrics.csv").exists());
}

#[test]
fn config_parse_error_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{\n  \"name\": \"x\",\n  \"seed\": ,\n}\n").unwrap();
    let o = nlscore(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn unknown_key_and_unknown_preset_exit_2() {
    let o = nlscore(&["simulate", "--preset", "desk-known", "--set", "sigma=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown field `sigma`"), "{}", stderr(&o));
    let o = nlscore(&["simulate", "--preset", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_file_is_runtime_error() {
    let o = nlscore(&["simulate", "--config", "/nonexistent/config.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn presets_lists_all_four() {
    let o = nlscore(&["presets"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["paper-known", "paper-unknown", "desk-known", "desk-unknown"] {
        assert!(text.lines().any(|l| l == name), "{name} missing");
    }
    assert!(text.contains("n_classes         600"));
    assert!(text.contains("rounds            500"));
}

#[test]
fn dump_scores_then_eval_reproduces_round_zero_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate_small(
        "desk-unknown",
        dir.path(),
        &["--set", "dims=4", "--set", "sigmas=1", "--dump-scores", "--emit-plot-script"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("plot_metrics.py").exists());
    let scores = dir.path().join("scores.csv");
    let o = nlscore(&[
        "eval",
        "--scores",
        scores.to_str().unwrap(),
        "--output-dir",
        dir.path().to_str().unwrap(),
        "--det",
        "7",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let eval = fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    for line in eval.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let row =
            metrics.lines().map(|l| l.split(',').collect::<Vec<_>>()).find(|m| m[1] == f[0] && m[4] == "0").unwrap();
        assert_eq!((row[5], row[6]), (f[1], f[2]), "{line}");
    }
    let det = fs::read_to_string(dir.path().join("det.csv")).unwrap();
    assert_eq!(det.lines().count(), 1 + 4 * 7);
}

#[test]
fn score_subcommand_with_canonical_and_general_models() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    fs::write(p("enroll.csv"), "class_id,v1,v2\na,1.0,0.5\na,1.4,0.3\nb,-1.0,-0.2\n").unwrap();
    fs::write(p("test.csv"), "test_id,class_id,v1,v2\nt1,a,1.1,0.4\nt2,b,-0.8,0.1\nt3,,0.0,0.0\n").unwrap();
    fs::write(p("canon.json"), r#"{"dim": 2, "between_var": [1.0, 1.0], "within_var": 0.25}"#).unwrap();
    // Same model written in general form with a nonzero mean.
    fs::write(
        p("general.json"),
        r#"{"dim": 2, "global_mean": [0.0, 0.0], "between_cov": [1.0, 0.0, 0.0, 1.0], "within_cov": [0.25, 0.0, 0.0, 0.25]}"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for (model, out) in [("canon.json", "o1"), ("general.json", "o2")] {
        let o = nlscore(&[
            "score",
            "--model",
            p(model).to_str().unwrap(),
            "--enroll",
            p("enroll.csv").to_str().unwrap(),
            "--test",
            p("test.csv").to_str().unwrap(),
            "--score-type",
            "NL_UNKNOWN,PLDA_LR",
            "--output-dir",
            p(out).to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(fs::read_to_string(p(out).join("scores.csv")).unwrap());
    }
    let rows: Vec<Vec<&str>> = outputs[0].lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 3 * 2);
    assert_eq!(rows[0][..3], ["t1:a", "NL_UNKNOWN", "1"]);
    assert_eq!(rows[5][..3], ["t3:b", "NL_UNKNOWN", "0"]);
    // NL equals the PLDA oracle, and the general form gives the same NL scores.
    for i in 0..6 {
        let nl: f64 = rows[i][3].parse().unwrap();
        let lr: f64 = rows[i + 6][3].parse().unwrap();
        assert!((nl - lr).abs() <= 1e-9 * nl.abs().max(1.0), "{nl} vs {lr}");
    }
    let general: Vec<f64> =
        outputs[1].lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    for (row, g) in rows.iter().zip(general) {
        let c: f64 = row[3].parse().unwrap();
        assert!((c - g).abs() <= 1e-9, "{c} vs {g}");
    }
}

#[test]
fn score_rejects_bad_rows() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    fs::write(p("enroll.csv"), "class_id,v1,v2\na,1.0\n").unwrap();
    fs::write(p("test.csv"), "test_id,class_id,v1,v2\nt1,a,1.1,0.4\n").unwrap();
    fs::write(p("m.json"), r#"{"dim": 2, "between_var": [1.0, 1.0], "within_var": 0.25}"#).unwrap();
    let o = nlscore(&[
        "score",
        "--model",
        p("m.json").to_str().unwrap(),
        "--enroll",
        p("enroll.csv").to_str().unwrap(),
        "--test",
        p("test.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn geometry_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = nlscore(&["geometry", "--dims", "400", "--samples", "500", "--output-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("geometry.csv")).unwrap();
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0], 400.0);
    assert!((19.0..=21.0).contains(&row[2]));
}
