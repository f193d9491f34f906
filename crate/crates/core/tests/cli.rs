use std::path::Path;

use ehps_core::cli::run;

fn ehps(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("ehps").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn balanced_schedule_splits_evenly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("schedule.json");
    let (code, stdout, _) = ehps(&[
        "schedule", "--strategy", "balanced", "--total", "9", "--sizes", "5,5,5", "--out", p(&out),
    ]);
    assert_eq!(code, 0);
    assert_eq!(stdout, "3,3,3\n");
    let schedule: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let lengths: Vec<u64> = schedule["lengths"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(lengths, [3, 3, 3]);
}

#[test]
fn benchmark_reproduces_s5_mpe() {
    let (code, stdout, stderr) = ehps(&["benchmark", "--entries", &fixture("s5_entries.json")]);
    assert_eq!(code, 0, "{stderr}");
    let row = stdout.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[0], "SMPLer-X-S5");
    assert_eq!(fields[fields.len() - 2], "110.8");
}

#[test]
fn unknown_flag_is_usage_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("model.json");
    let (code, stdout, stderr) = ehps(&["gen-model", "--out", p(&out), "--bogus"]);
    assert_eq!(code, 2);
    assert!(stdout.is_empty());
    assert!(stderr.contains("Usage"), "{stderr}");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(ehps(&["--help"]).0, 0);
    assert_eq!(ehps(&["--version"]).0, 0);
}

#[test]
fn validation_and_runtime_exit_codes() {
    let (code, _, stderr) = ehps(&["schedule", "--strategy", "balanced", "--total", "9", "--sizes", "5,0"]);
    assert_eq!(code, 3);
    assert!(stderr.starts_with("error: ") && stderr.lines().count() == 1, "{stderr}");
    let (code, _, stderr) = ehps(&["report", "--leaderboard", "/nonexistent/lb.json"]);
    assert_eq!(code, 4, "{stderr}");
    let (code, _, _) = ehps(&["nm-check", "--mve", "100", "--nmve", "120", "--mje", "80", "--nmje", "80"]);
    assert_eq!(code, 3);
    let (code, _, _) = ehps(&["nm-check", "--mve", "100", "--nmve", "125", "--mje", "80", "--nmje", "100"]);
    assert_eq!(code, 0);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let args = |out: &Path| {
        vec!["gen-model".to_string(), "--out".into(), p(out).into(), "--vertices".into(), "60".into(),
             "--joints".into(), "12".into(), "--layout".into(), "minimal".into()]
    };
    let mut a_args = args(&a);
    a_args.extend(["--seed".into(), "17".into()]);
    assert_eq!(ehps(&a_args.iter().map(String::as_str).collect::<Vec<_>>()).0, 0);
    std::env::set_var("EHPS_SEED", "17");
    let code = ehps(&args(&b).iter().map(String::as_str).collect::<Vec<_>>()).0;
    std::env::remove_var("EHPS_SEED");
    assert_eq!(code, 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn pipeline_forward_evaluate_hand_stats() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = d.join("model.json");
    let gt = d.join("gt.json");
    let pred = d.join("pred.json");
    let run_out = d.join("run.json");
    assert_eq!(ehps(&["gen-model", "--out", p(&model), "--vertices", "400"]).0, 0);
    assert_eq!(ehps(&["gen-data", "--out", p(&gt), "--dataset-id", "EHF", "--n", "6", "--seed", "3"]).0, 0);
    let (code, _, err) =
        ehps(&["gen-data", "--out", p(&pred), "--dataset-id", "EHF-pred", "--from", p(&gt), "--seed", "4"]);
    assert_eq!(code, 0, "{err}");
    let (code, _, err) = ehps(&[
        "evaluate", "--model", p(&model), "--pred", p(&pred), "--gt", p(&gt), "--subject", "toy",
        "--benchmark", "EHF", "--metrics", "PVE(all),PA-PVE(hands)", "--out", p(&run_out),
    ]);
    assert_eq!(code, 0, "{err}");
    let run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&run_out).unwrap()).unwrap();
    assert_eq!(run["reports"].as_array().unwrap().len(), 2);

    let (code, stdout, err) = ehps(&["hand-stats", "--model", p(&model), "--data", p(&gt)]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.starts_with("dataset_id,n,median_mm,q1_mm,q3_mm"));

    // Evaluating against a mismatched prediction set is a validation failure.
    let other = d.join("other.json");
    ehps(&["gen-data", "--out", p(&other), "--dataset-id", "UBody", "--n", "6"]);
    let (code, _, _) = ehps(&[
        "evaluate", "--model", p(&model), "--pred", p(&other), "--gt", p(&gt), "--subject", "toy",
        "--benchmark", "EHF", "--out", p(&d.join("bad.json")),
    ]);
    assert_ne!(code, 0);
    assert!(!d.join("bad.json").exists());
}
