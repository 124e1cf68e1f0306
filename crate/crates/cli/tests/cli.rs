use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;
use stagenav_cli::cli::{main_with, Cli, Command as Sub, EXIT_ERROR, EXIT_FAILURES, EXIT_OK};
use stagenav_core::metrics::MetricReport;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stagenav"));
    for var in [
        "STAGENAV_ENDPOINT_URL",
        "STAGENAV_API_KEY",
        "STAGENAV_MODEL",
        "STAGENAV_TIMEOUT_SECS",
    ] {
        c.env_remove(var);
    }
    c
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

/// A small generated suite: 6 episodes over 2 scenes.
fn small_suite(root: &Path) -> PathBuf {
    let dir = root.join("suite");
    let code = main_with([
        "stagenav",
        "gen-suite",
        "--out",
        &s(&dir),
        "--episodes",
        "6",
        "--episodes-per-scene",
        "3",
        "--seed",
        "11",
    ]);
    assert_eq!(code, EXIT_OK);
    dir
}

fn run_args(suite: &Path, out: &Path) -> Vec<String> {
    vec![
        "stagenav".into(),
        "run".into(),
        "--scenes".into(),
        s(&suite.join("scenes")),
        "--episodes".into(),
        s(&suite.join("episodes.json")),
        "--out".into(),
        s(out),
    ]
}

fn report(path: &Path) -> MetricReport {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn remote_backend_without_credentials_fails_before_any_episode() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = small_suite(tmp.path());
    let out = tmp.path().join("out");
    let result = bin()
        .args(&run_args(&suite, &out)[1..])
        .args(["--backend", "remote"])
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(EXIT_ERROR));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("STAGENAV_ENDPOINT_URL"), "{stderr}");
    assert!(!out.exists(), "no output written");
}

#[test]
fn repeated_oracle_runs_have_zero_spread() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = small_suite(tmp.path());
    let out = tmp.path().join("out");
    let mut args = run_args(&suite, &out);
    args.extend(["--runs".into(), "3".into(), "--parallelism".into(), "3".into()]);
    assert_eq!(main_with(&args), EXIT_OK);
    let r = report(&out.join("report.json"));
    assert_eq!((r.runs, r.episodes), (3, 6));
    for stat in [r.tl, r.ne, r.osr, r.sr, r.spl, r.ndtw, r.steps, r.collision_rate] {
        assert_eq!(stat.std, 0.0);
    }
    assert_eq!(r.sr.mean, 100.0);
    for run in 0..3 {
        assert_eq!(std::fs::read_dir(out.join(format!("traces/run{run}"))).unwrap().count(), 6);
    }
}

#[test]
fn single_variant_ablation_matches_plain_run() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = small_suite(tmp.path());
    let run_out = tmp.path().join("run");
    let mut args = run_args(&suite, &run_out);
    args.extend(["--backend", "noisy-oracle", "--noise-rate", "0.2", "--noise-seed", "5"].map(String::from));
    assert_eq!(main_with(&args), EXIT_OK);

    let ablate_out = tmp.path().join("ablate");
    let mut args = run_args(&suite, &ablate_out);
    args[1] = "ablate".into();
    args.extend(
        ["--backend", "noisy-oracle", "--noise-rate", "0.2", "--noise-seed", "5", "--variants", "full"].map(String::from),
    );
    assert_eq!(main_with(&args), EXIT_OK);

    let plain = report(&run_out.join("report.json"));
    let ablation: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ablate_out.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(ablation["schema"], "stagenav.ablation/1");
    let row: MetricReport = serde_json::from_value(ablation["rows"][0]["report"].clone()).unwrap();
    assert_eq!(row, plain);
    assert_eq!(report(&ablate_out.join("full/report.json")), plain);
}

#[test]
fn ablation_rejects_unsupported_combination_up_front() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = small_suite(tmp.path());
    let out = tmp.path().join("out");
    let mut args = run_args(&suite, &out);
    args[1] = "ablate".into();
    args.extend(["--variants".into(), "full,no-dgmf+no-transition".into()]);
    assert_eq!(main_with(&args), EXIT_ERROR);
    assert!(!out.exists());
}

#[test]
fn validate_reports_goal_on_blocked_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = small_suite(tmp.path());
    assert_eq!(main_with(["stagenav", "validate", &s(&suite)]), EXIT_OK);

    let path = suite.join("episodes.json");
    let mut episodes: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    // the grid border is always wall
    episodes[0]["goal"] = serde_json::json!([0.25, 0.25]);
    std::fs::write(&path, serde_json::to_string_pretty(&episodes).unwrap()).unwrap();

    let result = bin().args(["validate", &s(&suite)]).output().unwrap();
    assert_eq!(result.status.code(), Some(EXIT_FAILURES));
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("episodes[0]") && stdout.contains("goal is not on a free cell"), "{stdout}");

    // the runner refuses the same inputs before running anything
    let out = tmp.path().join("out");
    assert_eq!(main_with(run_args(&suite, &out)), EXIT_ERROR);
    assert!(!out.join("traces").exists());
}

#[test]
fn validate_reports_malformed_episode_field() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = small_suite(tmp.path());
    let path = suite.join("episodes.json");
    let text = std::fs::read_to_string(&path).unwrap().replacen("\"start\": {", "\"start\": {\"bogus\": 1, ", 1);
    std::fs::write(&path, text).unwrap();
    let result = bin().args(["validate", &s(&suite)]).output().unwrap();
    assert_eq!(result.status.code(), Some(EXIT_FAILURES));
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("$[0].start"), "{stdout}");
}

#[test]
fn gen_suite_is_byte_identical_across_invocations() {
    let tmp = tempfile::tempdir().unwrap();
    let a = small_suite(&tmp.path().join("a"));
    let b = small_suite(&tmp.path().join("b"));
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.len() >= 4);
    assert_eq!(fa, fb);
}

#[test]
fn flags_override_file_which_overrides_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        "runs = 2\n[backend]\nkind = \"noisy-oracle\"\nrate = 0.1\nseed = 3\n[controller]\nhorizon = 5\nsttb_capacity = 2\n",
    )
    .unwrap();
    let cli = Cli::try_parse_from(["stagenav", "run", "--config", &s(&config), "--horizon", "6", "--noise-seed", "9"])
        .unwrap();
    let Sub::Run(args) = cli.command else { panic!("run") };
    let c = args.resolve().unwrap();
    assert_eq!(c.controller.horizon, 6);
    assert_eq!(c.controller.sttb_capacity, 2);
    assert_eq!(c.controller.max_actions, 4);
    assert_eq!(c.runs, 2);
    assert_eq!(
        c.backend,
        stagenav_cli::BackendSpec::NoisyOracle { rate: 0.1, seed: 9 }
    );
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = small_suite(tmp.path());
    let out = tmp.path().join("out");
    let mut noisy_without_rate = run_args(&suite, &out);
    noisy_without_rate.extend(["--backend".into(), "noisy-oracle".into()]);
    assert_eq!(main_with(&noisy_without_rate), EXIT_ERROR);

    let mut bad_horizon = run_args(&suite, &out);
    bad_horizon.extend(["--horizon".into(), "0".into()]);
    assert_eq!(main_with(&bad_horizon), EXIT_ERROR);

    let config = tmp.path().join("typo.toml");
    std::fs::write(&config, "[controller]\nhorizn = 4\n").unwrap();
    let mut typo = run_args(&suite, &out);
    typo.extend(["--config".into(), s(&config)]);
    assert_eq!(main_with(&typo), EXIT_ERROR);
    assert!(!out.exists());
}

#[test]
fn binary_run_prints_table_and_writes_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = small_suite(tmp.path());
    let out = tmp.path().join("out");
    let result = bin().args(&run_args(&suite, &out)[1..]).output().unwrap();
    assert_eq!(result.status.code(), Some(EXIT_OK));
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("SPL") && stdout.contains("nDTW"), "{stdout}");
    for f in ["report.json", "report.txt", "outcomes.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let outcomes: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("outcomes.json")).unwrap()).unwrap();
    assert_eq!(outcomes["schema"], "stagenav.outcomes/1");
    assert_eq!(outcomes["outcomes"].as_array().unwrap().len(), 6);
    for entry in std::fs::read_dir(out.join("traces/run0")).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        let trace = stagenav_core::trace::Trace::from_jsonl(&text).unwrap();
        assert!(trace.done().is_some());
        assert!(stagenav_core::audit::audit_trace(&trace).is_empty());
    }
}
