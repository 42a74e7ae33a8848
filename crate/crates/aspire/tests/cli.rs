use std::path::Path;
use std::process::Command;

fn aspire(args: &[&str], cache: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_aspire"))
        .args(args)
        .env("ASPIRE_CACHE_DIR", cache)
        .output()
        .unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");

    std::fs::write(&cfg, r#"{"data_dir": "nowhere", "holdout_fraction": 2.0}"#).unwrap();
    assert_eq!(aspire(&["run", "--config", cfg.to_str().unwrap()], dir.path()).status.code(), Some(2));

    std::fs::write(&cfg, r#"{"data_dir": "nowhere", "adapters": {"captioner": "blip"}}"#).unwrap();
    assert_eq!(aspire(&["run", "--config", cfg.to_str().unwrap()], dir.path()).status.code(), Some(2));

    std::fs::write(&cfg, "{not json").unwrap();
    assert_eq!(aspire(&["run", "--config", cfg.to_str().unwrap()], dir.path()).status.code(), Some(2));

    // Missing data is a runtime failure, not a config error.
    std::fs::write(&cfg, r#"{"data_dir": "nowhere"}"#).unwrap();
    let out = aspire(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));

    assert_eq!(aspire(&["report"], dir.path()).status.code(), Some(2));
}

#[test]
fn cache_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bench");
    let b = synthbench::make_benchmark(&synthbench::BenchConfig {
        per_class_train: 20,
        test_per_group: 4,
        ..Default::default()
    })
    .unwrap();
    synthbench::write_benchmark(&b, &data).unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"data_dir": "bench", "cache_dir": "ignored", "augment": false,
            "retrain": {"epochs": 1, "learning_rate": 0.02}}"#,
    )
    .unwrap();
    let env_cache = dir.path().join("env-cache");
    let out = aspire(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("out").to_str().unwrap()], &env_cache);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("ignored").exists());
    let runs: Vec<_> = std::fs::read_dir(&env_cache).unwrap().collect();
    assert_eq!(runs.len(), 1);

    let report = aspire(&["report", "--json", dir.path().join("out").to_str().unwrap()], &env_cache);
    assert!(report.status.success());
    let parsed = aspire::Report::from_json(&String::from_utf8(report.stdout).unwrap()).unwrap();
    assert_eq!(parsed.rows.len(), 1);
}
