mod common;

use std::path::PathBuf;

use grl_harness::run::{run, RunOptions};
use grl_harness::sweep::{config_paths, sweep};
use grl_harness::ExperimentConfig;

fn index_rows(dir: &std::path::Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(dir.join("index.csv"))
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

#[test]
fn empty_sweep_writes_an_empty_index() {
    let configs = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let paths = config_paths(configs.path()).unwrap();
    assert!(sweep(&paths, out.path(), &RunOptions::default())
        .unwrap()
        .is_empty());
    assert!(index_rows(out.path()).is_empty());
}

#[test]
fn single_config_sweep_matches_run() {
    let configs = tempfile::tempdir().unwrap();
    let path = configs.path().join("one.toml");
    std::fs::write(&path, common::THOMPSON).unwrap();
    let out = tempfile::tempdir().unwrap();
    let entries = sweep(&[path], &out.path().join("sweep"), &RunOptions::default()).unwrap();
    assert_eq!(entries.len(), 1);
    let config = ExperimentConfig::from_toml(common::THOMPSON).unwrap();
    let (_, files) = run(&config, &out.path().join("run"), &RunOptions::default()).unwrap();
    let swept = std::fs::read(out.path().join("sweep").join("thompson_small.csv")).unwrap();
    assert_eq!(swept, std::fs::read(files.csv).unwrap());
}

#[test]
fn discount_variants_get_distinct_hashes() {
    let configs = tempfile::tempdir().unwrap();
    let mut paths: Vec<PathBuf> = Vec::new();
    for gamma in ["0.5", "0.9"] {
        let text = common::THOMPSON
            .replace("gamma = 0.9", &format!("gamma = {gamma}"))
            .replace(
                "thompson_small",
                &format!("gamma_{}", gamma.replace('.', "_")),
            );
        let path = configs.path().join(format!("g{gamma}.toml"));
        std::fs::write(&path, text).unwrap();
        paths.push(path);
    }
    let out = tempfile::tempdir().unwrap();
    let entries = sweep(&paths, out.path(), &RunOptions::default()).unwrap();
    let hashes: Vec<String> = entries
        .iter()
        .map(|e| e.outcome.as_ref().unwrap().config_hash.clone())
        .collect();
    assert_ne!(hashes[0], hashes[1]);
    let rows = index_rows(out.path());
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| &r[3] == "ok"));
}

#[test]
fn failures_stay_with_their_config() {
    let configs = tempfile::tempdir().unwrap();
    std::fs::write(configs.path().join("a.toml"), common::THOMPSON).unwrap();
    std::fs::write(configs.path().join("b.toml"), "name = \"broken\"\n").unwrap();
    let out = tempfile::tempdir().unwrap();
    let paths = config_paths(configs.path()).unwrap();
    let entries = sweep(&paths, out.path(), &RunOptions::default()).unwrap();
    assert!(entries[0].outcome.is_ok());
    assert!(entries[1].outcome.is_err());
    let rows = index_rows(out.path());
    assert!(rows[1][3].starts_with("error"));
}
