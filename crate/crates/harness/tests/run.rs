mod common;

use grl_harness::config::ExperimentConfig;
use grl_harness::error::EXIT_INVALID;
use grl_harness::run::{execute, run, RunOptions, CSV_HEADER};

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).unwrap()
}

fn read_rows(path: &std::path::Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(
        r.headers().unwrap(),
        &csv::StringRecord::from(CSV_HEADER.to_vec())
    );
    r.records().map(|x| x.unwrap()).collect()
}

#[test]
fn zero_seeds_is_a_validation_error() {
    let text = common::THOMPSON.replace("n_seeds = 6", "n_seeds = 0");
    let e = ExperimentConfig::from_toml(&text).unwrap_err();
    assert_eq!(e.exit_code(), EXIT_INVALID);
    let c = config(common::THOMPSON);
    let options = RunOptions {
        seeds: Some(0),
        ..RunOptions::default()
    };
    assert_eq!(execute(&c, &options).unwrap_err().exit_code(), EXIT_INVALID);
}

#[test]
fn row_count_is_checkpoints_times_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(common::THOMPSON);
    let (_, files) = run(&c, dir.path(), &RunOptions::default()).unwrap();
    let rows = read_rows(&files.csv);
    assert_eq!(rows.len(), c.checkpoints.len() * c.metrics.len());
    for row in &rows {
        assert_eq!(&row[4], "6");
        assert!(!row[3].is_empty());
    }
}

#[test]
fn identical_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(common::THOMPSON);
    let read = |sub: &str, workers| {
        let options = RunOptions {
            workers: Some(workers),
            per_seed: true,
            ..RunOptions::default()
        };
        let (_, files) = run(&c, &dir.path().join(sub), &options).unwrap();
        let mut out = vec![
            std::fs::read(&files.csv).unwrap(),
            std::fs::read(&files.blocks).unwrap(),
        ];
        out.extend(files.per_seed.iter().map(|p| std::fs::read(p).unwrap()));
        out
    };
    let a = read("a", 1);
    assert_eq!(a, read("b", 1));
    assert_eq!(a, read("c", 8));
    assert_eq!(a.len(), 2 + 6);
}

#[test]
fn powers_of_two_regret_column() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(common::POWERS_OF_TWO);
    let (_, files) = run(&c, dir.path(), &RunOptions::default()).unwrap();
    let rows = read_rows(&files.csv);
    for row in rows {
        let t: usize = row[1].parse().unwrap();
        let mean: f64 = row[2].parse().unwrap();
        assert_eq!(mean, (t.ilog2() + 1) as f64, "{} at t = {t}", &row[0]);
        // one seed, or an exact metric: no interval
        assert_eq!(&row[3], "");
    }
}

#[test]
fn sidecar_embeds_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(common::THOMPSON);
    let (record, files) = run(&c, dir.path(), &RunOptions::default()).unwrap();
    let sidecar: toml::Table = std::fs::read_to_string(&files.sidecar)
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(
        sidecar["config_hash"].as_str(),
        Some(record.config_hash.as_str())
    );
    let embedded: ExperimentConfig = sidecar["config"].clone().try_into().unwrap();
    assert_eq!(embedded, c);
    assert_eq!(embedded.hash(), record.config_hash);
    assert!(sidecar.contains_key("wall_clock_seconds"));
}

#[test]
fn blocks_cover_the_trajectory() {
    let c = config(common::THOMPSON);
    let record = execute(&c, &RunOptions::default()).unwrap();
    for seed in 0..6 {
        let blocks: Vec<_> = record
            .blocks
            .iter()
            .filter(|(s, _)| *s == seed)
            .map(|(_, b)| b)
            .collect();
        assert_eq!(blocks[0].start, 1);
        for w in blocks.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
        for b in blocks {
            assert!(b.truncation_bound <= b.eps + 1e-12);
        }
    }
}

#[test]
fn tiny_node_budget_is_reported() {
    let c = config(&common::THOMPSON.replace("n_seeds = 6", "n_seeds = 2\nnode_budget = 3"));
    let e = execute(&c, &RunOptions::default()).unwrap_err();
    assert_eq!(e.exit_code(), grl_harness::error::EXIT_BUDGET, "{e}");
    assert!(e.to_string().contains("seed"), "{e}");
}
