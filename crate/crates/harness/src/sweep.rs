//! Runs every config in a directory and writes an index.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::HarnessError;
use crate::run::{run, RunOptions, RunRecord};

pub struct SweepEntry {
    pub path: PathBuf,
    pub outcome: Result<RunRecord, HarnessError>,
}

/// `*.toml` files directly inside `dir`, sorted by name.
pub fn config_paths(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Runs the configs independently; a failing config does not stop the
/// others. Writes `index.csv` into `out_dir`.
pub fn sweep(
    paths: &[PathBuf],
    out_dir: &Path,
    options: &RunOptions,
) -> Result<Vec<SweepEntry>, HarnessError> {
    let configs: Vec<Result<ExperimentConfig, HarnessError>> =
        paths.iter().map(|p| ExperimentConfig::load(p)).collect();
    let mut names: Vec<&str> = configs
        .iter()
        .filter_map(|c| c.as_ref().ok().map(|c| c.name.as_str()))
        .collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(HarnessError::invalid(format!(
            "config name `{}` appears twice in the sweep",
            w[0]
        )));
    }
    let inner = RunOptions {
        workers: None,
        ..options.clone()
    };
    let job = || {
        configs
            .into_par_iter()
            .zip(paths.par_iter())
            .map(|(config, path)| SweepEntry {
                path: path.clone(),
                outcome: config.and_then(|c| run(&c, out_dir, &inner).map(|(record, _)| record)),
            })
            .collect::<Vec<_>>()
    };
    let entries = match options.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| HarnessError::invalid(format!("worker pool: {e}")))?
            .install(job),
        None => job(),
    };
    write_index(&entries, &out_dir.join("index.csv"))?;
    Ok(entries)
}

fn write_index(entries: &[SweepEntry], path: &Path) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["config", "name", "config_hash", "status", "csv"])?;
    for e in entries {
        let config = e.path.display().to_string();
        match &e.outcome {
            Ok(r) => w.write_record([
                config,
                r.config.name.clone(),
                r.config_hash.clone(),
                "ok".into(),
                format!("{}.csv", r.config.name),
            ])?,
            Err(err) => w.write_record([
                config,
                String::new(),
                String::new(),
                format!("error: {err}"),
                String::new(),
            ])?,
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}
