//! `datagen`: synthesize a dataset into the output directory, then verify
//! and record train/test motion-pattern exclusivity.

use std::fs;
use std::path::PathBuf;

use mage_datagen::dataset::{read_manifest, split_dir, DatasetSummary};
use mage_datagen::{build_dataset, check_split_exclusivity, DatagenError, Split};
use serde_json::json;

use crate::config::RunConfig;
use crate::{runtime, usage, CliError};

pub struct DatagenOutcome {
    pub summary: DatasetSummary,
    pub exclusive: bool,
    pub out_dir: PathBuf,
}

pub fn run(cfg: &RunConfig) -> Result<DatagenOutcome, CliError> {
    fs::create_dir_all(&cfg.out_dir).map_err(runtime)?;
    let dcfg = cfg.dataset_config(&cfg.out_dir);
    log::info!(
        "synthesizing {} train + {} test {} clips into {}",
        dcfg.n_train,
        dcfg.n_test,
        dcfg.kind,
        dcfg.out_dir.display()
    );
    let summary = build_dataset(&dcfg).map_err(classify)?;

    let train = read_manifest(&split_dir(&cfg.out_dir, Split::Train)).map_err(classify)?;
    let test = read_manifest(&split_dir(&cfg.out_dir, Split::Test)).map_err(classify)?;
    let report = check_split_exclusivity(&train, &test).map_err(classify)?;
    if !report.passes() {
        log::warn!("{} motion patterns appear in both splits", report.overlap.len());
    }
    let exclusivity = json!({
        "train_patterns": report.train_pairs.len(),
        "test_patterns": report.test_pairs.len(),
        "overlap": report
            .overlap
            .iter()
            .map(|(digit, motion)| format!("{digit} {motion}"))
            .collect::<Vec<_>>(),
        "passes": report.passes(),
    });
    fs::write(
        cfg.out_dir.join("exclusivity.json"),
        serde_json::to_string_pretty(&exclusivity).map_err(runtime)?,
    )
    .map_err(runtime)?;

    super::write_run_log(
        &cfg.out_dir,
        "datagen",
        cfg,
        json!({ "fingerprint": summary.fingerprint, "exclusivity": exclusivity }),
    )?;
    Ok(DatagenOutcome { exclusive: report.passes(), out_dir: cfg.out_dir.clone(), summary })
}

fn classify(e: DatagenError) -> CliError {
    match e {
        DatagenError::Config(m) => usage(m),
        other => runtime(other),
    }
}
