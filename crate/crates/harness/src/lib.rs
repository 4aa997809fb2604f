//! Experiment runner: configuration, pipeline stages, run manifest and reports.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};

/// Pipeline stage selected on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    /// Calibrate the given presets, or every preset the config uses.
    Calibrate { presets: Vec<String> },
    Train,
    TrainSurrogate,
    Attack,
    /// Extra result tables to merge with the run's own.
    Report { results: Vec<PathBuf> },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Calibrate { .. } => "calibrate",
            Command::Train => "train",
            Command::TrainSurrogate => "train-surrogate",
            Command::Attack => "attack",
            Command::Report { .. } => "report",
        }
    }
}

/// Command-line overrides applied after the config file is read.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Loads and validates the config, applies overrides, runs one stage and
/// records it in the run manifest. Returns a short summary.
pub fn run(config: &Path, overrides: &Overrides, cmd: &Command) -> Result<String> {
    let (mut cfg, bytes) = ExperimentConfig::load(config)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.out = std::path::absolute(out).map_err(|e| HarnessError::io(out, e))?;
    }
    cfg.validate()?;
    let hash = manifest::sha256_hex(&bytes);
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;

    let start = Instant::now();
    let summary = match cmd {
        Command::Calibrate { presets } => pipeline::calibrate(&cfg, presets)?
            .iter()
            .map(|r| format!("{}: r_wire = {:.4} ohm, NF = {:.4} (target {})\n", r.preset, r.r_wire, r.measured_nf, r.target_nf))
            .collect(),
        Command::Train => pipeline::train(&cfg)?
            .iter()
            .map(|r| format!("epoch {}: loss {:.4}, test accuracy {:.4}\n", r.epoch, r.loss, r.test_acc))
            .collect(),
        Command::TrainSurrogate => {
            let rows = pipeline::train_surrogates(&cfg)?;
            let mut last = std::collections::BTreeMap::new();
            for r in &rows {
                last.insert(r.preset.clone(), r.validation_mre);
            }
            last.iter().map(|(p, m)| format!("{p}: validation MRE {m:.4}\n")).collect()
        }
        Command::Attack => pipeline::summarize(&pipeline::attack(&cfg)?),
        Command::Report { results } => {
            let mut inputs = vec![out.join(pipeline::RESULTS_CSV)];
            inputs.extend(results.iter().cloned());
            let rep = report::report(&out, &inputs)?;
            format!("{} gain rows written to {}\n", rep.gains.len(), out.join(report::REPORT_DIR).display())
        }
    };
    manifest::record_stage(&out, cmd.name(), start.elapsed().as_secs_f64(), cfg.seed, &hash)?;
    Ok(summary)
}
