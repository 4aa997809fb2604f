//! Pipeline stages. Each stage reads only files written by earlier stages
//! and writes its own outputs under the run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xbar::attacks::{
    build_synthetic_dataset, craft_adversarial, default_ensemble_specs, evaluate_attack, train_surrogate_ensemble,
    AttackConfig, AttackKind, Attacker, Ensemble, LogitsExecutor, ResultRow,
};
use xbar::circuit::{calibrate_geometry, measure_nf, sample_inputs, CalibrationOptions};
use xbar::{CrossbarModel, Dataset, Network, Tensor};
use xbar::mapping::{AnalogClassifier, ExecBackend};
use xbar::surrogate::{generate_dataset, train_surrogate, DatasetOptions, SurrogateConfig, SurrogateNet};
use xbar::tensor::{
    evaluate_accuracy, load_network, read_idx_dataset, save_network, synthetic_digits, train_classifier,
    SyntheticDigits, TrainConfig,
};

use crate::config::{check_preset, Arch, AttackerCrossbar, BackendKind, DataConfig, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::manifest::write_atomic;

pub const CALIBRATION_CSV: &str = "calibration.csv";
pub const MODEL_FILE: &str = "model.json";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const SURROGATE_LOG: &str = "surrogate_log.csv";
pub const RESULTS_CSV: &str = "results.csv";
pub const ADVERSARIAL_DIR: &str = "adversarial";

/// Independent seed for one named use of the global seed.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub fn crossbar_path(out: &Path, preset: &str) -> PathBuf {
    out.join("crossbars").join(format!("{preset}.toml"))
}

pub fn surrogate_path(out: &Path, preset: &str) -> PathBuf {
    out.join("surrogates").join(format!("{preset}.json"))
}

fn require(path: &Path, stage: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(HarnessError::MissingInput {
            path: path.to_path_buf(),
            stage,
        })
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::csv(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::csv(path, e))?;
    write_atomic(path, &bytes)
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| HarnessError::csv(path, e))).collect()
}

/// Fixed decimal rendering so result files are byte-stable.
fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

// ---------------------------------------------------------------- calibrate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub preset: String,
    pub target_nf: f64,
    pub r_wire: f64,
    pub measured_nf: f64,
    pub samples: usize,
}

/// Tunes `r_wire` of `presets` (all presets the experiment uses when empty)
/// to their target NF.
pub fn calibrate(cfg: &ExperimentConfig, presets: &[String]) -> Result<Vec<CalibrationRow>> {
    let presets = if presets.is_empty() { cfg.all_presets() } else { presets.to_vec() };
    for p in &presets {
        check_preset(p)?;
    }
    let out = cfg.out_dir();
    let seed = derive_seed(cfg.seed, "calibrate");
    let opts = CalibrationOptions {
        samples: cfg.calibrate.samples,
        tolerance: cfg.calibrate.tolerance,
        seed,
        ..Default::default()
    };
    let mut rows = Vec::new();
    for preset in presets {
        let target = cfg
            .calibrate
            .target(&preset)
            .ok_or_else(|| HarnessError::Config(format!("no NF target for {preset}")))?;
        let mut model = CrossbarModel::preset(&preset)?;
        model.geometry = calibrate_geometry(target, &model, &opts)?;
        let samples = sample_inputs(&model, opts.samples, opts.stream_levels, seed);
        let measured = measure_nf(&model, &samples)?;
        write_atomic(&crossbar_path(&out, &preset), model.to_toml().as_bytes())?;
        rows.push(CalibrationRow {
            preset,
            target_nf: target,
            r_wire: model.geometry.r_wire,
            measured_nf: measured,
            samples: opts.samples,
        });
    }
    write_csv(&out.join(CALIBRATION_CSV), &rows)?;
    Ok(rows)
}

pub fn load_crossbar(cfg: &ExperimentConfig, preset: &str) -> Result<CrossbarModel> {
    let path = crossbar_path(&cfg.out_dir(), preset);
    require(&path, "calibrate")?;
    Ok(CrossbarModel::load(&path)?)
}

// ---------------------------------------------------------------- data

pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Splits> {
    match &cfg.data {
        DataConfig::Synthetic { train, test, size, noise } => {
            let gen = |n, purpose| {
                synthetic_digits(
                    n,
                    &SyntheticDigits {
                        size: *size,
                        noise: *noise,
                        seed: derive_seed(cfg.seed, purpose),
                    },
                )
            };
            Ok(Splits {
                train: gen(*train, "data/train"),
                test: gen(*test, "data/test"),
            })
        }
        DataConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let load = |i: &PathBuf, l: &PathBuf| -> Result<Dataset> {
                let (i, l) = (cfg.resolve(i), cfg.resolve(l));
                require(&i, "dataset")?;
                require(&l, "dataset")?;
                Ok(read_idx_dataset(&i, &l)?)
            };
            Ok(Splits {
                train: load(train_images, train_labels)?,
                test: load(test_images, test_labels)?,
            })
        }
    }
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub loss: f64,
    pub test_acc: f64,
}

pub fn build_classifier(cfg: &ExperimentConfig, input_shape: &[usize], classes: usize) -> Result<Network> {
    let specs = match cfg.model.arch {
        Arch::ToyCnn => Network::toy_cnn_spec(classes),
    };
    Ok(Network::build(input_shape, &specs, derive_seed(cfg.seed, "model/init"))?)
}

/// Trains the classifier and writes its checkpoint and per-epoch log.
pub fn train(cfg: &ExperimentConfig) -> Result<Vec<TrainLogRow>> {
    let out = cfg.out_dir();
    let data = load_data(cfg)?;
    let mut net = build_classifier(cfg, data.train.sample_shape(), data.train.classes)?;
    let tc = TrainConfig {
        epochs: cfg.model.epochs,
        lr: cfg.model.lr,
        momentum: cfg.model.momentum,
        batch: cfg.model.batch,
        seed: derive_seed(cfg.seed, "model/train"),
    };
    let report = train_classifier(&mut net, &data.train, Some(&data.test), &tc)?;
    let rows: Vec<TrainLogRow> = report
        .epochs
        .iter()
        .map(|e| TrainLogRow {
            epoch: e.epoch,
            loss: e.loss,
            test_acc: e.validation.unwrap_or(f64::NAN),
        })
        .collect();
    std::fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
    let tmp = out.join("model.json.partial");
    save_network(&net, &tmp)?;
    std::fs::rename(&tmp, out.join(MODEL_FILE)).map_err(|e| HarnessError::io(&out, e))?;
    write_csv(&out.join(TRAIN_LOG), &rows)?;
    Ok(rows)
}

pub fn load_model(cfg: &ExperimentConfig) -> Result<Network> {
    let path = cfg.out_dir().join(MODEL_FILE);
    require(&path, "train")?;
    Ok(load_network(&path)?)
}

// ---------------------------------------------------------------- surrogate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateLogRow {
    pub preset: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_mre: f64,
}

/// Fits one learned crossbar model per preset on circuit-simulated samples.
pub fn train_surrogates(cfg: &ExperimentConfig) -> Result<Vec<SurrogateLogRow>> {
    let out = cfg.out_dir();
    let s = &cfg.surrogate;
    let mut rows = Vec::new();
    for preset in cfg.all_presets() {
        let model = load_crossbar(cfg, &preset)?;
        let ds = generate_dataset(
            &model,
            &DatasetOptions {
                samples: s.samples,
                inputs_per_conductance: s.inputs_per_conductance,
                stream_levels: 2,
                seed: derive_seed(cfg.seed, &format!("surrogate/data/{preset}")),
            },
        )?;
        let sc = SurrogateConfig {
            hidden: s.hidden,
            epochs: s.epochs,
            lr: s.lr,
            batch: s.batch,
            seed: derive_seed(cfg.seed, &format!("surrogate/train/{preset}")),
            head: s.head,
            ..Default::default()
        };
        let (net, report) = train_surrogate(&ds, &sc)?;
        let path = surrogate_path(&out, &preset);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
        net.save(&path)?;
        rows.extend(report.epochs.iter().map(|e| SurrogateLogRow {
            preset: preset.clone(),
            epoch: e.epoch,
            train_loss: e.train_loss,
            validation_mre: e.validation_mre,
        }));
    }
    write_csv(&out.join(SURROGATE_LOG), &rows)?;
    Ok(rows)
}

/// The analog backend for `preset` selected by the config.
pub fn load_backend(cfg: &ExperimentConfig, preset: &str) -> Result<(CrossbarModel, ExecBackend)> {
    let model = load_crossbar(cfg, preset)?;
    let backend = match cfg.crossbars.backend {
        BackendKind::Circuit => ExecBackend::CircuitNonIdeal(model.clone()),
        BackendKind::Surrogate => {
            let path = surrogate_path(&cfg.out_dir(), preset);
            require(&path, "train-surrogate")?;
            ExecBackend::Surrogate(Arc::new(SurrogateNet::load(&path)?))
        }
    };
    Ok((model, backend))
}

// ---------------------------------------------------------------- attack

/// Serialized form of [`ResultRow`] with fixed-precision numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub scenario: String,
    pub attack: String,
    pub epsilon: String,
    pub iters_or_queries: usize,
    pub target_backend: String,
    pub attacker_backend: String,
    pub clean_acc: String,
    pub adv_acc: String,
    pub delta: String,
    pub seed: u64,
}

impl From<&ResultRow> for CsvRow {
    fn from(r: &ResultRow) -> Self {
        Self {
            scenario: r.scenario.clone(),
            attack: r.attack.clone(),
            epsilon: fixed(r.epsilon),
            iters_or_queries: r.iters_or_queries,
            target_backend: r.target_backend.clone(),
            attacker_backend: r.attacker_backend.clone(),
            clean_acc: fixed(r.clean_acc),
            adv_acc: fixed(r.adv_acc),
            delta: fixed(r.delta),
            seed: r.seed,
        }
    }
}

impl CsvRow {
    pub fn parse(&self, path: &Path) -> Result<ResultRow> {
        let num = |s: &str| s.parse::<f64>().map_err(|e| HarnessError::csv(path, format!("{s}: {e}")));
        Ok(ResultRow {
            scenario: self.scenario.clone(),
            attack: self.attack.clone(),
            epsilon: num(&self.epsilon)?,
            iters_or_queries: self.iters_or_queries,
            target_backend: self.target_backend.clone(),
            attacker_backend: self.attacker_backend.clone(),
            clean_acc: num(&self.clean_acc)?,
            adv_acc: num(&self.adv_acc)?,
            delta: num(&self.delta)?,
            seed: self.seed,
        })
    }
}

pub const DIGITAL: &str = "digital";

struct Target {
    name: String,
    preset: Option<String>,
    hw: Option<AnalogClassifier>,
}

impl Target {
    fn executor<'a>(&'a self, digital: &'a Network) -> &'a dyn LogitsExecutor {
        match &self.hw {
            Some(hw) => hw,
            None => digital,
        }
    }
}

/// IDX float32 file (big-endian, type 0x0D): `[n, c, h, w]` adversarial images.
fn write_idx_f32(path: &Path, x: &Tensor) -> Result<()> {
    let dims = x.shape();
    let mut bytes = vec![0u8, 0, 0x0D, dims.len() as u8];
    for &d in dims {
        bytes.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for &v in x.data() {
        bytes.extend_from_slice(&(v as f32).to_be_bytes());
    }
    write_atomic(path, &bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArchiveRow {
    row: usize,
    image: usize,
    label: usize,
    queries: usize,
    success: bool,
}

/// Runs the scenario × ε × target grid and writes the result table plus the
/// adversarial images of every crafted batch.
pub fn attack(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let out = cfg.out_dir();
    let net = load_model(cfg)?;
    let data = load_data(cfg)?;
    let a = &cfg.attack;
    let test = data.test.take(a.images.min(data.test.len()));
    let qc = cfg.quant_config();

    let mut hardware: BTreeMap<String, AnalogClassifier> = BTreeMap::new();
    for preset in cfg.all_presets() {
        let (tile, backend) = load_backend(cfg, &preset)?;
        hardware.insert(preset, AnalogClassifier::new(net.clone(), &qc, &tile, &backend)?);
    }
    let mut targets = vec![Target {
        name: DIGITAL.to_string(),
        preset: None,
        hw: None,
    }];
    for p in &cfg.crossbars.presets {
        let hw = hardware[p].clone();
        targets.push(Target {
            name: hw.hardware.backend.clone(),
            preset: Some(p.clone()),
            hw: Some(hw),
        });
    }

    // ensembles keyed by the executor they were trained to imitate
    let mut ensembles: BTreeMap<String, Ensemble> = BTreeMap::new();
    let probe = data.train.take(cfg.ensemble.probe.min(data.train.len())).images;
    let mut ensemble_for = |source_name: &str, source: &dyn LogitsExecutor| -> Result<Ensemble> {
        if let Some(e) = ensembles.get(source_name) {
            return Ok(e.clone());
        }
        let synth = build_synthetic_dataset(source, &probe)?;
        let tc = TrainConfig {
            epochs: cfg.ensemble.epochs,
            lr: cfg.ensemble.lr,
            momentum: cfg.model.momentum,
            batch: cfg.ensemble.batch,
            seed: 0,
        };
        let e = train_surrogate_ensemble(
            &synth,
            &default_ensemble_specs(test.classes),
            &tc,
            derive_seed(cfg.seed, &format!("ensemble/{source_name}")),
        )?;
        ensembles.insert(source_name.to_string(), e.clone());
        Ok(e)
    };

    let adv_dir = out.join(ADVERSARIAL_DIR);
    let mut rows = Vec::new();
    let mut archive = Vec::new();
    for entry in &a.scenarios {
        for &eps in &a.epsilons {
            let queries = if entry.scenario.is_adaptive() {
                a.adaptive_square_queries
            } else {
                a.square_queries
            };
            let ac = AttackConfig {
                epsilon: eps,
                alpha: eps * a.alpha_fraction,
                iters: a.pgd_iters,
                queries,
                seed: derive_seed(cfg.seed, "attack/square"),
            };
            let budget = if entry.attack == AttackKind::Square { queries } else { a.pgd_iters };
            // non-adaptive attacks are crafted once and replayed on every target
            let mut shared: Option<(Tensor, Vec<usize>)> = None;
            for t in &targets {
                let (attacker_name, attacker_hw) = match (&entry.attacker, &t.preset) {
                    (None, _) => (DIGITAL.to_string(), None),
                    (Some(_), None) => continue,
                    (Some(AttackerCrossbar::Matched), Some(p)) => (p.clone(), Some(&hardware[p])),
                    (Some(AttackerCrossbar::Preset(q)), Some(_)) => (q.clone(), Some(&hardware[q])),
                };
                let scenario = entry.scenario.scenario(&attacker_name);
                let ensemble = if entry.attack == AttackKind::Ensemble {
                    let attacker = Attacker {
                        digital: &net,
                        hardware: attacker_hw,
                        ensemble: None,
                    };
                    Some(ensemble_for(&attacker_name, attacker.query_source(&scenario)?)?)
                } else {
                    None
                };
                let attacker = Attacker {
                    digital: &net,
                    hardware: attacker_hw,
                    ensemble: ensemble.as_ref(),
                };
                let crafted = match (&shared, entry.scenario.is_adaptive()) {
                    (Some(c), false) => c.clone(),
                    _ => {
                        let c = craft_adversarial(&scenario, entry.attack, &attacker, &test, &ac)?;
                        if !entry.scenario.is_adaptive() {
                            shared = Some(c.clone());
                        }
                        c
                    }
                };
                let result = evaluate_attack(t.executor(&net), &test, &crafted.0, &crafted.1)?;
                let row_id = rows.len();
                write_idx_f32(&adv_dir.join(format!("row{row_id:04}.idx")), &crafted.0)?;
                archive.extend(result.examples.iter().enumerate().map(|(i, e)| ArchiveRow {
                    row: row_id,
                    image: i,
                    label: e.label,
                    queries: e.queries,
                    success: e.success,
                }));
                rows.push(ResultRow {
                    scenario: scenario.name(),
                    attack: entry.attack.name().to_string(),
                    epsilon: eps,
                    iters_or_queries: budget,
                    target_backend: t.name.clone(),
                    attacker_backend: match attacker_hw {
                        Some(hw) => hw.hardware.backend.clone(),
                        None => DIGITAL.to_string(),
                    },
                    clean_acc: result.clean_acc,
                    adv_acc: result.adv_acc,
                    delta: result.delta,
                    seed: cfg.seed,
                });
            }
        }
    }
    let csv_rows: Vec<CsvRow> = rows.iter().map(CsvRow::from).collect();
    write_csv(&out.join(RESULTS_CSV), &csv_rows)?;
    write_csv(&adv_dir.join("index.csv"), &archive)?;
    Ok(rows)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    require(path, "attack")?;
    read_csv::<CsvRow>(path)?.iter().map(|r| r.parse(path)).collect()
}

/// Test accuracy of the stored classifier (used by `report` and tests).
pub fn test_accuracy(cfg: &ExperimentConfig, net: &Network) -> Result<f64> {
    let data = load_data(cfg)?;
    Ok(evaluate_accuracy(|x| net.forward(x), &data.test, 256)?)
}

/// Human-readable one-line summary of a results table.
pub fn summarize(rows: &[ResultRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(
            s,
            "{:<22} {:<8} eps={:.4} {:<28} <- {:<28} clean={:.3} adv={:.3}",
            r.scenario, r.attack, r.epsilon, r.target_backend, r.attacker_backend, r.clean_acc, r.adv_acc
        );
    }
    s
}
