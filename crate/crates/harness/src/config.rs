//! Experiment configuration: parsing, defaults and fail-fast validation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xbar::attacks::{AttackKind, ThreatScenario};
use xbar::circuit::PRESET_NAMES;
use xbar::mapping::QuantConfig;
use xbar::surrogate::OutputHead;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub quant: QuantSection,
    #[serde(default)]
    pub crossbars: CrossbarSection,
    #[serde(default)]
    pub calibrate: CalibrateSection,
    #[serde(default)]
    pub surrogate: SurrogateSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub attack: AttackSection,
    /// Directory holding the config file; set by [`ExperimentConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    /// Built-in 10-class digit generator.
    Synthetic {
        #[serde(default = "default_train")]
        train: usize,
        #[serde(default = "default_test")]
        test: usize,
        #[serde(default = "default_size")]
        size: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    /// IDX image/label files (MNIST layout), pixels scaled to [0, 1].
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

fn default_train() -> usize {
    6000
}
fn default_test() -> usize {
    1000
}
fn default_size() -> usize {
    16
}
fn default_noise() -> f64 {
    0.05
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            train: default_train(),
            test: default_test(),
            size: default_size(),
            noise: default_noise(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    ToyCnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: Arch,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::ToyCnn,
            epochs: 6,
            lr: 0.02,
            momentum: 0.9,
            batch: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantSection {
    pub input_bits: u32,
    pub weight_bits: u32,
    pub stream_bits: u32,
    pub slice_bits: u32,
}

impl Default for QuantSection {
    fn default() -> Self {
        let q = QuantConfig::default();
        Self {
            input_bits: q.input_bits,
            weight_bits: q.weight_bits,
            stream_bits: q.stream_bits,
            slice_bits: q.slice_bits,
        }
    }
}

impl From<QuantSection> for QuantConfig {
    fn from(q: QuantSection) -> Self {
        QuantConfig {
            input_bits: q.input_bits,
            weight_bits: q.weight_bits,
            stream_bits: q.stream_bits,
            slice_bits: q.slice_bits,
        }
    }
}

/// How analog targets compute their crossbar products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// Nodal circuit solution.
    Circuit,
    /// Learned crossbar model trained on circuit solutions.
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossbarSection {
    /// Crossbar variants used as analog targets.
    pub presets: Vec<String>,
    pub backend: BackendKind,
}

impl Default for CrossbarSection {
    fn default() -> Self {
        Self {
            presets: PRESET_NAMES.iter().map(|s| s.to_string()).collect(),
            backend: BackendKind::Surrogate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateSection {
    /// Target NF per preset; presets without an entry use their nominal value.
    pub targets: BTreeMap<String, f64>,
    pub samples: usize,
    pub tolerance: f64,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        Self {
            targets: BTreeMap::new(),
            samples: 200,
            tolerance: 0.01,
        }
    }
}

/// Nominal NF of each built-in preset.
pub fn nominal_nf(preset: &str) -> Option<f64> {
    match preset {
        "64x64_300k" => Some(0.07),
        "32x32_100k" => Some(0.14),
        "64x64_100k" => Some(0.26),
        _ => None,
    }
}

impl CalibrateSection {
    pub fn target(&self, preset: &str) -> Option<f64> {
        self.targets.get(preset).copied().or_else(|| nominal_nf(preset))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateSection {
    pub samples: usize,
    pub inputs_per_conductance: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub head: OutputHead,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        Self {
            samples: 8000,
            inputs_per_conductance: 100,
            hidden: 128,
            epochs: 10,
            lr: 0.05,
            batch: 64,
            head: OutputHead::Attenuation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    /// Images the attacker queries to build the synthetic dataset.
    pub probe: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            probe: 2000,
            epochs: 6,
            lr: 0.01,
            batch: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioName {
    NonAdaptiveBlackBox,
    NonAdaptiveWhiteBox,
    AdaptiveBlackBox,
    AdaptiveWhiteBox,
}

impl ScenarioName {
    pub fn is_adaptive(&self) -> bool {
        matches!(self, ScenarioName::AdaptiveBlackBox | ScenarioName::AdaptiveWhiteBox)
    }

    /// Knowledge flags; `crossbar` names the attacker's model for adaptive rows.
    pub fn scenario(&self, crossbar: &str) -> ThreatScenario {
        match self {
            ScenarioName::NonAdaptiveBlackBox => ThreatScenario::non_adaptive_black_box(),
            ScenarioName::NonAdaptiveWhiteBox => ThreatScenario::non_adaptive_white_box(),
            ScenarioName::AdaptiveBlackBox => ThreatScenario::adaptive_black_box(crossbar),
            ScenarioName::AdaptiveWhiteBox => ThreatScenario::adaptive_white_box(crossbar),
        }
    }
}

/// The attacker's crossbar model in adaptive scenarios.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackerCrossbar {
    /// Same preset as the target.
    Matched,
    /// Fixed preset, whatever the target.
    Preset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEntry {
    pub scenario: ScenarioName,
    pub attack: AttackKind,
    /// Required for adaptive scenarios, rejected otherwise.
    #[serde(default)]
    pub attacker: Option<AttackerCrossbar>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    /// Test images attacked (the first `images` of the test split).
    pub images: usize,
    pub epsilons: Vec<f64>,
    pub pgd_iters: usize,
    /// Step size as a fraction of ε.
    pub alpha_fraction: f64,
    pub square_queries: usize,
    pub adaptive_square_queries: usize,
    pub scenarios: Vec<ScenarioEntry>,
}

impl Default for AttackSection {
    fn default() -> Self {
        let entry = |scenario, attack, attacker: Option<AttackerCrossbar>| ScenarioEntry {
            scenario,
            attack,
            attacker,
        };
        Self {
            images: 200,
            epsilons: vec![2.0 / 255.0, 4.0 / 255.0, 8.0 / 255.0, 16.0 / 255.0, 24.0 / 255.0],
            pgd_iters: 30,
            alpha_fraction: 0.25,
            square_queries: 1000,
            adaptive_square_queries: 30,
            scenarios: vec![
                entry(ScenarioName::NonAdaptiveWhiteBox, AttackKind::Pgd, None),
                entry(ScenarioName::NonAdaptiveBlackBox, AttackKind::Square, None),
                entry(ScenarioName::NonAdaptiveBlackBox, AttackKind::Ensemble, None),
                entry(ScenarioName::AdaptiveWhiteBox, AttackKind::Pgd, Some(AttackerCrossbar::Matched)),
                entry(
                    ScenarioName::AdaptiveWhiteBox,
                    AttackKind::Pgd,
                    Some(AttackerCrossbar::Preset("64x64_300k".into())),
                ),
            ],
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: default_out(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            quant: QuantSection::default(),
            crossbars: CrossbarSection::default(),
            calibrate: CalibrateSection::default(),
            surrogate: SurrogateSection::default(),
            ensemble: EnsembleSection::default(),
            attack: AttackSection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file; returns it with the raw bytes for hashing.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        let text = String::from_utf8(bytes.clone()).map_err(|_| bad(format!("{} is not UTF-8", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_toml(&text, &base)?, bytes))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out)
    }

    pub fn quant_config(&self) -> QuantConfig {
        self.quant.into()
    }

    /// Every check that can be made without running a stage.
    pub fn validate(&self) -> Result<()> {
        match &self.data {
            DataConfig::Synthetic { train, test, size, noise } => {
                if *train == 0 || *test == 0 {
                    return Err(bad("synthetic data needs train > 0 and test > 0"));
                }
                if *size < 8 || size % 4 != 0 {
                    return Err(bad(format!("synthetic image size {size} must be a multiple of 4 and >= 8")));
                }
                if !(0.0..=1.0).contains(noise) {
                    return Err(bad(format!("noise {noise} outside [0, 1]")));
                }
            }
            DataConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    let full = self.resolve(p);
                    if !full.is_file() {
                        return Err(bad(format!("dataset file {} not found", full.display())));
                    }
                }
            }
        }
        let m = &self.model;
        if m.epochs == 0 || m.batch == 0 || !(m.lr > 0.0) || !(0.0..1.0).contains(&m.momentum) {
            return Err(bad("model needs epochs > 0, batch > 0, lr > 0 and momentum in [0, 1)"));
        }
        self.quant_config().validate(4).map_err(|e| bad(format!("quantization: {e}")))?;

        if self.crossbars.presets.is_empty() {
            return Err(bad("crossbars.presets is empty"));
        }
        for p in &self.crossbars.presets {
            check_preset(p)?;
        }
        for (p, nf) in &self.calibrate.targets {
            check_preset(p)?;
            if !(0.0..0.5).contains(nf) {
                return Err(bad(format!("calibration target {nf} for {p} outside [0, 0.5)")));
            }
        }
        if self.calibrate.samples == 0 || !(self.calibrate.tolerance > 0.0) {
            return Err(bad("calibrate needs samples > 0 and tolerance > 0"));
        }
        let s = &self.surrogate;
        if s.samples == 0 || s.inputs_per_conductance == 0 || s.hidden == 0 || s.epochs == 0 || s.batch == 0 || !(s.lr > 0.0) {
            return Err(bad("surrogate needs positive samples, inputs_per_conductance, hidden, epochs, batch and lr"));
        }
        let e = &self.ensemble;
        if e.probe == 0 || e.epochs == 0 || e.batch == 0 || !(e.lr > 0.0) {
            return Err(bad("ensemble needs positive probe, epochs, batch and lr"));
        }

        let a = &self.attack;
        if a.scenarios.is_empty() {
            return Err(bad("attack.scenarios is empty"));
        }
        if a.epsilons.is_empty() {
            return Err(bad("attack.epsilons is empty"));
        }
        if let Some(eps) = a.epsilons.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
            return Err(bad(format!("epsilon {eps} outside (0, 1]")));
        }
        if a.epsilons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("attack.epsilons must be strictly increasing"));
        }
        if a.images == 0 {
            return Err(bad("attack.images must be > 0"));
        }
        if !(0.0..=1.0).contains(&a.alpha_fraction) {
            return Err(bad("attack.alpha_fraction must lie in [0, 1]"));
        }
        for (i, s) in a.scenarios.iter().enumerate() {
            let white = s.attack == AttackKind::Pgd;
            let wants_white = matches!(s.scenario, ScenarioName::NonAdaptiveWhiteBox | ScenarioName::AdaptiveWhiteBox);
            if white != wants_white {
                return Err(bad(format!(
                    "scenario {i}: {} attack does not fit {:?}",
                    s.attack.name(),
                    s.scenario
                )));
            }
            match (&s.attacker, s.scenario.is_adaptive()) {
                (None, true) => return Err(bad(format!("scenario {i}: adaptive scenarios need `attacker`"))),
                (Some(_), false) => return Err(bad(format!("scenario {i}: `attacker` only applies to adaptive scenarios"))),
                (Some(AttackerCrossbar::Preset(p)), true) => check_preset(p)?,
                _ => {}
            }
        }
        Ok(())
    }

    /// Presets the pipeline needs crossbar files for: targets and fixed attacker models.
    pub fn all_presets(&self) -> Vec<String> {
        let mut out = self.crossbars.presets.clone();
        for s in &self.attack.scenarios {
            if let Some(AttackerCrossbar::Preset(p)) = &s.attacker {
                if !out.contains(p) {
                    out.push(p.clone());
                }
            }
        }
        out
    }
}

pub fn check_preset(p: &str) -> Result<()> {
    if !PRESET_NAMES.contains(&p) {
        return Err(bad(format!("unknown crossbar preset `{p}` (known: {})", PRESET_NAMES.join(", "))));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(text, Path::new("."))
    }

    #[test]
    fn empty_file_gives_the_default_experiment() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.all_presets().len(), 3);
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = parse(
            r#"
            seed = 7
            out = "results"
            [data]
            kind = "synthetic"
            train = 100
            test = 20
            [crossbars]
            presets = ["32x32_100k"]
            backend = "circuit"
            [attack]
            epsilons = [0.05, 0.1]
            [[attack.scenarios]]
            scenario = "adaptive-white-box"
            attack = "pgd"
            attacker = { preset = "64x64_300k" }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.crossbars.backend, BackendKind::Circuit);
        assert_eq!(cfg.attack.scenarios.len(), 1);
        assert_eq!(cfg.all_presets(), vec!["32x32_100k".to_string(), "64x64_300k".to_string()]);
        assert_eq!(cfg.out_dir(), PathBuf::from("./results"));
    }

    #[test]
    fn invalid_configs_fail_before_any_work() {
        for text in [
            "[crossbars]\npresets = [\"128x128_1k\"]",
            "[attack]\nepsilons = [0.0]",
            "[attack]\nepsilons = [0.2, 0.1]",
            "[attack]\nscenarios = []",
            "[[attack.scenarios]]\nscenario = \"non-adaptive-black-box\"\nattack = \"pgd\"",
            "[[attack.scenarios]]\nscenario = \"adaptive-white-box\"\nattack = \"pgd\"",
            "[[attack.scenarios]]\nscenario = \"non-adaptive-white-box\"\nattack = \"pgd\"\nattacker = \"matched\"",
            "[data]\nkind = \"idx\"\ntrain_images = \"nope\"\ntrain_labels = \"nope\"\ntest_images = \"nope\"\ntest_labels = \"nope\"",
            "[quant]\ninput_bits = 7\nstream_bits = 2",
            "[model]\nepochs = 0",
            "unknown = 1",
        ] {
            let err = parse(text).unwrap_err();
            assert_eq!(err.category(), "config", "{text}: {err}");
        }
    }
}
