//! Adversarial attacks under the four threat scenarios: PGD with digital,
//! ensemble or hardware-in-loop gradients, and the query-only Square Attack.

mod ensemble;
mod pgd;
mod square;

pub use ensemble::{
    build_synthetic_dataset, default_ensemble_specs, ensemble_gradient, train_surrogate_ensemble, Ensemble,
    SyntheticDataset,
};
pub use pgd::{hil_gradient, pgd_attack, GradientSource};
pub use square::{margin_loss, square_attack};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::AnalogClassifier;
use crate::tensor::{Dataset, Network, Tensor};

/// Black-box access: logits only.
pub trait LogitsExecutor {
    fn logits(&self, x: &Tensor<f64>) -> Result<Tensor<f64>>;
}

impl LogitsExecutor for Network<f64> {
    fn logits(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.forward(x)
    }
}

impl LogitsExecutor for AnalogClassifier {
    fn logits(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        AnalogClassifier::logits(self, x)
    }
}

/// l∞ attack budget and schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub iters: usize,
    /// Square Attack query budget per image.
    pub queries: usize,
    pub seed: u64,
}

impl AttackConfig {
    /// `α = ε/4`, 30 iterations, 1000 queries.
    pub fn new(epsilon: f64, seed: u64) -> Self {
        Self {
            epsilon,
            alpha: epsilon / 4.0,
            iters: 30,
            queries: 1000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.alpha && self.alpha <= self.epsilon && self.epsilon <= 1.0) {
            return Err(Error::invalid(format!(
                "need 0 <= alpha ({}) <= epsilon ({}) <= 1",
                self.alpha, self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    /// PGD with gradients from the attacker's model (white box).
    Pgd,
    /// PGD with gradients of a surrogate ensemble trained on queried logits.
    Ensemble,
    /// Query-only random search.
    Square,
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::Pgd => "pgd",
            AttackKind::Ensemble => "ensemble",
            AttackKind::Square => "square",
        }
    }

    fn white_box(&self) -> bool {
        matches!(self, AttackKind::Pgd)
    }
}

/// What the attacker can see.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreatScenario {
    pub knows_weights: bool,
    pub digital_logits: bool,
    pub digital_activations: bool,
    /// Crossbar preset the attacker owns; need not match the target's.
    pub attacker_crossbar: Option<String>,
    pub analog_logits: bool,
    pub analog_activations: bool,
}

impl ThreatScenario {
    pub fn non_adaptive_black_box() -> Self {
        Self {
            knows_weights: false,
            digital_logits: true,
            digital_activations: false,
            attacker_crossbar: None,
            analog_logits: false,
            analog_activations: false,
        }
    }

    pub fn non_adaptive_white_box() -> Self {
        Self {
            knows_weights: true,
            digital_activations: true,
            ..Self::non_adaptive_black_box()
        }
    }

    pub fn adaptive_black_box(crossbar: &str) -> Self {
        Self {
            knows_weights: false,
            digital_logits: false,
            digital_activations: false,
            attacker_crossbar: Some(crossbar.to_string()),
            analog_logits: true,
            analog_activations: false,
        }
    }

    pub fn adaptive_white_box(crossbar: &str) -> Self {
        Self {
            knows_weights: true,
            analog_activations: true,
            ..Self::adaptive_black_box(crossbar)
        }
    }

    pub fn is_adaptive(&self) -> bool {
        self.attacker_crossbar.is_some()
    }

    pub fn is_white_box(&self) -> bool {
        self.knows_weights
    }

    pub fn name(&self) -> String {
        format!(
            "{}-{}",
            if self.is_adaptive() { "adaptive" } else { "non-adaptive" },
            if self.is_white_box() { "white-box" } else { "black-box" }
        )
    }

    /// Accepts exactly the four knowledge patterns.
    pub fn validate(&self) -> Result<()> {
        let canonical = match &self.attacker_crossbar {
            Some(x) if self.knows_weights => Self::adaptive_white_box(x),
            Some(x) => Self::adaptive_black_box(x),
            None if self.knows_weights => Self::non_adaptive_white_box(),
            None => Self::non_adaptive_black_box(),
        };
        if *self != canonical {
            return Err(Error::invalid(format!(
                "inconsistent threat scenario flags: {self:?}"
            )));
        }
        Ok(())
    }
}

/// One attacked image.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvExample {
    pub x_star: Vec<f64>,
    pub label: usize,
    /// Queries spent (Square Attack); zero for gradient attacks.
    pub queries: usize,
    /// Misclassified by the executor the example was judged on.
    pub success: bool,
}

/// Models available to the attacker. Which one is used depends on the scenario.
#[derive(Clone, Copy)]
pub struct Attacker<'a> {
    pub digital: &'a Network<f64>,
    /// The network on the attacker's own crossbar model (adaptive scenarios).
    pub hardware: Option<&'a AnalogClassifier>,
    /// Surrogates trained on logits from [`Attacker::query_source`].
    pub ensemble: Option<&'a Ensemble>,
}

impl<'a> Attacker<'a> {
    /// Executor the scenario lets the attacker query for logits.
    pub fn query_source(&self, scenario: &ThreatScenario) -> Result<&'a dyn LogitsExecutor> {
        scenario.validate()?;
        if scenario.analog_logits {
            let hw = self
                .hardware
                .ok_or_else(|| Error::invalid("adaptive scenario needs the attacker's crossbar model"))?;
            Ok(hw)
        } else {
            Ok(self.digital)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub clean_acc: f64,
    pub adv_acc: f64,
    /// `adv_acc − clean_acc`
    pub delta: f64,
    pub examples: Vec<AdvExample>,
}

fn accuracy_on<T: LogitsExecutor + ?Sized>(target: &T, x: &Tensor<f64>, y: &[usize]) -> Result<Vec<bool>> {
    let mut correct = Vec::with_capacity(y.len());
    for start in (0..y.len()).step_by(256) {
        let end = (start + 256).min(y.len());
        let rows: Vec<&[f64]> = (start..end).map(|i| x.sample(i)).collect();
        let pred = target.logits(&Tensor::stack(&rows, &x.shape()[1..])?)?.argmax_rows();
        correct.extend(pred.iter().zip(&y[start..end]).map(|(p, t)| p == t));
    }
    Ok(correct)
}

/// Adversarial inputs for `data` from the source the scenario allows, with
/// the queries each image used (zero for gradient attacks).
pub fn craft_adversarial(
    scenario: &ThreatScenario,
    kind: AttackKind,
    attacker: &Attacker<'_>,
    data: &Dataset<f64>,
    cfg: &AttackConfig,
) -> Result<(Tensor<f64>, Vec<usize>)> {
    scenario.validate()?;
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("attack dataset is empty"));
    }
    if kind.white_box() != scenario.is_white_box() {
        return Err(Error::invalid(format!(
            "{} attack does not fit the {} scenario",
            kind.name(),
            scenario.name()
        )));
    }
    let x = &data.images;
    let y = &data.labels;
    if kind == AttackKind::Square {
        let source = attacker.query_source(scenario)?;
        let ex = square_attack(source, x, y, cfg.epsilon, cfg.queries, cfg.seed)?;
        let queries = ex.iter().map(|e| e.queries).collect();
        let adv = ex.into_iter().flat_map(|e| e.x_star).collect();
        return Ok((Tensor::new(x.shape().to_vec(), adv)?, queries));
    }
    let source: &dyn GradientSource = match kind {
        AttackKind::Ensemble => attacker
            .ensemble
            .ok_or_else(|| Error::invalid("ensemble attack needs a trained ensemble"))?,
        _ if scenario.analog_activations => attacker
            .hardware
            .ok_or_else(|| Error::invalid("hardware-in-loop attack needs the attacker's crossbar model"))?,
        _ => attacker.digital,
    };
    let mut adv = Vec::with_capacity(x.len());
    for start in (0..y.len()).step_by(128) {
        let idx: Vec<usize> = (start..(start + 128).min(y.len())).collect();
        let (xb, yb) = data.batch(&idx);
        adv.extend_from_slice(pgd_attack(source, &xb, &yb, cfg)?.data());
    }
    Ok((Tensor::new(x.shape().to_vec(), adv)?, vec![0; y.len()]))
}

/// Clean and adversarial accuracy of `target` on `data` and its perturbed copy.
pub fn evaluate_attack<T: LogitsExecutor + ?Sized>(
    target: &T,
    data: &Dataset<f64>,
    adv: &Tensor<f64>,
    queries: &[usize],
) -> Result<ScenarioResult> {
    let y = &data.labels;
    if adv.shape() != data.images.shape() || queries.len() != y.len() {
        return Err(Error::shape("adversarial batch does not match the dataset"));
    }
    if y.is_empty() {
        return Err(Error::invalid("attack dataset is empty"));
    }
    let clean = accuracy_on(target, &data.images, y)?;
    let hit = accuracy_on(target, adv, y)?;
    let n = y.len() as f64;
    let clean_acc = clean.iter().filter(|&&c| c).count() as f64 / n;
    let adv_acc = hit.iter().filter(|&&c| c).count() as f64 / n;
    let examples = (0..y.len())
        .map(|i| AdvExample {
            x_star: adv.sample(i).to_vec(),
            label: y[i],
            queries: queries[i],
            success: !hit[i],
        })
        .collect();
    Ok(ScenarioResult {
        clean_acc,
        adv_acc,
        delta: adv_acc - clean_acc,
        examples,
    })
}

/// Crafts adversarial examples with the source the scenario allows and
/// judges them on `target`.
pub fn run_scenario<T: LogitsExecutor + ?Sized>(
    scenario: &ThreatScenario,
    kind: AttackKind,
    target: &T,
    attacker: &Attacker<'_>,
    data: &Dataset<f64>,
    cfg: &AttackConfig,
) -> Result<ScenarioResult> {
    let (adv, queries) = craft_adversarial(scenario, kind, attacker, data, cfg)?;
    evaluate_attack(target, data, &adv, &queries)
}

/// One line of the attack result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub attack: String,
    pub epsilon: f64,
    pub iters_or_queries: usize,
    pub target_backend: String,
    pub attacker_backend: String,
    pub clean_acc: f64,
    pub adv_acc: f64,
    pub delta: f64,
    pub seed: u64,
}
