//! Plot data derived from result tables: robustness gain over the digital
//! baseline, accuracy against ε, and gain against NF.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xbar::attacks::ResultRow;

use crate::error::{HarnessError, Result};
use crate::pipeline::{read_csv, read_results, CalibrationRow, CALIBRATION_CSV, DIGITAL};

pub const REPORT_DIR: &str = "report";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub scenario: String,
    pub attack: String,
    pub epsilon: String,
    pub attacker_backend: String,
    pub target_backend: String,
    pub nf: String,
    pub adv_acc: String,
    pub baseline_adv_acc: String,
    pub gain: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub scenario: String,
    pub attack: String,
    pub attacker_backend: String,
    pub target_backend: String,
    pub epsilon: String,
    pub clean_acc: String,
    pub adv_acc: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NfGainRow {
    pub scenario: String,
    pub attack: String,
    pub attacker_backend: String,
    pub target_backend: String,
    pub nf: String,
    pub mean_gain: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub gains: Vec<GainRow>,
    pub curves: Vec<CurveRow>,
    pub nf_gains: Vec<NfGainRow>,
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

/// The scenario a digital baseline row is filed under.
fn non_adaptive(scenario: &str) -> &str {
    scenario.strip_prefix("adaptive-").map_or(scenario, |rest| match rest {
        "white-box" => "non-adaptive-white-box",
        _ => "non-adaptive-black-box",
    })
}

/// Crossbar preset behind a backend name such as `circuit:64x64_100k`.
fn preset_of(backend: &str) -> &str {
    backend.rsplit(':').next().unwrap_or(backend)
}

/// Derives all plot tables. `nf` maps presets to their measured NF.
pub fn build_report(rows: &[ResultRow], nf: &BTreeMap<String, f64>) -> Result<Report> {
    let nf_of = |backend: &str| nf.get(preset_of(backend)).map(|v| fixed(*v)).unwrap_or_default();
    let key = |r: &ResultRow| (r.scenario.clone(), r.attack.clone(), r.epsilon.to_bits());
    let mut baselines = BTreeMap::new();
    for r in rows.iter().filter(|r| r.target_backend == DIGITAL) {
        baselines.insert(key(r), r.adv_acc);
    }

    let mut gains = Vec::new();
    // (scenario, attack, attacker, target) in first-seen order with the gains per ε
    let mut groups: Vec<((String, String, String, String), Vec<f64>)> = Vec::new();
    for r in rows.iter().filter(|r| r.target_backend != DIGITAL) {
        let base_key = (non_adaptive(&r.scenario).to_string(), r.attack.clone(), r.epsilon.to_bits());
        let base = *baselines.get(&base_key).ok_or_else(|| {
            HarnessError::Report(format!(
                "no digital baseline for {} {} at epsilon {} (needed by target {})",
                base_key.0, r.attack, r.epsilon, r.target_backend
            ))
        })?;
        let gain = r.adv_acc - base;
        gains.push(GainRow {
            scenario: r.scenario.clone(),
            attack: r.attack.clone(),
            epsilon: fixed(r.epsilon),
            attacker_backend: r.attacker_backend.clone(),
            target_backend: r.target_backend.clone(),
            nf: nf_of(&r.target_backend),
            adv_acc: fixed(r.adv_acc),
            baseline_adv_acc: fixed(base),
            gain: fixed(gain),
        });
        let g = (r.scenario.clone(), r.attack.clone(), r.attacker_backend.clone(), r.target_backend.clone());
        match groups.iter_mut().find(|(k, _)| *k == g) {
            Some((_, v)) => v.push(gain),
            None => groups.push((g, vec![gain])),
        }
    }

    let mut curve_groups: Vec<((String, String, String, String), Vec<&ResultRow>)> = Vec::new();
    for r in rows {
        let g = (r.scenario.clone(), r.attack.clone(), r.attacker_backend.clone(), r.target_backend.clone());
        match curve_groups.iter_mut().find(|(k, _)| *k == g) {
            Some((_, v)) => v.push(r),
            None => curve_groups.push((g, vec![r])),
        }
    }
    let mut curves = Vec::new();
    for (_, mut members) in curve_groups {
        members.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon));
        curves.extend(members.into_iter().map(|r| CurveRow {
            scenario: r.scenario.clone(),
            attack: r.attack.clone(),
            attacker_backend: r.attacker_backend.clone(),
            target_backend: r.target_backend.clone(),
            epsilon: fixed(r.epsilon),
            clean_acc: fixed(r.clean_acc),
            adv_acc: fixed(r.adv_acc),
        }));
    }

    let nf_gains = groups
        .into_iter()
        .map(|((scenario, attack, attacker_backend, target_backend), g)| NfGainRow {
            nf: nf_of(&target_backend),
            mean_gain: fixed(g.iter().sum::<f64>() / g.len() as f64),
            scenario,
            attack,
            attacker_backend,
            target_backend,
        })
        .collect();
    Ok(Report { gains, curves, nf_gains })
}

fn write<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::csv(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::csv(path, e))?;
    crate::manifest::write_atomic(path, &bytes)
}

/// Reads result tables (and `calibration.csv` from `out` when present) and
/// writes the plot-data files under `out/report`.
pub fn report(out: &Path, inputs: &[PathBuf]) -> Result<Report> {
    let mut rows = Vec::new();
    for p in inputs {
        rows.extend(read_results(p)?);
    }
    let cal = out.join(CALIBRATION_CSV);
    let nf = if cal.exists() {
        read_csv::<CalibrationRow>(&cal)?
            .into_iter()
            .map(|c| (c.preset, c.measured_nf))
            .collect()
    } else {
        BTreeMap::new()
    };
    let rep = build_report(&rows, &nf)?;
    let dir = out.join(REPORT_DIR);
    write(&dir.join("gain.csv"), &rep.gains)?;
    write(&dir.join("accuracy_vs_epsilon.csv"), &rep.curves)?;
    write(&dir.join("gain_vs_nf.csv"), &rep.nf_gains)?;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(scenario: &str, eps: f64, target: &str, adv: f64) -> ResultRow {
        ResultRow {
            scenario: scenario.into(),
            attack: "pgd".into(),
            epsilon: eps,
            iters_or_queries: 30,
            target_backend: target.into(),
            attacker_backend: DIGITAL.into(),
            clean_acc: 0.9,
            adv_acc: adv,
            delta: adv - 0.9,
            seed: 0,
        }
    }

    #[test]
    fn gain_is_the_difference_to_the_digital_row() {
        let rows = vec![
            row("non-adaptive-white-box", 0.1, DIGITAL, 0.25),
            row("non-adaptive-white-box", 0.1, "circuit:64x64_100k", 0.5),
            row("adaptive-white-box", 0.1, "circuit:64x64_100k", 0.125),
        ];
        let nf = BTreeMap::from([("64x64_100k".to_string(), 0.26)]);
        let rep = build_report(&rows, &nf).unwrap();
        assert_eq!(rep.gains.len(), 2);
        assert_eq!(rep.gains[0].gain, "0.250000");
        assert_eq!(rep.gains[1].gain, "-0.125000");
        assert_eq!(rep.gains[0].nf, "0.260000");
        assert_eq!(rep.nf_gains.len(), 2);
    }

    #[test]
    fn missing_baseline_is_an_error() {
        let rows = vec![row("non-adaptive-white-box", 0.1, "circuit:32x32_100k", 0.5)];
        let err = build_report(&rows, &BTreeMap::new()).unwrap_err();
        assert_eq!(err.category(), "report");
    }

    #[test]
    fn curves_keep_epsilon_order_within_each_series() {
        let rows = vec![
            row("non-adaptive-white-box", 0.2, DIGITAL, 0.1),
            row("non-adaptive-white-box", 0.05, DIGITAL, 0.7),
            row("non-adaptive-white-box", 0.1, DIGITAL, 0.3),
        ];
        let rep = build_report(&rows, &BTreeMap::new()).unwrap();
        let eps: Vec<_> = rep.curves.iter().map(|c| c.epsilon.as_str()).collect();
        assert_eq!(eps, ["0.050000", "0.100000", "0.200000"]);
    }
}
