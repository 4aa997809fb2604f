use std::path::{Path, PathBuf};
use std::process::Command as Process;

use xbar_harness::manifest::{load_manifest, MANIFEST_FILE};
use xbar_harness::pipeline::{read_results, DIGITAL, MODEL_FILE, RESULTS_CSV};
use xbar_harness::{run, Command, Overrides};

const SMALL: &str = r#"
seed = 3
out = "run"

[data]
kind = "synthetic"
train = 240
test = 40
size = 8

[model]
epochs = 2
batch = 32

[crossbars]
presets = ["32x32_100k"]
backend = "circuit"

[calibrate]
samples = 16

[attack]
images = 12
epsilons = [0.05, 0.1, 0.2]
pgd_iters = 3
square_queries = 20
adaptive_square_queries = 5

[[attack.scenarios]]
scenario = "non-adaptive-white-box"
attack = "pgd"

[[attack.scenarios]]
scenario = "non-adaptive-black-box"
attack = "square"
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn stage(config: &Path, cmd: Command) -> xbar_harness::Result<String> {
    run(config, &Overrides::default(), &cmd)
}

fn xbar(args: &[&str]) -> std::process::Output {
    Process::new(env!("CARGO_BIN_EXE_xbar")).args(args).output().unwrap()
}

#[test]
fn small_pipeline_produces_a_full_result_grid() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    stage(&config, Command::Calibrate { presets: vec![] }).unwrap();
    stage(&config, Command::Train).unwrap();
    stage(&config, Command::Attack).unwrap();

    let out = dir.path().join("run");
    let rows = read_results(&out.join(RESULTS_CSV)).unwrap();
    assert_eq!(rows.len(), 12);
    for target in [DIGITAL, "circuit:32x32_100k"] {
        let mine: Vec<_> = rows.iter().filter(|r| r.target_backend == target).collect();
        assert_eq!(mine.len(), 6, "{target}");
        // clean accuracy does not depend on the attack
        assert!(mine.iter().all(|r| r.clean_acc == mine[0].clean_acc));
    }
    for r in &rows {
        assert!((0.0..=1.0).contains(&r.adv_acc), "{r:?}");
        assert!(r.adv_acc <= r.clean_acc + 1e-12, "{r:?}");
        assert!((r.delta - (r.adv_acc - r.clean_acc)).abs() < 1e-5);
    }

    stage(&config, Command::Report { results: vec![] }).unwrap();
    for f in ["gain.csv", "accuracy_vs_epsilon.csv", "gain_vs_nf.csv"] {
        assert!(out.join("report").join(f).is_file(), "{f}");
    }
    let manifest = load_manifest(&out).unwrap().expect("manifest written");
    for s in ["calibrate", "train", "attack", "report"] {
        assert!(manifest.stages.contains_key(s), "{s}");
    }
    assert!(manifest.files.iter().any(|f| f.path == RESULTS_CSV));
    assert!(out.join(MANIFEST_FILE).is_file());
}

#[test]
fn seeded_training_writes_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let bytes = |name: &str| {
        let out = dir.path().join(name);
        let o = Overrides {
            seed: Some(11),
            out: Some(out.clone()),
        };
        run(&config, &o, &Command::Train).unwrap();
        std::fs::read(out.join(MODEL_FILE)).unwrap()
    };
    assert_eq!(bytes("a"), bytes("b"));
}

#[test]
fn missing_dataset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[data]\nkind = \"idx\"\ntrain_images = \"a\"\ntrain_labels = \"b\"\ntest_images = \"c\"\ntest_labels = \"d\"\n",
    );
    let err = stage(&config, Command::Train).unwrap_err();
    assert_eq!(err.category(), "config");
}

#[test]
fn empty_scenario_list_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[attack]\nscenarios = []\n");
    let err = stage(&config, Command::Attack).unwrap_err();
    assert_eq!(err.category(), "config");
}

#[test]
fn attack_before_training_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    match stage(&config, Command::Attack).unwrap_err() {
        xbar_harness::HarnessError::MissingInput { stage, .. } => assert_eq!(stage, "train"),
        e => panic!("unexpected error {e}"),
    }
}

#[test]
fn report_without_digital_baseline_fails() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(
        out.join(RESULTS_CSV),
        "scenario,attack,epsilon,iters_or_queries,target_backend,attacker_backend,clean_acc,adv_acc,delta,seed\n\
         non-adaptive-white-box,pgd,0.100000,3,circuit:32x32_100k,digital,0.900000,0.500000,-0.400000,3\n",
    )
    .unwrap();
    let err = stage(&config, Command::Report { results: vec![] }).unwrap_err();
    assert_eq!(err.category(), "report");
}

#[test]
fn cli_reports_errors_as_json_with_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let config = config.to_str().unwrap();

    let o = xbar(&["calibrate", "--config", config, "--preset", "16x16_1k"]);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("16x16_1k"));

    let o = xbar(&["attack", "--config", config]);
    assert_eq!(o.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "missing-input");

    let missing = dir.path().join("nope.toml");
    let o = xbar(&["train", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["default.toml", "smoke.toml"] {
        let (cfg, _) = xbar_harness::ExperimentConfig::load(&dir.join(name)).unwrap();
        cfg.validate().unwrap();
    }
    let (full, _) = xbar_harness::ExperimentConfig::load(&dir.join("default.toml")).unwrap();
    assert_eq!(full.attack.scenarios.len(), 6);
    assert_eq!(full.attack.epsilons[2], 8.0 / 255.0);
}
