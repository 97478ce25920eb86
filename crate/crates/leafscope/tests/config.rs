use std::fs;
use std::path::PathBuf;

use leafscope::config::*;
use leafscope::core::trainer::Monitor;

fn write(dir: &tempfile::TempDir, text: &str) -> PathBuf {
    let p = dir.path().join("c.json");
    fs::write(&p, text).unwrap();
    p
}

fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

const BASE: &str = r#"{"dataset": {"root": "data"}, "model": {"backbone": "toyconv", "pretrained": false}}"#;

#[test]
fn defaults_fill_missing_sections() {
    let t = tempfile::tempdir().unwrap();
    let c = RunConfig::resolve(Some(&write(&t, BASE)), &[], &FlagOverrides::default()).unwrap();
    assert_eq!(c.dataset.ratio, 0.8);
    assert_eq!(c.train.epochs, 150);
    assert_eq!(c.train.batch_size, 32);
    assert_eq!(c.train.base_learning_rate, 1e-4);
    assert_eq!(c.train.early_stop_monitor, Monitor::ValAccuracy);
    assert_eq!(c.preprocess.model_input_size, 224);
    assert_eq!(c.model.dropout_rate, 0.3);
    assert_eq!(c.augment.max_rotation, 30.0);
}

#[test]
fn precedence_is_flags_env_file_defaults() {
    let t = tempfile::tempdir().unwrap();
    let file = write(
        &t,
        r#"{"dataset": {"root": "data", "seed": 1}, "model": {"backbone": "toyconv", "pretrained": false},
            "train": {"epochs": 5, "batch_size": 8}}"#,
    );
    let e = env(&[
        ("LEAFSCOPE_TRAIN_EPOCHS", "7"),
        ("LEAFSCOPE_TRAIN_EARLY_STOP_MONITOR", "val_loss"),
        ("LEAFSCOPE_PREPROCESS_CLAHE_TILE_GRID", "[4, 2]"),
        ("LEAFSCOPE_MODEL_WEIGHTS_DIR", "/w"),
        ("UNRELATED", "x"),
    ]);
    let c = RunConfig::resolve(Some(&file), &e, &FlagOverrides::default()).unwrap();
    assert_eq!((c.train.epochs, c.train.batch_size, c.dataset.seed), (7, 8, 1));
    assert_eq!(c.train.early_stop_monitor, Monitor::ValLoss);
    assert_eq!(c.preprocess.clahe_tile_grid, (4, 2));
    assert_eq!(c.model.weights_dir.as_deref(), Some("/w"));

    let flags = FlagOverrides {
        seed: Some(11),
        backbone: None,
        epochs: Some(9),
    };
    let c = RunConfig::resolve(Some(&file), &e, &flags).unwrap();
    assert_eq!(c.train.epochs, 9);
    assert_eq!((c.dataset.seed, c.augment.seed, c.train.seed), (11, 11, 11));
}

#[test]
fn unknown_keys_are_named() {
    let t = tempfile::tempdir().unwrap();
    let cases = [
        (r#"{"dataset": {"root": "d", "ratoi": 0.5}}"#, "ratoi"),
        (r#"{"trainer": {}}"#, "trainer"),
        (r#"{"train": {"epochs": "many"}}"#, "train"),
        (r#"{"preprocess": {"blur_kernel": 4}, "dataset": {"root": "d"}}"#, "blur_kernel"),
        (r#"{"dataset": {"root": "d", "ratio": 1.5}}"#, "dataset.ratio"),
        (r#"{"dataset": {"root": "d"}, "model": {"backbone": "vgg16"}}"#, "vgg16"),
        (r#"{"dataset": {"root": "d"}, "model": {"backbone": "toyconv"}}"#, "pretrained"),
        (r#"{"dataset": {"root": "d"}, "model": {"dropout_rate": 1.0}}"#, "dropout_rate"),
        (r#"{"dataset": {"root": ""}}"#, "dataset.root"),
        (r#"[1, 2]"#, "object"),
        (r#"{"dataset": "#, "c.json"),
    ];
    for (text, needle) in cases {
        let err = RunConfig::resolve(Some(&write(&t, text)), &[], &FlagOverrides::default()).unwrap_err();
        assert!(err.to_string().contains(needle), "{text}: {err}");
        assert_eq!(err.exit_code(), 1, "{text}");
    }
}

#[test]
fn bad_environment_overrides_are_rejected() {
    let t = tempfile::tempdir().unwrap();
    let file = write(&t, BASE);
    for (k, v) in [("LEAFSCOPE_BOGUS_X", "1"), ("LEAFSCOPE_TRAIN_", "1"), ("LEAFSCOPE_TRAIN_EPOCH", "3"), ("LEAFSCOPE_TRAIN_EPOCHS", "abc")] {
        let err = RunConfig::resolve(Some(&file), &env(&[(k, v)]), &FlagOverrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1, "{k}: {err}");
    }
}

#[test]
fn hash_tracks_content() {
    let t = tempfile::tempdir().unwrap();
    let file = write(&t, BASE);
    let a = RunConfig::resolve(Some(&file), &[], &FlagOverrides::default()).unwrap();
    let b = RunConfig::resolve(Some(&file), &[], &FlagOverrides::default()).unwrap();
    assert_eq!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
    let c = RunConfig::resolve(Some(&file), &env(&[("LEAFSCOPE_TRAIN_SEED", "3")]), &FlagOverrides::default()).unwrap();
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn shipped_configs_resolve() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["smoke.json", "full_scale.json"] {
        let c = RunConfig::resolve(Some(&root.join(name)), &[], &FlagOverrides::default());
        assert!(c.is_ok(), "{name}: {c:?}");
    }
}
