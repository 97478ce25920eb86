//! Pipeline stages behind the CLI subcommands.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use leafscope_core::augment::expand_training_set;
use leafscope_core::backbone::{build_backbone, NoWeights, WeightProvider};
use leafscope_core::classifier::{Classifier, Phase};
use leafscope_core::dataset::{stratified_split3, LabelMap, Split};
use leafscope_core::imgproc::{preprocess_raw, RawImage};
use leafscope_core::metrics::{build_report, confusion_matrix, EvaluationReport};
use leafscope_core::rng;
use leafscope_core::stream::{AugmentMode, CropMode, InMemoryStream};
use leafscope_core::trainer::{self, Clock, EpochRecord, TrainObserver, TrainingHistory};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, HeadConfig, WeightsDir};
use crate::config::RunConfig;
use crate::formats::{self, AugmentLog, ManifestFile, Orientation};
use crate::io;
use crate::report::{self, RunBundle};
use crate::{Error, Result};

/// File locations inside a run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn run_json(&self) -> PathBuf {
        self.root.join("run.json")
    }

    pub fn augment_log(&self) -> PathBuf {
        self.root.join("augment_log.json")
    }

    pub fn cache(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn model_dir(&self, model: &str) -> PathBuf {
        self.root.join(model)
    }

    pub fn checkpoint(&self, model: &str) -> PathBuf {
        self.model_dir(model).join("checkpoint_best.lsck")
    }

    pub fn head_config(&self, model: &str) -> PathBuf {
        self.model_dir(model).join("head_config.json")
    }

    pub fn history(&self, model: &str) -> PathBuf {
        self.model_dir(model).join("history.json")
    }

    pub fn cached_image(&self, relative_path: &str) -> PathBuf {
        self.cache().join(format!("{relative_path}.png"))
    }
}

/// `run.json`: provenance of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub model_name: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub manifest_sha256: String,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    pub environment: EnvironmentInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentInfo {
    pub os: String,
    pub arch: String,
    pub leafscope_version: String,
}

impl EnvironmentInfo {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            leafscope_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// Seconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl Default for WallClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Scans the corpus, splits it and writes `manifest.json`, plus the
/// preprocessed cache and `augment_log.json` when configured.
pub fn prepare(config: &RunConfig) -> Result<ManifestFile> {
    config.validate()?;
    let layout = RunLayout::new(config.run_dir());
    let d = &config.dataset;
    let manifest = io::scan_dataset(Path::new(&d.root))?;
    let split = stratified_split3(&manifest, d.ratio, d.validation_ratio, d.seed)?;
    let file = ManifestFile::new(manifest, split)?;
    if config.output.cache_preprocessed {
        let root = Path::new(&file.manifest.root_path);
        for s in &file.manifest.samples {
            let img = preprocess_raw(&io::load_image(&root.join(&s.relative_path))?, &config.preprocess)?;
            io::save_png(&layout.cached_image(&s.relative_path), &img)?;
        }
    }
    if config.augment.offline {
        let set = expand_training_set(&file.manifest, &file.split, &config.augment)?;
        let log = AugmentLog {
            seed: config.augment.seed,
            multiplier: config.augment.multiplier,
            records: set.records().copied().collect(),
        };
        io::write_json(&layout.augment_log(), &log)?;
    }
    io::write_json(&layout.manifest(), &file)?;
    Ok(file)
}

/// Reads the run's manifest, preparing it first if absent. An existing
/// manifest must match the configured dataset section.
pub fn load_or_prepare(config: &RunConfig) -> Result<ManifestFile> {
    let layout = RunLayout::new(config.run_dir());
    if !layout.manifest().exists() {
        return prepare(config);
    }
    let file = ManifestFile::read(&layout.manifest())?;
    let d = &config.dataset;
    let same = file.manifest.root_path == Path::new(&d.root).display().to_string()
        && file.split.ratio == d.ratio
        && file.split.validation_ratio == d.validation_ratio
        && file.split.seed == d.seed;
    if !same {
        return Err(Error::Core(leafscope_core::Error::State(format!(
            "{} was prepared with a different dataset section; rerun prepare",
            layout.manifest().display()
        ))));
    }
    Ok(file)
}

/// Storage-size images for `ids`, from the cache when present.
pub fn load_samples(config: &RunConfig, file: &ManifestFile, ids: &[usize]) -> Result<(Vec<RawImage>, Vec<usize>)> {
    let layout = RunLayout::new(config.run_dir());
    let root = Path::new(&file.manifest.root_path);
    let mut images = Vec::with_capacity(ids.len());
    let mut labels = Vec::with_capacity(ids.len());
    for &id in ids {
        let s = &file.manifest.samples[id];
        let cached = layout.cached_image(&s.relative_path);
        let img = if cached.exists() {
            io::load_image(&cached)?
        } else {
            preprocess_raw(&io::load_image(&root.join(&s.relative_path))?, &config.preprocess)?
        };
        images.push(img);
        labels.push(s.class_id);
    }
    Ok((images, labels))
}

fn evaluation_ids(config: &RunConfig, file: &ManifestFile) -> Vec<usize> {
    if config.dataset.validation_ratio > 0.0 {
        file.manifest.ids_in(Split::Validation)
    } else {
        file.manifest.ids_in(Split::Test)
    }
}

const HEAD_INIT_TAG: u64 = 0x4845_4144;

fn provider(config: &RunConfig) -> Box<dyn WeightProvider> {
    match &config.model.weights_dir {
        Some(dir) => Box::new(WeightsDir::new(dir)),
        None => Box::new(NoWeights),
    }
}

/// Fresh classifier for the configured backbone.
pub fn build_classifier(config: &RunConfig, classes: usize) -> Result<Classifier> {
    let m = &config.model;
    let backbone = build_backbone(&m.backbone, m.pretrained, provider(config).as_ref(), config.train.seed)?;
    Ok(Classifier::new(
        backbone,
        classes,
        m.dropout_rate,
        config.preprocess.model_input_size,
        config.train.adam(),
        &mut rng::stream(config.train.seed, &[HEAD_INIT_TAG]),
    )?)
}

struct Persist<'a> {
    layout: &'a RunLayout,
    model: &'a str,
    class_names: &'a [String],
    config_hash: &'a str,
    verbose: bool,
}

impl TrainObserver for Persist<'_> {
    fn on_epoch(&mut self, r: &EpochRecord, _history: &TrainingHistory) -> leafscope_core::Result<()> {
        if self.verbose {
            eprintln!(
                "epoch {:>3} {} lr {:e}: loss {:.4} acc {:.4} | val loss {:.4} acc {:.4}",
                r.epoch + 1,
                match r.phase {
                    Phase::HeadOnly => "head_only",
                    Phase::FullFinetune => "full_finetune",
                },
                r.learning_rate,
                r.train_loss,
                r.train_accuracy,
                r.val_loss,
                r.val_accuracy
            );
        }
        Ok(())
    }

    fn on_improvement(&mut self, classifier: &Classifier, history: &TrainingHistory) -> leafscope_core::Result<()> {
        let io_err = |e: Error| leafscope_core::Error::Data(e.to_string());
        checkpoint::save_checkpoint(&self.layout.checkpoint(self.model), classifier).map_err(io_err)?;
        let head = HeadConfig::describe(classifier, self.class_names, self.config_hash);
        io::write_json(&self.layout.head_config(self.model), &head).map_err(io_err)?;
        io::write_json(&self.layout.history(self.model), history).map_err(io_err)
    }
}

/// Trains the configured backbone, persisting the best checkpoint, the
/// history and `run.json`.
pub fn train(config: &RunConfig, verbose: bool) -> Result<TrainingHistory> {
    config.validate()?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = WallClock::default();
    let layout = RunLayout::new(config.run_dir());
    let file = load_or_prepare(config)?;
    let train_ids = file.manifest.ids_in(Split::Train);
    let val_ids = evaluation_ids(config, &file);
    let (images, labels) = load_samples(config, &file, &train_ids)?;
    let (val_images, val_labels) = load_samples(config, &file, &val_ids)?;
    let input = config.preprocess.model_input_size;
    let t = &config.train;
    let mode = if config.augment.offline {
        AugmentMode::Offline(config.augment.clone())
    } else {
        AugmentMode::RealTime(config.augment.clone())
    };
    let mut train_stream =
        InMemoryStream::new(images, labels, train_ids, mode, CropMode::Random, input, t.batch_size, t.seed, true)?;
    let mut val_stream = if config.augment.eval_augment {
        let mode = AugmentMode::Offline(config.augment.clone());
        InMemoryStream::new(val_images, val_labels, val_ids, mode, CropMode::Center, input, t.batch_size, t.seed, false)?
    } else {
        InMemoryStream::evaluation(val_images, val_labels, input, t.batch_size)?
    };
    let mut classifier = build_classifier(config, file.manifest.num_classes())?;
    let model = config.model.backbone.as_str();
    let hash = config.hash();
    let mut observer = Persist {
        layout: &layout,
        model,
        class_names: &file.manifest.class_names,
        config_hash: &hash,
        verbose,
    };
    let history = trainer::train(&mut classifier, &mut train_stream, &mut val_stream, t, &mut observer, &clock)?;
    io::write_json(&layout.history(model), &history)?;
    let metadata = RunMetadata {
        model_name: model.into(),
        config: config.clone(),
        config_hash: hash,
        manifest_sha256: io::sha256_hex(&io::to_json_bytes(&file)),
        started_unix_seconds: started,
        wall_clock_seconds: clock.seconds(),
        environment: EnvironmentInfo::current(),
    };
    io::write_json(&layout.run_json(), &metadata)?;
    Ok(history)
}

/// Rebuilds the classifier recorded in `head_config.json` and loads its
/// checkpoint.
pub fn load_trained(layout: &RunLayout, model: &str) -> Result<(Classifier, HeadConfig)> {
    let head: HeadConfig = io::read_json(&layout.head_config(model))?;
    let backbone = build_backbone(&head.backbone, false, &NoWeights, 0)?;
    let mut classifier = Classifier::new(
        backbone,
        head.num_classes,
        head.dropout_rate,
        head.input_size,
        Default::default(),
        &mut rng::seeded(0),
    )?;
    checkpoint::load_checkpoint(&layout.checkpoint(model), &mut classifier)?;
    Ok((classifier, head))
}

fn write_evaluation(report: &EvaluationReport, dir: &Path) -> Result<()> {
    report::write_report(report, dir)?;
    report::render_confusion(report, dir, Orientation::Internal)?;
    report::render_confusion(report, dir, Orientation::Paper)?;
    Ok(())
}

/// Evaluates the best checkpoint on the test split and writes
/// `report.json` and the confusion renderings under `<run>/reports`.
pub fn evaluate(config: &RunConfig) -> Result<EvaluationReport> {
    config.validate()?;
    let layout = RunLayout::new(config.run_dir());
    let file = ManifestFile::read(&layout.manifest())?;
    let (classifier, head) = load_trained(&layout, &config.model.backbone)?;
    if head.class_names != file.manifest.class_names {
        return Err(Error::input("checkpoint classes differ from the manifest classes"));
    }
    let ids = file.manifest.ids_in(Split::Test);
    let (images, labels) = load_samples(config, &file, &ids)?;
    let mut stream = InMemoryStream::evaluation(images, labels, head.input_size, config.train.batch_size)?;
    let eval = trainer::evaluate_stream(&classifier, &mut stream)?;
    let matrix = confusion_matrix(&eval.labels, &eval.predictions, head.num_classes)?;
    let report = build_report(&matrix, &file.manifest.label_map()?)?;
    write_evaluation(&report, &layout.reports())?;
    Ok(report)
}

/// Builds a report from an external confusion table.
pub fn import_report(csv_path: &Path, transpose_paper: bool) -> Result<EvaluationReport> {
    let text = String::from_utf8(io::read_bytes(csv_path)?).map_err(|e| Error::format(csv_path, e))?;
    let (names, matrix) = formats::import_confusion_csv(&text, transpose_paper)?;
    Ok(build_report(&matrix, &LabelMap::new(names)?)?)
}

/// Imports a table and writes the evaluation artifacts into `dir`.
pub fn import_and_render(csv_path: &Path, transpose_paper: bool, dir: &Path) -> Result<EvaluationReport> {
    let report = import_report(csv_path, transpose_paper)?;
    write_evaluation(&report, dir)?;
    Ok(report)
}

/// Collects the artifacts of a trained and evaluated run.
pub fn load_bundle(run_dir: &Path) -> Result<RunBundle> {
    let layout = RunLayout::new(run_dir);
    let meta: RunMetadata = io::read_json(&layout.run_json())?;
    let history: TrainingHistory = io::read_json(&layout.history(&meta.model_name))?;
    let report = report::read_report(&layout.reports().join("report.json"))?;
    Ok(RunBundle {
        model_name: meta.model_name,
        history,
        report,
        config_hash: meta.config_hash,
    })
}

/// Renders every artifact available for a run into `<run>/reports`.
pub fn render_run(run_dir: &Path) -> Result<()> {
    let layout = RunLayout::new(run_dir);
    let bundle = load_bundle(run_dir)?;
    let dir = layout.reports();
    report::render_history(&bundle.history, &dir)?;
    write_evaluation(&bundle.report, &dir)?;
    report::compare_runs(std::slice::from_ref(&bundle), &dir)?;
    Ok(())
}

pub fn compare(run_dirs: &[PathBuf], out: &Path) -> Result<report::ComparisonTable> {
    let bundles = run_dirs.iter().map(|d| load_bundle(d)).collect::<Result<Vec<_>>>()?;
    report::compare_runs(&bundles, out)
}
