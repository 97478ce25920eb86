use leafscope_core::backbone::{build_backbone, NoWeights};
use leafscope_core::classifier::{Classifier, Phase};
use leafscope_core::imgproc::RawImage;
use leafscope_core::optim::AdamConfig;
use leafscope_core::rng;
use leafscope_core::stream::{AugmentMode, BatchStream, CropMode, InMemoryStream};
use leafscope_core::trainer::{
    early_stop_decision, evaluate_stream, lr_at_epoch, train, EpochRecord, FrozenClock, Monitor, NoObserver, TrainConfig, TrainObserver,
    TrainingHistory,
};
use leafscope_core::{Error, Result};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn step_decay_values_are_exact() {
    for e in 0..10 {
        assert_eq!(lr_at_epoch(1e-4, e), 1e-4);
    }
    for e in 10..20 {
        assert_eq!(lr_at_epoch(1e-4, e), 1e-5);
    }
    assert_eq!(lr_at_epoch(1e-4, 35), 1e-7);
    assert_eq!(lr_at_epoch(3e-3, 21), 3e-5);
    for e in 0..200 {
        let formula = 1e-4 * 0.1f64.powi((e / 10) as i32);
        assert!((lr_at_epoch(1e-4, e) - formula).abs() <= formula * 1e-12);
    }
}

#[test]
fn schedule_restarts_in_phase_two() {
    let cfg = TrainConfig {
        phase1_epochs: 10,
        phase2_lr_scale: 0.1,
        ..TrainConfig::default()
    };
    assert_eq!(cfg.schedule(9), (Phase::HeadOnly, 1e-4));
    assert_eq!(cfg.schedule(10), (Phase::FullFinetune, lr_at_epoch(1e-4 * 0.1, 0)));
    assert_eq!(cfg.schedule(25), (Phase::FullFinetune, lr_at_epoch(1e-4 * 0.1, 15)));
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { early_stop_patience: 0, ..TrainConfig::default() },
        TrainConfig { base_learning_rate: 0.0, ..TrainConfig::default() },
        TrainConfig { phase2_lr_scale: -1.0, ..TrainConfig::default() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
    assert!(TrainConfig { phase1_epochs: 0, ..TrainConfig::default() }.validate().is_ok());
}

#[test]
fn early_stop_examples() {
    let mut v = vec![0.5, 0.6];
    v.extend([0.6, 0.55, 0.6, 0.4, 0.6, 0.59, 0.3, 0.6, 0.2]);
    assert_eq!(early_stop_decision(&v, Monitor::ValAccuracy, 10), (false, 1));
    v.push(0.6);
    assert_eq!(early_stop_decision(&v, Monitor::ValAccuracy, 10), (true, 1));

    let inc: Vec<f64> = (0..30).map(|i| i as f64).collect();
    for p in 1..5 {
        assert_eq!(early_stop_decision(&inc, Monitor::ValAccuracy, p), (false, 29));
    }
    assert_eq!(early_stop_decision(&[0.7, 0.7, 0.7], Monitor::ValAccuracy, 10), (false, 0));
    assert_eq!(early_stop_decision(&[0.4, 0.4], Monitor::ValAccuracy, 1), (true, 0));
    assert_eq!(early_stop_decision(&[0.4], Monitor::ValAccuracy, 1), (false, 0));
    assert_eq!(early_stop_decision(&[2.0, 1.0, 1.5], Monitor::ValLoss, 1), (true, 1));
}

/// Replays the stream epoch by epoch with a wait counter, the way the
/// callback does it.
fn oracle(values: &[f64], patience: usize) -> (bool, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut wait = 0;
    let mut stop = false;
    for (e, &v) in values.iter().enumerate() {
        if v > best {
            best = v;
            best_epoch = e;
            wait = 0;
        } else {
            wait += 1;
        }
        stop = wait >= patience;
    }
    (stop, best_epoch)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]
    #[test]
    fn early_stop_matches_wait_counter_oracle(
        values in prop::collection::vec(prop::sample::select(vec![0.1, 0.2, 0.3, 0.5, 0.8, 0.9]), 1..40),
        patience in 1usize..12,
    ) {
        prop_assert_eq!(early_stop_decision(&values, Monitor::ValAccuracy, patience), oracle(&values, patience));
    }
}

/// Hue-coded 8-class images: class k is a saturated colour at hue 45k
/// degrees with per-pixel noise.
fn synthetic(per_class: usize, size: usize, seed: u64) -> (Vec<RawImage>, Vec<usize>) {
    let mut r = rng::seeded(seed);
    let (mut images, mut labels) = (Vec::new(), Vec::new());
    for k in 0..8 {
        let h = k as f64 * 45.0;
        let (rr, gg, bb) = hsv(h, 0.85, 0.8);
        for _ in 0..per_class {
            let gain: f64 = r.random_range(0.85..1.15);
            let mut px = Vec::with_capacity(size * size * 3);
            for _ in 0..size * size {
                for c in [rr, gg, bb] {
                    let v = c * 255.0 * gain + r.random_range(-25.0..25.0);
                    px.push(v.clamp(0.0, 255.0) as u8);
                }
            }
            images.push(RawImage::new(size, size, 3, px).unwrap());
            labels.push(k);
        }
    }
    (images, labels)
}

fn hsv(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

const STORE: usize = 36;
const INPUT: usize = 32;

fn streams(seed: u64) -> (InMemoryStream, InMemoryStream) {
    let (imgs, labels) = synthetic(24, STORE, seed);
    let (vimgs, vlabels) = synthetic(6, STORE, seed + 100);
    let ids = (0..imgs.len()).collect();
    let train = InMemoryStream::new(imgs, labels, ids, AugmentMode::None, CropMode::Random, INPUT, 16, seed, true).unwrap();
    let val = InMemoryStream::evaluation(vimgs, vlabels, INPUT, 32).unwrap();
    (train, val)
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        base_learning_rate: 1e-2,
        weight_decay: 1e-7,
        early_stop_patience: 10,
        early_stop_monitor: Monitor::ValAccuracy,
        phase1_epochs: 4,
        phase2_lr_scale: 0.1,
        seed: 11,
    }
}

fn classifier(seed: u64) -> Classifier {
    let b = build_backbone("toyconv", false, &NoWeights, seed).unwrap();
    Classifier::new(b, 8, 0.3, INPUT, AdamConfig::default(), &mut rng::seeded(seed)).unwrap()
}

#[derive(Default)]
struct Recorder {
    epochs: usize,
    improvements: Vec<(usize, f64)>,
}

impl TrainObserver for Recorder {
    fn on_epoch(&mut self, _r: &EpochRecord, _h: &TrainingHistory) -> Result<()> {
        self.epochs += 1;
        Ok(())
    }

    fn on_improvement(&mut self, c: &Classifier, h: &TrainingHistory) -> Result<()> {
        assert_eq!(c.phase(), h.records[h.best_epoch].phase);
        self.improvements.push((h.best_epoch, h.records[h.best_epoch].val_accuracy));
        Ok(())
    }
}

#[test]
fn two_phase_run_learns_and_restores_best() {
    let (mut tr, mut va) = streams(1);
    let mut c = classifier(1);
    let cfg = config(12);
    let mut rec = Recorder::default();
    let h = train(&mut c, &mut tr, &mut va, &cfg, &mut rec, &FrozenClock).unwrap();
    h.validate(Monitor::ValAccuracy).unwrap();
    assert!(h.records.len() <= 12);
    assert_eq!(rec.epochs, h.records.len());
    assert_eq!(rec.improvements.last().unwrap().0, h.best_epoch);
    assert!(rec.improvements.windows(2).all(|w| w[1].1 > w[0].1));
    for r in &h.records {
        let (phase, lr) = cfg.schedule(r.epoch);
        assert_eq!((r.phase, r.learning_rate), (phase, lr));
    }
    assert!(h.records.iter().any(|r| r.phase == Phase::FullFinetune));
    assert!(h.records.last().unwrap().train_accuracy >= 0.95, "{:?}", h.records.last());
    assert!(h.records[h.best_epoch].val_accuracy >= 0.9);
    let again = evaluate_stream(&c, &mut va).unwrap();
    assert!((again.accuracy - h.records[h.best_epoch].val_accuracy).abs() <= 1e-6);
    assert!((again.loss - h.records[h.best_epoch].val_loss).abs() <= 1e-6);
}

#[test]
fn same_seed_same_history() {
    let run = || {
        let (mut tr, mut va) = streams(2);
        let mut c = classifier(2);
        train(&mut c, &mut tr, &mut va, &config(6), &mut NoObserver, &FrozenClock).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.records.len(), b.records.len());
    for (x, y) in a.records.iter().zip(&b.records) {
        for (p, q) in [
            (x.train_loss, y.train_loss),
            (x.train_accuracy, y.train_accuracy),
            (x.val_loss, y.val_loss),
            (x.val_accuracy, y.val_accuracy),
            (x.learning_rate, y.learning_rate),
        ] {
            assert!((p - q).abs() <= 1e-6);
        }
    }
}

#[test]
fn patience_one_stops_on_flat_metric() {
    // zero learning rate is rejected, so freeze progress with a tiny one
    let (mut tr, mut va) = streams(3);
    let mut c = classifier(3);
    let cfg = TrainConfig {
        base_learning_rate: 1e-300,
        early_stop_patience: 1,
        ..config(10)
    };
    let h = train(&mut c, &mut tr, &mut va, &cfg, &mut NoObserver, &FrozenClock).unwrap();
    assert_eq!(h.records.len(), 2);
    assert_eq!(h.best_epoch, 0);
    assert!(h.stopped_early);
}

#[test]
fn non_finite_loss_reports_epoch_and_batch() {
    let (imgs, labels) = synthetic(2, STORE, 4);
    let ids = (0..imgs.len()).collect();
    let mut tr = InMemoryStream::new(imgs, labels, ids, AugmentMode::None, CropMode::Center, INPUT, 4, 0, false).unwrap();
    let (_, mut va) = streams(4);
    let mut c = classifier(4);
    c.head_mut().weights[0] = f64::NAN;
    let r = train(&mut c, &mut tr, &mut va, &config(3), &mut NoObserver, &FrozenClock);
    assert_eq!(r.unwrap_err(), Error::Divergence { epoch: 0, batch: 0 });
}

#[test]
fn empty_streams_are_data_errors() {
    let empty = || InMemoryStream::evaluation(vec![], vec![], INPUT, 4).unwrap();
    let (tr, va) = streams(5);
    let mut c = classifier(5);
    let r = train(&mut c, &mut empty(), &mut va.clone(), &config(2), &mut NoObserver, &FrozenClock);
    assert!(matches!(r, Err(Error::Data(_))));
    let r = train(&mut c, &mut tr.clone(), &mut empty(), &config(2), &mut NoObserver, &FrozenClock);
    assert!(matches!(r, Err(Error::Data(_))));
}

#[test]
fn streams_cover_every_item_once_per_epoch() {
    let (mut tr, _) = streams(6);
    for epoch in 0..2 {
        tr.start_epoch(epoch);
        let mut n = 0;
        let mut counts = [0usize; 8];
        while let Some(b) = tr.next_batch().unwrap() {
            n += b.labels.len();
            b.labels.iter().for_each(|&l| counts[l] += 1);
            assert!(b.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(n, tr.len());
        assert_eq!(counts, [24; 8]);
    }
}
