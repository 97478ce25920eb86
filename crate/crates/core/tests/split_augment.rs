use std::collections::BTreeSet;

use leafscope_core::augment::{self, augment_image, expand_training_set, params_for, AugmentConfig};
use leafscope_core::dataset::{stratified_split, stratified_split3, DatasetManifest, Split};
use leafscope_core::imgproc::RawImage;
use leafscope_core::rng;
use leafscope_core::stream::{AugmentMode, BatchStream, CropMode, InMemoryStream};
use leafscope_core::Error;
use proptest::prelude::*;

fn manifest(counts: &[usize]) -> DatasetManifest {
    let listing = counts
        .iter()
        .enumerate()
        .map(|(c, &n)| (format!("class{c:02}"), (0..n).map(|i| format!("img{i:04}.jpg")).collect()))
        .collect();
    DatasetManifest::from_listing("/data", listing).unwrap()
}

#[test]
fn full_size_corpus_split() {
    let m = manifest(&[800; 8]);
    assert_eq!(m.samples.len(), 6400);
    let s = stratified_split(&m, 0.8, 42).unwrap();
    assert_eq!((s.train_ids.len(), s.test_ids.len()), (5120, 1280));
    for c in 0..8 {
        let train_c = s.train_ids.iter().filter(|&&i| m.samples[i].class_id == c).count();
        assert_eq!(train_c, 640);
    }
}

#[test]
fn full_size_expansion_count() {
    let mut m = manifest(&[800; 8]);
    let s = stratified_split(&m, 0.8, 42).unwrap();
    m.apply_split(&s).unwrap();
    let set = expand_training_set(&m, &s, &AugmentConfig::default()).unwrap();
    assert_eq!(set.entries.len(), 35_840);
    assert_eq!(set.records().count(), 5120 * 6);
    let test: BTreeSet<usize> = s.test_ids.iter().copied().collect();
    assert!(set.entries.iter().all(|e| !test.contains(&e.source_sample_id)));
}

#[test]
fn two_classes_of_five() {
    let m = manifest(&[5, 5]);
    let s = stratified_split(&m, 0.8, 0).unwrap();
    assert_eq!((s.train_ids.len(), s.test_ids.len()), (8, 2));
}

#[test]
fn unassigned_expansion_is_state_error() {
    let m = manifest(&[4, 4]);
    let s = stratified_split(&m, 0.5, 0).unwrap();
    assert!(matches!(expand_training_set(&m, &s, &AugmentConfig::default()), Err(Error::State(_))));
}

#[test]
fn ten_thousand_draws_stay_in_range() {
    let cfg = AugmentConfig::default();
    let mut r = rng::seeded(1);
    for _ in 0..10_000 {
        let p = augment::draw_params(&cfg, &mut r);
        assert!((-30.0..=30.0).contains(&p.rotation));
        assert!((0.8..=1.2).contains(&p.brightness));
        assert!((0.8..=1.2).contains(&p.zoom));
        assert!(p.within(&cfg));
    }
    for id in 0..2_000 {
        for copy in 1..=6 {
            assert!(params_for(&cfg, id, copy).within(&cfg));
        }
    }
}

fn gradient_image(size: usize) -> RawImage {
    let px = (0..size * size * 3).map(|i| ((i * 7) % 251) as u8).collect();
    RawImage::new(size, size, 3, px).unwrap()
}

#[test]
fn augmentation_is_seeded_and_shape_preserving() {
    let img = gradient_image(40);
    let cfg = AugmentConfig::default();
    let a = augment_image(&img, &cfg, &mut rng::seeded(9), 3).unwrap();
    let b = augment_image(&img, &cfg, &mut rng::seeded(9), 3).unwrap();
    assert_eq!(a, b);
    assert_eq!((a.0.height(), a.0.width(), a.0.channels()), (40, 40, 3));
    let id = augment_image(&img, &AugmentConfig::identity(), &mut rng::seeded(9), 3).unwrap();
    assert_eq!(id.0, img);
}

fn stream(mode: AugmentMode, crop: CropMode) -> InMemoryStream {
    let imgs: Vec<RawImage> = (0..6).map(|_| gradient_image(40)).collect();
    let labels = vec![0, 1, 2, 0, 1, 2];
    InMemoryStream::new(imgs, labels, (10..16).collect(), mode, crop, 32, 4, 5, true).unwrap()
}

fn epoch_data(s: &mut InMemoryStream, epoch: usize) -> Vec<f32> {
    s.start_epoch(epoch);
    let mut out = Vec::new();
    while let Some(b) = s.next_batch().unwrap() {
        out.extend_from_slice(b.images.data());
    }
    out
}

#[test]
fn offline_stream_expands_and_repeats() {
    let cfg = AugmentConfig {
        multiplier: 2,
        ..AugmentConfig::default()
    };
    let mut s = stream(AugmentMode::Offline(cfg), CropMode::Center);
    assert_eq!(s.len(), 18);
    let mut again = stream(AugmentMode::Offline(AugmentConfig { multiplier: 2, ..AugmentConfig::default() }), CropMode::Center);
    assert_eq!(epoch_data(&mut s, 3), epoch_data(&mut again, 3));
}

#[test]
fn realtime_stream_changes_between_epochs() {
    let mut s = stream(AugmentMode::RealTime(AugmentConfig::default()), CropMode::Random);
    assert_eq!(s.len(), 6);
    let (a, b) = (epoch_data(&mut s, 0), epoch_data(&mut s, 1));
    assert_ne!(a, b);
    assert_eq!(a, epoch_data(&mut s, 0));
}

#[test]
fn evaluation_stream_is_plain_center_crop() {
    let img = gradient_image(40);
    let mut s = InMemoryStream::evaluation(vec![img.clone()], vec![0], 32, 8).unwrap();
    let got = epoch_data(&mut s, 0);
    let want: Vec<f32> = leafscope_core::imgproc::center_crop(&img, 32).unwrap().pixels().iter().map(|&v| v as f32 / 255.0).collect();
    assert_eq!(got, want);
}

#[test]
fn undersized_images_are_rejected() {
    let r = InMemoryStream::evaluation(vec![gradient_image(20)], vec![0], 32, 8);
    assert!(matches!(r, Err(Error::Shape { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn split_is_stratified_disjoint_and_covering(
        counts in prop::collection::vec(1usize..60, 1..9),
        ratio in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let m = manifest(&counts);
        let s = stratified_split(&m, ratio, seed).unwrap();
        let train: BTreeSet<usize> = s.train_ids.iter().copied().collect();
        let test: BTreeSet<usize> = s.test_ids.iter().copied().collect();
        prop_assert_eq!(train.len(), s.train_ids.len());
        prop_assert!(train.is_disjoint(&test));
        prop_assert_eq!(train.len() + test.len(), m.samples.len());
        for (c, &n) in counts.iter().enumerate() {
            let k = s.train_ids.iter().filter(|&&i| m.samples[i].class_id == c).count();
            prop_assert_eq!(k, (ratio * n as f64).floor() as usize);
            prop_assert!((k as f64 / n as f64 - ratio).abs() < 1.0 / n as f64);
        }
        prop_assert_eq!(&s, &stratified_split(&m, ratio, seed).unwrap());
    }

    #[test]
    fn three_way_split_covers(counts in prop::collection::vec(2usize..40, 1..6), seed in any::<u64>()) {
        let m = manifest(&counts);
        let s = stratified_split3(&m, 0.7, 0.15, seed).unwrap();
        let mut all: Vec<usize> = s.train_ids.iter().chain(&s.validation_ids).chain(&s.test_ids).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..m.samples.len()).collect::<Vec<_>>());
    }

    #[test]
    fn expansion_count_and_purity(counts in prop::collection::vec(1usize..30, 1..6), multiplier in 0usize..5, seed in any::<u64>()) {
        let mut m = manifest(&counts);
        let s = stratified_split(&m, 0.6, seed).unwrap();
        m.apply_split(&s).unwrap();
        let cfg = AugmentConfig { multiplier, seed, ..AugmentConfig::default() };
        let set = expand_training_set(&m, &s, &cfg).unwrap();
        prop_assert_eq!(set.entries.len(), s.train_ids.len() * (1 + multiplier));
        prop_assert_eq!(set.records().count(), s.train_ids.len() * multiplier);
        prop_assert!(set.entries.iter().all(|e| m.samples[e.source_sample_id].split == Split::Train));
        prop_assert!(set.records().all(|r| r.applied.within(&cfg)));
        prop_assert_eq!(&set, &expand_training_set(&m, &s, &cfg).unwrap());
    }
}
