use std::path::PathBuf;

use leafscope_core::dataset::LabelMap;
use leafscope_core::metrics::{
    build_report, class_counts, class_metrics, confusion_matrix, overall_accuracy, round2, ClassCounts, ConfusionMatrix,
};
use leafscope_core::{rng, Error};
use proptest::prelude::*;
use rand::Rng;

const CLASSES: [&str; 8] = ["AC", "BC", "CW", "DB", "GM", "HL", "PM", "SM"];
const MODELS: [&str; 5] = ["densenet201", "inceptionv3", "resnet152v2", "seresnet152", "xception"];

fn fixture(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/published").join(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Published matrices are laid out with predicted classes as rows.
fn published(model: &str) -> ConfusionMatrix {
    let rows: Vec<Vec<u64>> = fixture(&format!("{model}.csv"))
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    ConfusionMatrix::from_predicted_rows(&rows).unwrap()
}

fn labels() -> LabelMap {
    LabelMap::new(CLASSES.iter().map(|s| s.to_string()).collect()).unwrap()
}

#[test]
fn densenet_anthracnose_counts() {
    let m = published("densenet201");
    let c = class_counts(&m, 0).unwrap();
    assert_eq!(
        c,
        ClassCounts {
            true_positive: 1621,
            false_positive: 7,
            false_negative: 26,
            true_negative: 11_533
        }
    );
    let k = class_metrics(&c).unwrap();
    assert!((k.precision - 0.9957).abs() < 5e-5);
    assert!((k.recall - 0.9842).abs() < 5e-5);
    assert!((k.f1 - 0.9899).abs() < 5e-5);
    assert_eq!((round2(k.precision), round2(k.recall), round2(k.f1)), (1.0, 0.98, 0.99));
}

#[test]
fn published_accuracy_arithmetic() {
    let expected = [
        ("densenet201", 13_072u64, 13_187u64),
        ("inceptionv3", 12_811, 13_184),
        ("resnet152v2", 12_985, 13_184),
        ("seresnet152", 13_071, 13_184),
        ("xception", 12_885, 13_184),
    ];
    for (model, trace, total) in expected {
        let m = published(model);
        assert_eq!((m.trace(), m.total()), (trace, total), "{model}");
        assert_eq!(overall_accuracy(&m).unwrap(), trace as f64 / total as f64);
    }
    assert!((overall_accuracy(&published("densenet201")).unwrap() - 0.99128).abs() < 5e-6);
}

#[test]
fn every_published_table_cell_is_reproduced() {
    let mut cells = 0;
    for line in fixture("per_class_metrics.csv").lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (model, class) = (f[0], f[1]);
        let want: Vec<f64> = f[2..5].iter().map(|v| v.parse().unwrap()).collect();
        let report = build_report(&published(model), &labels()).unwrap();
        let r = report.per_class.iter().find(|r| r.class_name == class).unwrap();
        let got = [round2(r.precision), round2(r.recall), round2(r.f1)];
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{model} {class}: got {got:?}, want {want:?}");
            cells += 1;
        }
    }
    assert_eq!(cells, 120);
    assert_eq!(MODELS.len() * CLASSES.len() * 3, cells);
}

#[test]
fn named_examples() {
    let se = build_report(&published("seresnet152"), &labels()).unwrap();
    let cw = &se.per_class[2];
    assert_eq!((round2(cw.precision), round2(cw.recall), round2(cw.f1)), (1.0, 1.0, 1.0));
    let inc = build_report(&published("inceptionv3"), &labels()).unwrap();
    let sm = &inc.per_class[7];
    assert_eq!((round2(sm.precision), round2(sm.recall), round2(sm.f1)), (0.94, 0.93, 0.93));
}

#[test]
fn small_cases() {
    let m = confusion_matrix(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
    assert_eq!((m.trace(), m.total()), (3, 3));
    assert_eq!(overall_accuracy(&m).unwrap(), 1.0);
    for c in 0..3 {
        let k = class_counts(&m, c).unwrap();
        assert_eq!((k.false_positive, k.false_negative), (0, 0));
    }
    let m = confusion_matrix(&[0, 0], &[1, 1], 2).unwrap();
    assert_eq!(m.rows(), vec![vec![0, 2], vec![0, 0]]);
    assert_eq!(overall_accuracy(&m).unwrap(), 0.0);
    let one = ConfusionMatrix::from_true_rows(&[[9u64]]).unwrap();
    assert_eq!(
        class_counts(&one, 0).unwrap(),
        ClassCounts { true_positive: 9, false_positive: 0, false_negative: 0, true_negative: 0 }
    );
    let perfect = class_metrics(&ClassCounts { true_positive: 5, false_positive: 0, false_negative: 0, true_negative: 5 }).unwrap();
    assert_eq!((perfect.precision, perfect.recall, perfect.f1, perfect.accuracy), (1.0, 1.0, 1.0, 1.0));
    let zero = class_metrics(&ClassCounts { true_positive: 0, false_positive: 3, false_negative: 2, true_negative: 5 }).unwrap();
    assert_eq!((zero.precision, zero.recall, zero.f1), (0.0, 0.0, 0.0));
    assert!(zero.degenerate);
    assert!(matches!(class_metrics(&ClassCounts { true_positive: 0, false_positive: 0, false_negative: 0, true_negative: 0 }), Err(Error::Input(_))));
    assert!(matches!(class_counts(&m, 2), Err(Error::Input(_))));
    assert!(matches!(confusion_matrix(&[0], &[0, 1], 2), Err(Error::Input(_))));
    assert!(matches!(confusion_matrix(&[0], &[2], 2), Err(Error::Input(_))));
    assert!(matches!(overall_accuracy(&ConfusionMatrix::zeros(3)), Err(Error::Input(_))));
}

#[test]
fn random_pairs_match_direct_tally() {
    let mut r = rng::seeded(3);
    let n = 10_000;
    let t: Vec<usize> = (0..n).map(|_| r.random_range(0..8)).collect();
    let p: Vec<usize> = (0..n).map(|_| r.random_range(0..8)).collect();
    let m = confusion_matrix(&t, &p, 8).unwrap();
    assert_eq!(m.total(), n as u64);
    for c in 0..8 {
        assert_eq!(m.row_sum(c), t.iter().filter(|&&v| v == c).count() as u64);
        assert_eq!(m.col_sum(c), p.iter().filter(|&&v| v == c).count() as u64);
    }
}

#[test]
fn uniform_random_macro_f1_is_mean() {
    let mut r = rng::seeded(4);
    let rows: Vec<Vec<u64>> = (0..8).map(|_| (0..8).map(|_| r.random_range(0..50)).collect()).collect();
    let rep = build_report(&ConfusionMatrix::from_true_rows(&rows).unwrap(), &labels()).unwrap();
    let mean = rep.per_class.iter().map(|c| c.f1).sum::<f64>() / 8.0;
    assert!((rep.macro_f1 - mean).abs() < 1e-12);
    assert!(matches!(build_report(&ConfusionMatrix::zeros(2), &labels()), Err(Error::Input(_))));
}

fn matrix_strategy() -> impl Strategy<Value = Vec<Vec<u64>>> {
    (1usize..9).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(0u64..40, n), n))
}

proptest! {
    #[test]
    fn decomposition_and_conservation(rows in matrix_strategy()) {
        let m = ConfusionMatrix::from_true_rows(&rows).unwrap();
        prop_assume!(m.total() > 0);
        let n = m.num_classes();
        let mut tp_sum = 0;
        for c in 0..n {
            let k = class_counts(&m, c).unwrap();
            prop_assert_eq!(k.total(), m.total());
            tp_sum += k.true_positive;
        }
        prop_assert_eq!(tp_sum, m.trace());
        let names = (0..n).map(|i| format!("c{i}")).collect();
        let rep = build_report(&m, &LabelMap::new(names).unwrap()).unwrap();
        prop_assert_eq!(rep.per_class.iter().map(|c| c.support).sum::<u64>(), m.total());
        for c in &rep.per_class {
            for v in [c.precision, c.recall, c.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn f1_between_precision_and_recall(rows in matrix_strategy()) {
        let m = ConfusionMatrix::from_true_rows(&rows).unwrap();
        prop_assume!(m.total() > 0);
        for c in 0..m.num_classes() {
            let k = class_metrics(&class_counts(&m, c).unwrap()).unwrap();
            if k.precision + k.recall > 0.0 {
                let lo = k.precision.min(k.recall);
                let hi = k.precision.max(k.recall);
                prop_assert!(lo - 1e-12 <= k.f1 && k.f1 <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn permutation_equivariance(rows in matrix_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let m = ConfusionMatrix::from_true_rows(&rows).unwrap();
        prop_assume!(m.total() > 0);
        let n = m.num_classes();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng::seeded(seed));
        let pm = m.permuted(&perm).unwrap();
        prop_assert_eq!(overall_accuracy(&pm).unwrap(), overall_accuracy(&m).unwrap());
        for (new, &old) in perm.iter().enumerate() {
            let a = class_metrics(&class_counts(&pm, new).unwrap()).unwrap();
            let b = class_metrics(&class_counts(&m, old).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn transposition_swaps_precision_and_recall(rows in matrix_strategy()) {
        let m = ConfusionMatrix::from_true_rows(&rows).unwrap();
        prop_assume!(m.total() > 0);
        let t = ConfusionMatrix::from_predicted_rows(&rows).unwrap();
        for c in 0..m.num_classes() {
            let a = class_metrics(&class_counts(&m, c).unwrap()).unwrap();
            let b = class_metrics(&class_counts(&t, c).unwrap()).unwrap();
            prop_assert_eq!((a.precision, a.recall), (b.recall, b.precision));
        }
    }
}
