use gentest_core::analysis::{
    distance_distribution, distance_histogram_csv, fault_detection_rate, is_flip, transfer_matrix,
    EXCEED_TOLERANCE, HISTOGRAM_BINS,
};
use gentest_core::baseline::{pixel_test, AttackConfig, NormKind};
use gentest_core::models::{ClassifierArch, ClassifierModel};
use gentest_core::synthdata::{render, sample_params, BiasFeature, BiasSpec};
use gentest_core::testgen::{pixel_distances, Mode, Status, TestCase, TestSource};
use gentest_core::{Error, Rng, Tensor};

/// A test whose seed and test images are rendered with the given background
/// hues.
fn hue_test(id: usize, seed_class: usize, seed_hue: f64, test_hue: f64, status: Status, rng: &mut Rng) -> TestCase {
    let mut p = sample_params(rng, seed_class, Some((BiasFeature::BackgroundHue, (seed_hue, seed_hue))));
    let seed_image = render(&p).unwrap();
    p.background_hue = test_hue;
    p.object_hue = (test_hue + 0.5).rem_euclid(1.0);
    let test_image = render(&p).unwrap();
    let (pixel_l2, pixel_linf) = pixel_distances(&seed_image, &test_image);
    TestCase {
        id,
        seed_class,
        target: Some(1 - seed_class),
        mode: Mode::Targeted,
        source: TestSource::Pixel {
            delta: test_image.zip_map(&seed_image, |a, b| a - b).unwrap(),
        },
        seed_image,
        test_image,
        seed_confidences: Tensor::vector(vec![0.5, 0.5]),
        test_confidences: Tensor::vector(vec![0.5, 0.5]),
        status,
        iterations: 1,
        perturbation_norm: 0.0,
        pixel_l2,
        pixel_linf,
    }
}

fn mixed_tests(seed_class: usize, n: usize, seed: u64) -> Vec<TestCase> {
    let bias = BiasSpec::default();
    let own = bias.range_of(seed_class).unwrap();
    let other = bias.range_of(1 - seed_class).unwrap();
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|i| {
            let from = rng.uniform_range(own.0 + 0.02, own.1 - 0.02);
            let to = if i % 3 == 0 { from } else { rng.uniform_range(other.0 + 0.02, other.1 - 0.02) };
            let status = if i % 5 == 4 { Status::IterationCap } else { Status::Success };
            hue_test(i, seed_class, from, to, status, &mut rng)
        })
        .collect()
}

#[test]
fn unchanged_image_is_not_a_flip() {
    let bias = BiasSpec::default();
    let mut rng = Rng::new(1);
    for class in [0, 1] {
        let (lo, hi) = bias.range_of(class).unwrap();
        let hue = 0.5 * (lo + hi);
        let t = hue_test(0, class, hue, hue, Status::Success, &mut rng);
        assert_eq!(is_flip(&t, &bias).unwrap(), Some(false));
    }
}

#[test]
fn constructed_flip_is_detected() {
    let bias = BiasSpec::default();
    let mut rng = Rng::new(2);
    let t = hue_test(0, 0, 0.2, 0.8, Status::Success, &mut rng);
    assert_eq!(is_flip(&t, &bias).unwrap(), Some(true));
    let back = hue_test(1, 1, 0.8, 0.2, Status::Success, &mut rng);
    assert_eq!(is_flip(&back, &bias).unwrap(), Some(true));
    let partial = hue_test(2, 0, 0.2, 0.5, Status::Success, &mut rng);
    assert_eq!(is_flip(&partial, &bias).unwrap(), Some(false));
}

#[test]
fn fault_detection_reaggregates_per_test_flips() {
    let bias = BiasSpec::default();
    for class in [0, 1] {
        let tests = mixed_tests(class, 60, 3 + class as u64);
        let report = fault_detection_rate(&tests, &bias).unwrap();
        let mut flips = 0;
        let mut counted = 0;
        for t in tests.iter().filter(|t| t.is_success()) {
            if let Some(f) = is_flip(t, &bias).unwrap() {
                counted += 1;
                flips += usize::from(f);
            }
        }
        assert_eq!((report.successes, report.flips), (counted, flips));
        assert_eq!(report.successes + report.excluded, tests.iter().filter(|t| t.is_success()).count());
        assert_eq!(report.target_class, 1 - class);
        assert!(report.flips > 0 && report.flips < report.successes);
        assert_eq!(report.rate(), Some(flips as f64 / counted as f64));
    }
}

#[test]
fn reports_ignore_test_order() {
    let bias = BiasSpec::default();
    let tests = mixed_tests(0, 50, 5);
    let mut shuffled = tests.clone();
    Rng::new(6).shuffle(&mut shuffled);
    assert_eq!(fault_detection_rate(&tests, &bias).unwrap(), fault_detection_rate(&shuffled, &bias).unwrap());
    let a = distance_distribution(&tests, 0.09375, 16.0 / 255.0).unwrap();
    let b = distance_distribution(&shuffled, 0.09375, 16.0 / 255.0).unwrap();
    assert_eq!(a, b);
    assert_eq!(distance_histogram_csv(&[("m", &a)]), distance_histogram_csv(&[("m", &b)]));
}

#[test]
fn distance_report_counts_exceedance() {
    let tests = mixed_tests(1, 40, 7);
    let eps = 5.0;
    let report = distance_distribution(&tests, eps, 0.5).unwrap();
    let expected = tests.iter().filter(|t| t.pixel_l2 > eps + EXCEED_TOLERANCE).count() as f64 / 40.0;
    assert_eq!(report.l2.exceed_fraction, expected);
    assert_eq!(report.l2.histogram.total(), 40);
    assert_eq!(report.linf.histogram.counts.len(), HISTOGRAM_BINS);
    assert!(report.l2.values.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(report.len(), 40);

    let at_budget = distance_distribution(&tests, report.l2.values[39], 0.5).unwrap();
    assert_eq!(at_budget.l2.exceed_fraction, 0.0);
}

#[test]
fn empty_and_mixed_inputs_are_rejected() {
    let bias = BiasSpec::default();
    assert!(matches!(distance_distribution(&[], 1.0, 1.0), Err(Error::EmptyTests)));
    assert!(matches!(fault_detection_rate(&[], &bias), Err(Error::EmptyTests)));
    let mut mixed = mixed_tests(0, 3, 8);
    mixed.extend(mixed_tests(1, 3, 9));
    assert!(fault_detection_rate(&mixed, &bias).is_err());
}

#[test]
fn tests_do_not_transfer_back_to_their_own_model() {
    let f = ClassifierModel::new(ClassifierArch::default(), &mut Rng::new(10)).unwrap();
    let other = ClassifierModel::new(ClassifierArch::default(), &mut Rng::new(11)).unwrap();
    let attack = AttackConfig {
        mode: Mode::Targeted,
        epsilon: 0.5,
        ..AttackConfig::new(NormKind::Linf)
    };
    let mut rng = Rng::new(12);
    let mut tests = Vec::new();
    for i in 0..40 {
        let p = sample_params(&mut rng, i % 2, None);
        let x = render(&p).unwrap();
        let y = f.predict(&x).unwrap().predicted;
        tests.push(pixel_test(&f, &x, y, 1 - y, &attack).unwrap());
    }
    let successes = tests.iter().filter(|t| t.is_success()).count();
    assert!(successes >= 20, "{successes} successes");
    let none: Vec<TestCase> = tests.iter().filter(|t| !t.is_success()).cloned().collect();
    let report = transfer_matrix(&[("pixel", &tests), ("failed", &none)], &[("f", &f), ("other", &other)]).unwrap();
    let own = report.cell("f", "pixel").unwrap();
    assert_eq!((own.accuracy, own.count), (0.0, successes));
    assert_eq!(report.cell("other", "pixel").unwrap().count, successes);
    assert!(report.cell("f", "failed").is_none());
    assert!(report.cell("missing", "pixel").is_none());
}
