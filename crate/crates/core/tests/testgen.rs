use gentest_core::models::{ClassifierArch, ClassifierModel, GeneratorArch, GeneratorModel};
use gentest_core::tensor::{finite_difference_gradient, max_relative_error};
use gentest_core::testgen::{
    default_epsilon, export_tests, fails, fails_confident_targeted, fails_confidently,
    fails_targeted, generate_test, generate_test_from, import_tests, perturbed_forward,
    perturbed_graph, seed_latent, similarity_holds, targeted_margin_loss_of, untargeted_loss_of, Mode,
    Objective, Perturbation, Status, TestCase, TestGenConfig, TestSource,
};
use gentest_core::{Graph, Rng, Tensor};

fn small_generator(seed: u64) -> GeneratorModel {
    let arch = GeneratorArch {
        latent_dim: 4,
        classes: 3,
        hidden: vec![6, 5],
        image_shape: [3, 1, 2],
    };
    GeneratorModel::new(arch, &mut Rng::new(seed)).unwrap()
}

fn small_classifier(seed: u64) -> ClassifierModel {
    let arch = ClassifierArch {
        image_shape: [3, 1, 2],
        hidden: vec![7],
        classes: 3,
    };
    ClassifierModel::new(arch, &mut Rng::new(seed)).unwrap()
}

fn normal_vector(rng: &mut Rng, n: usize, scale: f64) -> Tensor {
    Tensor::vector((0..n).map(|_| scale * rng.normal()).collect())
}

fn random_perturbation(rng: &mut Rng, g: &GeneratorModel, scale: f64) -> Perturbation {
    let sites = g.site_widths().into_iter().map(|w| normal_vector(rng, w, scale)).collect();
    Perturbation::from_sites(g, sites).unwrap()
}

#[test]
fn zero_perturbation_is_bit_identical() {
    let g = GeneratorModel::new(GeneratorArch::default(), &mut Rng::new(3)).unwrap();
    let zero = Perturbation::zeros(&g);
    let mut rng = Rng::new(4);
    for i in 0..100 {
        let z = normal_vector(&mut rng, g.latent_dim(), 1.0);
        let y = i % g.classes();
        let plain = g.forward(&z, y).unwrap().image;
        assert!(perturbed_forward(&g, &z, y, &zero).unwrap().bit_eq(&plain), "latent {i}");

        let mut graph = Graph::new();
        let all: Vec<usize> = (0..g.site_widths().len()).collect();
        let (nodes, _) = perturbed_graph(&mut graph, &g, &z, y, &zero, &all).unwrap();
        let from_graph = graph.value(nodes.image).unwrap().reshape(&g.image_shape()).unwrap();
        assert!(from_graph.bit_eq(&plain), "graph latent {i}");
    }
}

#[test]
fn final_site_shifts_the_output_logits() {
    let g = small_generator(5);
    let mut rng = Rng::new(6);
    let sites = g.site_widths();
    let last = sites.len() - 1;
    for _ in 0..20 {
        let z = normal_vector(&mut rng, g.latent_dim(), 1.0);
        let delta = normal_vector(&mut rng, sites[last], 0.5);
        let mut p = Perturbation::zeros(&g).into_sites();
        p[last] = delta.clone();
        let p = Perturbation::from_sites(&g, p).unwrap();
        let logits = g.forward(&z, 1).unwrap().activations.pop().unwrap();
        let shifted = perturbed_forward(&g, &z, 1, &p).unwrap();
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        for (k, (&o, &d)) in logits.data().iter().zip(delta.data()).enumerate() {
            let expected = sigmoid(o + d) - sigmoid(o);
            let actual = shifted.data()[k] - sigmoid(o);
            assert!((expected - actual).abs() < 1e-12, "{expected} vs {actual}");
        }
    }
}

/// Targeted margin on confidences (or log-confidences) as a graph, built
/// independently of the walk's own loss.
fn walk_loss(
    graph: &mut Graph,
    f: &ClassifierModel,
    image: gentest_core::NodeId,
    target: usize,
    objective: Objective,
) -> gentest_core::NodeId {
    let (logits, _) = f.build_logits(graph, image, false).unwrap();
    let scores = match objective {
        Objective::Confidence => graph.softmax(logits).unwrap(),
        Objective::LogConfidence => logits,
    };
    let other = graph.row_max(scores, Some(target)).unwrap();
    let own = graph.column(scores, target).unwrap();
    let diff = graph.sub(other, own).unwrap();
    graph.sum(diff).unwrap()
}

#[test]
fn perturbation_gradient_matches_finite_differences() {
    let g = small_generator(7);
    let f = small_classifier(8);
    let mut rng = Rng::new(9);
    let active: Vec<usize> = (0..g.site_widths().len()).collect();
    for trial in 0..100 {
        let z = normal_vector(&mut rng, g.latent_dim(), 1.0);
        let y0 = trial % 3;
        let target = (y0 + 1 + trial / 3 % 2) % 3;
        let p = random_perturbation(&mut rng, &g, 0.3);

        let mut graph = Graph::new();
        let (nodes, vars) = perturbed_graph(&mut graph, &g, &z, y0, &p, &active).unwrap();
        let root = walk_loss(&mut graph, &f, nodes.image, target, Objective::Confidence);
        let grads = graph.backward(root, &vars).unwrap();

        for site in 0..p.sites().len() {
            let numeric = finite_difference_gradient(
                |v| {
                    let mut sites = p.clone().into_sites();
                    sites[site] = v.clone();
                    let q = Perturbation::from_sites(&g, sites)?;
                    let conf = f.predict(&perturbed_forward(&g, &z, y0, &q)?)?.confidences;
                    targeted_margin_loss_of(conf.data(), target, 0.0)
                },
                &p.sites()[site],
                1e-5,
            )
            .unwrap();
            let analytic = grads[site].reshape(&[grads[site].len()]).unwrap();
            let err = max_relative_error(&analytic, &numeric, 1e-6).unwrap();
            assert!(err < 1e-4, "trial {trial} site {site}: {err:e}");
        }
    }
}

#[test]
fn first_step_norm_is_step_times_gradient_norm() {
    let g = small_generator(10);
    let f = small_classifier(11);
    let mut checked = 0;
    for seed in 0..40 {
        let mut cfg = TestGenConfig::for_generator(&g);
        cfg.seed = seed;
        cfg.layers = vec![0, 2];
        cfg.max_iterations = 1;
        cfg.step_size = 1e-3;
        let z = seed_latent(&g, seed);
        let y0 = f.predict(&g.forward(&z, 0).unwrap().image).unwrap().predicted;
        let y1 = (y0 + 1) % 3;
        let t = generate_test_from(&g, &f, &z, y0, y1, &cfg).unwrap();
        if t.status == Status::SeedMisclassified || t.iterations != 1 {
            continue;
        }
        let mut graph = Graph::new();
        let (nodes, vars) =
            perturbed_graph(&mut graph, &g, &z, y0, &Perturbation::zeros(&g), &cfg.layers).unwrap();
        let root = walk_loss(&mut graph, &f, nodes.image, y1, cfg.objective);
        let grads = graph.backward(root, &vars).unwrap();
        let grad_norm = grads.iter().map(|t| t.l2_norm().powi(2)).sum::<f64>().sqrt();
        let expected = cfg.step_size * grad_norm;
        assert!(
            (t.perturbation_norm - expected).abs() <= 1e-12 * expected,
            "{} vs {expected}",
            t.perturbation_norm
        );
        checked += 1;
    }
    assert!(checked >= 10, "only {checked} walks took a step");
}

/// Prediction by the definition: the first index holding the largest value.
fn brute_prediction(conf: &[f64]) -> usize {
    (0..conf.len())
        .find(|&i| conf.iter().enumerate().all(|(j, &v)| if j < i { conf[i] > v } else { conf[i] >= v }))
        .unwrap()
}

fn random_confidences(rng: &mut Rng, k: usize, quantized: bool) -> Vec<f64> {
    let raw: Vec<f64> = (0..k)
        .map(|_| if quantized { (rng.below(5) as f64).exp() } else { (3.0 * rng.normal()).exp() })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

#[test]
fn predicates_agree_with_their_definitions() {
    let mut rng = Rng::new(12);
    for case in 0..10_000 {
        let k = 2 + rng.below(4);
        let conf = random_confidences(&mut rng, k, case % 2 == 1);
        let y = rng.below(k);
        let c = [0.0, 0.1, 0.5, 0.999, rng.uniform()][rng.below(5)];

        let pred = brute_prediction(&conf);
        assert_eq!(fails(&conf, y).unwrap(), pred != y, "{conf:?} {y}");
        assert_eq!(fails_targeted(&conf, y).unwrap(), pred == y, "{conf:?} {y}");
        let confident = conf.iter().any(|&v| v - conf[y] > c);
        assert_eq!(fails_confidently(&conf, y, c).unwrap(), confident, "{conf:?} {y} {c}");
        let dominant = (0..k).filter(|&j| j != y).all(|j| conf[y] - conf[j] > c);
        assert_eq!(fails_confident_targeted(&conf, y, c).unwrap(), dominant, "{conf:?} {y} {c}");

        let loss = targeted_margin_loss_of(&conf, y, c).unwrap();
        assert_eq!(loss < 0.0, fails_confident_targeted(&conf, y, c).unwrap(), "{conf:?} {y} {c}");
        assert_eq!(untargeted_loss_of(&conf), conf[pred]);
    }
}

#[test]
fn margin_loss_examples() {
    assert_eq!(targeted_margin_loss_of(&[0.25; 4], 1, 0.0).unwrap(), 0.0);
    assert!(!fails_confident_targeted(&[0.25; 4], 1, 0.0).unwrap());
    let loss = targeted_margin_loss_of(&[0.9, 0.05, 0.05], 0, 0.1).unwrap();
    assert!((loss + 0.75).abs() < 1e-12);
}

/// Independent re-check of a reported success from its stored latent and
/// perturbation.
fn certify(t: &TestCase, g: &GeneratorModel, f: &ClassifierModel, cfg: &TestGenConfig) -> Result<(), String> {
    let TestSource::Semantic { latent, perturbation } = &t.source else {
        return Err("not a semantic test".into());
    };
    let image = perturbed_forward(g, latent, t.seed_class, perturbation).map_err(|e| e.to_string())?;
    if !image.bit_eq(&t.test_image) {
        return Err("stored image differs from the regenerated one".into());
    }
    let conf = f.predict(&image).map_err(|e| e.to_string())?.confidences;
    let target = t.target.unwrap_or(t.seed_class);
    if !t.mode.succeeded(conf.data(), t.seed_class, target, cfg.confidence).unwrap() {
        return Err(format!("failure predicate does not hold: {:?}", conf.data()));
    }
    if !similarity_holds(perturbation, cfg.epsilon) {
        return Err(format!("norm {} not below {}", perturbation.flattened_norm(), cfg.epsilon));
    }
    for (i, site) in perturbation.sites().iter().enumerate() {
        if !cfg.layers.contains(&i) && site.data().iter().any(|&v| v != 0.0) {
            return Err(format!("site {i} is outside the configured layers"));
        }
    }
    Ok(())
}

#[test]
fn reported_successes_certify() {
    let g = small_generator(13);
    // Reaches all three classes on generated images.
    let f = small_classifier(4);
    let mut successes = 0;
    let mut total = 0;
    for (m, mode) in [Mode::Untargeted, Mode::Targeted, Mode::ConfidentTargeted].into_iter().enumerate() {
        for objective in [Objective::Confidence, Objective::LogConfidence] {
            for seed in 0..90 {
                let mut cfg = TestGenConfig::for_generator(&g);
                cfg.mode = mode;
                cfg.objective = objective;
                cfg.seed = seed;
                cfg.confidence = 0.3;
                cfg.epsilon = 20.0;
                cfg.step_size = 1.0;
                cfg.max_iterations = 200;
                cfg.layers = [vec![0, 1], vec![1, 2], vec![0, 3]][m].clone();
                let z = seed_latent(&g, seed);
                let y0 = f.predict(&g.forward(&z, 0).unwrap().image).unwrap().predicted;
                let t = generate_test(&g, &f, y0, (y0 + 1 + seed as usize % 2) % 3, &cfg).unwrap();
                total += 1;
                if t.is_success() {
                    successes += 1;
                    certify(&t, &g, &f, &cfg).unwrap_or_else(|e| panic!("seed {seed} {mode}: {e}"));
                }
            }
        }
    }
    assert_eq!(total, 540);
    assert!(successes >= 100, "only {successes} successes to certify");
}

#[test]
fn constant_classifier_cannot_be_fooled() {
    let g = small_generator(15);
    let f = ClassifierModel::zeros(ClassifierArch {
        image_shape: [3, 1, 2],
        hidden: vec![4],
        classes: 3,
    })
    .unwrap();
    for seed in 0..5 {
        let mut cfg = TestGenConfig::for_generator(&g);
        cfg.seed = seed;
        cfg.max_iterations = 30;
        let t = generate_test(&g, &f, 0, 1, &cfg).unwrap();
        assert!(
            matches!(t.status, Status::IterationCap | Status::EpsilonExceeded),
            "{:?}",
            t.status
        );
        assert_eq!(t.perturbation_norm, 0.0);
        assert!(t.test_image.bit_eq(&t.seed_image));
    }
}

#[test]
fn zero_iterations_judges_the_seed_alone() {
    let g = small_generator(16);
    let f = small_classifier(17);
    for seed in 0..20 {
        let mut cfg = TestGenConfig::for_generator(&g);
        cfg.seed = seed;
        cfg.max_iterations = 0;
        cfg.mode = Mode::Untargeted;
        let t = generate_test(&g, &f, 0, 1, &cfg).unwrap();
        assert_eq!(t.iterations, 0);
        let expected = if f.predict(&t.seed_image).unwrap().predicted != 0 {
            Status::SeedMisclassified
        } else {
            Status::IterationCap
        };
        assert_eq!(t.status, expected);
    }
}

#[test]
fn default_epsilon_scales_with_the_active_sites() {
    let g = GeneratorModel::zeros(GeneratorArch::default()).unwrap();
    assert_eq!(g.site_widths(), vec![16, 64, 128, 256, 512, 768]);
    let eps = default_epsilon(&g, &[0, 1, 2]);
    assert!((eps - 2.0 * 208f64.sqrt() * 0.05).abs() < 1e-12);
    assert_eq!(TestGenConfig::for_generator(&g).epsilon, eps);
}

#[test]
fn rejects_equal_classes_and_bad_layers() {
    let g = small_generator(18);
    let f = small_classifier(19);
    let cfg = TestGenConfig::for_generator(&g);
    assert!(generate_test(&g, &f, 1, 1, &cfg).is_err());
    let bad = TestGenConfig { layers: vec![9], ..cfg.clone() };
    assert!(generate_test(&g, &f, 0, 1, &bad).is_err());
    let dup = TestGenConfig { layers: vec![1, 1], ..cfg };
    assert!(generate_test(&g, &f, 0, 1, &dup).is_err());
}

#[test]
fn export_round_trips_bit_exactly() {
    let g = small_generator(20);
    let f = small_classifier(21);
    let mut tests = Vec::new();
    for seed in 0..12 {
        let mut cfg = TestGenConfig::for_generator(&g);
        cfg.seed = seed;
        cfg.step_size = 0.05;
        cfg.max_iterations = 50;
        cfg.mode = [Mode::Untargeted, Mode::Targeted, Mode::ConfidentTargeted][seed as usize % 3];
        let mut t = generate_test(&g, &f, seed as usize % 3, (seed as usize + 1) % 3, &cfg).unwrap();
        t.id = 100 + seed as usize;
        tests.push(t);
    }
    let dir = tempfile::tempdir().unwrap();
    export_tests(&tests, dir.path()).unwrap();
    assert_eq!(import_tests(dir.path()).unwrap(), tests);
    for t in &tests {
        assert!(dir.path().join(format!("{:05}_seed.ppm", t.id)).exists());
        assert!(dir.path().join(format!("{:05}_test.ppm", t.id)).exists());
    }

    let mut dup = tests[..2].to_vec();
    dup[1].id = dup[0].id;
    assert!(export_tests(&dup, tempfile::tempdir().unwrap().path()).is_err());
}

