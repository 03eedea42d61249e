use alseg_core::ingestion::generate_synthetic;
use alseg_core::learner::{binarize, WeightedProblem};
use alseg_core::metrics::dice;
use alseg_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ImageTensor {
    ImageTensor::new(h, w, c, (0..h * w * c).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BinaryMask {
    BinaryMask::new(h, w, (0..h * w).map(|_| rng.gen_bool(0.4)).collect()).unwrap()
}

struct Instance {
    labeled: Vec<(ImageTensor, BinaryMask)>,
    pseudo: Vec<(ImageTensor, BinaryMask)>,
}

impl Instance {
    fn random(seed: u64, channels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<(ImageTensor, BinaryMask)> {
            (0..n)
                .map(|_| {
                    let (h, w) = (rng.gen_range(2..5), rng.gen_range(2..5));
                    (random_image(&mut rng, h, w, channels), random_mask(&mut rng, h, w))
                })
                .collect()
        };
        let labeled = draw(2);
        let pseudo = draw(2);
        Self { labeled, pseudo }
    }

    fn examples(set: &[(ImageTensor, BinaryMask)]) -> Vec<TrainingExample<'_>> {
        set.iter().map(|(image, mask)| TrainingExample { image, mask }).collect()
    }

    fn problem(&self, lambda: f64, l2: f64) -> WeightedProblem {
        WeightedProblem::new(
            &Self::examples(&self.labeled),
            &Self::examples(&self.pseudo),
            lambda,
            l2,
        )
        .unwrap()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central finite differences of the objective, one coordinate at a time.
fn numeric_gradient(problem: &WeightedProblem, w: &[f64], h: f64) -> Vec<f64> {
    (0..w.len())
        .map(|j| {
            let mut plus = w.to_vec();
            let mut minus = w.to_vec();
            plus[j] += h;
            minus[j] -= h;
            (problem.objective(&plus) - problem.objective(&minus)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    for seed in 0..20u64 {
        let channels = if seed % 2 == 0 { 1 } else { 3 };
        let inst = Instance::random(seed, channels);
        let problem = inst.problem(0.3, 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let w: Vec<f64> = (0..problem.num_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let analytic = problem.gradient(&w);
        let numeric = numeric_gradient(&problem, &w, 1e-5);
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(&analytic).max(norm(&numeric));
        assert!(rel < 1e-5, "seed {seed}: relative error {rel}");
    }
}

#[test]
fn doubling_lambda_doubles_the_pseudo_gradient() {
    let inst = Instance::random(7, 3);
    let w: Vec<f64> = (0..9).map(|i| 0.1 * i as f64 - 0.4).collect();
    let base = inst.problem(0.0, 1e-3).gradient(&w);
    let once = inst.problem(0.25, 1e-3).gradient(&w);
    let twice = inst.problem(0.5, 1e-3).gradient(&w);
    for j in 0..w.len() {
        let single = once[j] - base[j];
        let double = twice[j] - base[j];
        assert!((double - 2.0 * single).abs() <= 1e-12 * (1.0 + double.abs()));
    }
}

#[test]
fn full_batch_descent_never_increases_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<(ImageTensor, BinaryMask)> =
        (0..4).map(|_| (random_image(&mut rng, 4, 4, 1), random_mask(&mut rng, 4, 4))).collect();
    let learner = LogisticLearner::new(LearnerConfig {
        epochs: 60,
        learning_rate: 0.05,
        batch_pixels: usize::MAX,
        ..LearnerConfig::default()
    })
    .unwrap();
    let init = learner.initial_model(1, 11);
    let fit = learner.fit(&init, &Instance::examples(&data[..3]), &Instance::examples(&data[3..])).unwrap();
    for pair in fit.loss_trace.windows(2) {
        assert!(pair[1] <= pair[0], "loss went up: {:?}", pair);
    }
    assert!(fit.loss_trace.last().unwrap() < &fit.loss_trace[0]);
}

#[test]
fn lambda_zero_matches_labeled_only_training() {
    let inst = Instance::random(21, 3);
    let learner = LogisticLearner::new(LearnerConfig {
        lambda: 0.0,
        epochs: 5,
        batch_pixels: 7,
        ..LearnerConfig::default()
    })
    .unwrap();
    let init = learner.initial_model(3, 5);
    let with_pseudo = learner
        .train(&init, &Instance::examples(&inst.labeled), &Instance::examples(&inst.pseudo))
        .unwrap();
    let without = learner.train(&init, &Instance::examples(&inst.labeled), &[]).unwrap();
    let max_abs = with_pseudo
        .weights
        .iter()
        .zip(&without.weights)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(max_abs <= 1e-10, "max |Δw| = {max_abs}");
}

#[test]
fn retraining_is_deterministic() {
    let inst = Instance::random(4, 1);
    let learner = LogisticLearner::new(LearnerConfig { batch_pixels: 5, ..LearnerConfig::default() }).unwrap();
    let init = learner.initial_model(1, 9);
    let a = learner.train(&init, &Instance::examples(&inst.labeled), &Instance::examples(&inst.pseudo)).unwrap();
    let b = learner.train(&init, &Instance::examples(&inst.labeled), &Instance::examples(&inst.pseudo)).unwrap();
    assert_eq!(a.weights, b.weights);
}

#[test]
fn single_all_foreground_sample_is_fitted() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let image = random_image(&mut rng, 8, 8, 3);
    let mask = BinaryMask::new(8, 8, vec![true; 64]).unwrap();
    let learner = LogisticLearner::new(LearnerConfig { epochs: 200, ..LearnerConfig::default() }).unwrap();
    let init = learner.initial_model(3, 1);
    let model = learner.train(&init, &[TrainingExample { image: &image, mask: &mask }], &[]).unwrap();
    let prob = model.predict(&image);
    let mean = prob.values().iter().sum::<f64>() / prob.values().len() as f64;
    assert!(mean > 0.9, "mean foreground probability {mean}");
    assert!(dice(&binarize(&prob, 0.5), &mask).unwrap() > 0.95);
}

#[test]
fn first_epoch_lowers_the_loss_on_synthetic_data() {
    let ds = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let oracle = Oracle::new(&ds);
    let ids: Vec<SampleId> = ds.ids(Split::Train).into_iter().step_by(12).collect();
    let masks: Vec<BinaryMask> = ids.iter().map(|&id| oracle.label(id).unwrap()).collect();
    let examples: Vec<TrainingExample<'_>> = ids
        .iter()
        .zip(&masks)
        .map(|(&id, mask)| TrainingExample { image: &ds.sample(id).image, mask })
        .collect();
    let learner = LogisticLearner::new(LearnerConfig::default()).unwrap();
    let init = learner.initial_model(3, 0);
    let fit = learner.fit(&init, &examples, &[]).unwrap();
    assert!(fit.loss_trace[1] < fit.loss_trace[0], "{:?}", fit.loss_trace);
}

#[test]
fn training_without_labeled_samples_fails() {
    let learner = LogisticLearner::new(LearnerConfig::default()).unwrap();
    let init = learner.initial_model(1, 0);
    assert!(matches!(learner.train(&init, &[], &[]), Err(Error::Training(_))));
}
