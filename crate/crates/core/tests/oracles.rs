//! Independent oracles for values the library computes numerically.

mod common;

use annobias::attribution::{
    attribution_summary, gauss_legendre, integrated_gradients, integrated_gradients_with, IgConfig,
    IntegrationRule,
};
use annobias::classifier::{build_vocab, train, BagOfEmbeddings, Classifier, TrainConfig};
use annobias::corpus::{Gender, ToxicityScore};
use annobias::lexicon::Blacklist;
use annobias::metrics::{kde, spearman};
use annobias::sampling::{build_gender_task, Dataset, Example, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_input, random_model, synth_corpus, SynthSpec};

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// With a zero baseline the path is `alpha * x`, the logit is
/// `alpha * z + b` with `z = w . mean(x)`, and row `i` integrates to
/// `(w . x_i / L) * (sigmoid(z + b) - sigmoid(b)) / z`.
fn closed_form_ig(model: &BagOfEmbeddings, ids: &[usize]) -> Vec<f64> {
    let l = ids.len() as f64;
    let dot = |id: usize| -> f64 {
        model
            .embedding(id)
            .iter()
            .zip(model.weights())
            .map(|(e, w)| e * w)
            .sum()
    };
    let z: f64 = ids.iter().map(|&id| dot(id)).sum::<f64>() / l;
    let b = model.bias();
    let path = if z.abs() < 1e-12 {
        sigmoid(b) * (1.0 - sigmoid(b))
    } else {
        (sigmoid(z + b) - sigmoid(b)) / z
    };
    ids.iter().map(|&id| dot(id) / l * path).collect()
}

#[test]
fn ig_matches_closed_form_integral() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let model = random_model(&mut rng, 5);
        let seq = random_input(&mut rng, &model);
        let expected = closed_form_ig(&model, &seq.ids);
        let got = integrated_gradients(&model, &seq, 64).unwrap();
        for (g, e) in got.scores.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }
}

#[test]
fn riemann_and_trapezoid_converge_to_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let model = random_model(&mut rng, 5);
        let seq = random_input(&mut rng, &model);
        let expected = closed_form_ig(&model, &seq.ids);
        for (rule, tol) in [(IntegrationRule::RiemannRight, 5e-3), (IntegrationRule::Trapezoid, 1e-5)] {
            let got = integrated_gradients_with(&model, &seq, &IgConfig { steps: 400, rule }).unwrap();
            for (g, e) in got.scores.iter().zip(&expected) {
                assert!((g - e).abs() < tol, "{rule:?}: {g} vs {e}");
            }
        }
    }
}

#[test]
fn doubling_steps_never_increases_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let model = random_model(&mut rng, 4);
        let seq = random_input(&mut rng, &model);
        for rule in [IntegrationRule::GaussLegendre, IntegrationRule::Trapezoid] {
            let mut previous = f64::INFINITY;
            for steps in [4, 8, 16, 32, 64, 128] {
                let r = integrated_gradients_with(&model, &seq, &IgConfig { steps, rule })
                    .unwrap()
                    .completeness_residual;
                // Below ~1e-14 the residual is rounding noise.
                assert!(r <= previous.max(1e-14), "{rule:?} at {steps}: {r} > {previous}");
                previous = r;
            }
        }
    }
}

/// The right-endpoint rule converges, but not monotonically: its error
/// changes sign as steps grow, so a doubling can land further away.
#[test]
fn right_riemann_refinement_is_not_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut found = false;
    for _ in 0..100 {
        let model = random_model(&mut rng, 4);
        let seq = random_input(&mut rng, &model);
        let residual = |steps| {
            let cfg = IgConfig { steps, rule: IntegrationRule::RiemannRight };
            integrated_gradients_with(&model, &seq, &cfg).unwrap().completeness_residual
        };
        let rs: Vec<f64> = [4, 8, 16, 32, 64, 128].map(residual).to_vec();
        found |= rs.windows(2).any(|w| w[1] > w[0]);
        assert!(rs[5] < 0.05);
    }
    assert!(found);
}

#[test]
fn gauss_legendre_is_exact_for_polynomials() {
    for n in 1..=12 {
        let (nodes, weights) = gauss_legendre(n);
        assert!((weights.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        for degree in 0..(2 * n) {
            let got: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * x.powi(degree as i32)).sum();
            let exact = if degree % 2 == 1 { 0.0 } else { 2.0 / (degree as f64 + 1.0) };
            assert!((got - exact).abs() < 1e-12, "n={n} degree={degree}: {got} vs {exact}");
        }
    }
}

#[test]
fn trained_model_gradient_matches_finite_differences() {
    let corpus = synth_corpus(&SynthSpec {
        per_cell: 100,
        ..SynthSpec::default()
    });
    let ds = build_gender_task(&corpus, 3, None).unwrap();
    let model = train(&ds, &TrainConfig::default()).unwrap();
    let h = 1e-5;
    for e in ds.examples.iter().take(20) {
        let x = model.embed(&model.tokenize(&e.text));
        let g = model.grad_wrt_embeddings(&x).unwrap();
        for i in 0..x.as_slice().len() {
            let at = |d: f64| {
                let mut m = x.clone();
                m.as_mut_slice()[i] += d;
                model.forward_from_embeddings(&m).unwrap()
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            let a = g.as_slice()[i];
            assert!((a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-6), "{a} vs {fd}");
        }
    }
}

fn toy(texts: &[(&str, bool)]) -> Dataset {
    Dataset {
        task: Task::Gender,
        seed: 0,
        examples: texts
            .iter()
            .enumerate()
            .map(|(i, &(text, label))| Example {
                rev_id: i as u64,
                worker_id: i as u64,
                text: text.into(),
                label,
                score: ToxicityScore::Toxic,
                gender: if label { Gender::Female } else { Gender::Male },
            })
            .collect(),
        transform_log: vec![],
        plan: None,
    }
}

#[test]
fn separable_toy_reaches_full_training_accuracy() {
    let ds = toy(&[
        ("alpha beta", false),
        ("beta gamma", false),
        ("alpha gamma", false),
        ("alpha beta gamma", false),
        ("gamma alpha", false),
        ("delta eps", true),
        ("eps zeta", true),
        ("delta zeta", true),
        ("delta eps zeta", true),
        ("zeta delta", true),
    ]);
    let config = TrainConfig {
        min_frequency: 1,
        ..TrainConfig::default()
    };
    let model = train(&ds, &config).unwrap();
    for e in &ds.examples {
        assert_eq!(model.predict_text(&e.text) >= 0.5, e.label, "{}", e.text);
    }
    let losses = model.loss_history();
    assert!(losses.last().unwrap() <= losses.first().unwrap());
    // Same data and seed give bit-identical parameters.
    assert_eq!(train(&ds, &config).unwrap(), model);
}

#[test]
fn offensive_tokens_lean_male_on_original_model() {
    let corpus = synth_corpus(&SynthSpec {
        per_cell: 300,
        ..SynthSpec::default()
    });
    let ds = build_gender_task(&corpus, 5, None).unwrap();
    let model = train(&ds, &TrainConfig::default()).unwrap();
    let summary = attribution_summary(&model, &ds, 5, &IgConfig::default()).unwrap();
    let blacklist: Blacklist = common::blacklist();
    let mean = |offensive: bool| {
        let v: Vec<f64> = summary
            .tokens
            .iter()
            .filter(|t| blacklist.contains(&t.token) == offensive)
            .map(|t| t.mean_score)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(true) - mean(false) < 0.0);
    assert!(summary.most_male.iter().any(|t| blacklist.contains(&t.token)));
}

#[test]
fn kde_single_point_is_standard_normal_density() {
    let d = kde(&[0.0], Some(1.0), &[0.0, 1.0]).unwrap();
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    assert!((d[0] - phi(0.0)).abs() < 1e-15);
    assert!((d[1] - phi(1.0)).abs() < 1e-15);
}

#[test]
fn spearman_known_values() {
    // Perfectly monotone and anti-monotone.
    assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 25.0, 100.0]).unwrap() - 1.0).abs() < 1e-15);
    assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
    // d^2 formula without ties: 1 - 6 * 2 / (5 * 24) = 0.9.
    let rho = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 3.0, 4.0, 5.0]).unwrap();
    assert!((rho - 0.9).abs() < 1e-12);
}

#[test]
fn vocabulary_ordering_and_threshold() {
    let vocab = build_vocab(&["a b", "a c"], 2).unwrap();
    assert!(vocab.contains("a"));
    assert!(!vocab.contains("b"));
    assert_eq!(vocab.token(0), Some("<pad>"));
    assert_eq!(vocab.token(1), Some("<unk>"));
    assert_eq!(vocab.id("c"), 1);
}
