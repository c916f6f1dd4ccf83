use mlpip::adaptation::{adapt, Strategy};
use mlpip::autodiff::{Graph, Tensor};
use mlpip::nets::classifier::{build_task_posterior, predict};
use mlpip::nets::{ClassifierSpec, Model, NetworkSpec, TaskPosterior, ToyInference, ToyNetSpec};
use mlpip::objectives::mlpip_loss;
use mlpip::oracle;
use mlpip::rng::SeededRng;
use mlpip::tasks::cluster::{sample_cluster_episode, ClusterTaskSpec};
use mlpip::tasks::glyph::{sample_glyph_episode, ClassSplit, GlyphSpec};
use mlpip::tasks::toy::{context_values, sample_toy_episode, target_values, ToyModelSpec};
use mlpip::tasks::views::sample_view_episode;
use mlpip::tasks::Episode;
use proptest::prelude::*;
use std::sync::OnceLock;

fn versa() -> &'static Model {
    static M: OnceLock<Model> = OnceLock::new();
    M.get_or_init(|| {
        let spec = NetworkSpec::Classifier(ClassifierSpec::desk(4));
        Model::init(spec, Strategy::Versa, 0.5, 5, &mut SeededRng::new(17)).unwrap()
    })
}

fn cluster(way: usize, shot: usize, seed: u64) -> Episode {
    let spec = ClusterTaskSpec {
        way,
        shot,
        ..Default::default()
    };
    sample_cluster_episode(&spec, seed, &mut SeededRng::new(seed)).episode
}

fn classes(p: &TaskPosterior) -> &[mlpip::distributions::ClassFactor] {
    match p {
        TaskPosterior::Classes(f) => f,
        TaskPosterior::Latent(_) => unreachable!(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn context_and_target_never_share_examples(seed in any::<u64>(), way in 2usize..8, shot in 1usize..6) {
        let glyph = sample_glyph_episode(&GlyphSpec::default(), ClassSplit::Train, way, shot, seed, &mut SeededRng::new(seed)).unwrap();
        let views = sample_view_episode(shot, seed, &mut SeededRng::new(seed)).unwrap().episode;
        let toy = sample_toy_episode(&ToyModelSpec::default(), seed, &mut SeededRng::new(seed)).episode;
        for ep in [cluster(way, shot, seed), glyph, views, toy] {
            prop_assert!(ep.validate().is_ok());
            prop_assert!(ep.context_ids.iter().all(|i| !ep.target_ids.contains(i)));
        }
    }

    #[test]
    fn posterior_ignores_context_order(seed in any::<u64>(), shot in 1usize..6) {
        let ep = cluster(5, shot, seed);
        let mut shuffled = ep.clone();
        let mut order: Vec<usize> = (0..ep.context.len()).collect();
        SeededRng::new(seed ^ 1).shuffle(&mut order);
        shuffled.context = order.iter().map(|&i| ep.context[i].clone()).collect();
        shuffled.context_ids = order.iter().map(|&i| ep.context_ids[i]).collect();
        prop_assert_eq!(build_task_posterior(versa(), &ep).unwrap(), build_task_posterior(versa(), &shuffled).unwrap());
    }

    #[test]
    fn class_factors_depend_only_on_their_class(seed in any::<u64>(), shot in 1usize..6, changed in 0usize..5) {
        let ep = cluster(5, shot, seed);
        let mut other = ep.clone();
        let mut rng = SeededRng::new(seed ^ 2);
        for e in other.context.iter_mut().filter(|e| e.class() == Some(changed)) {
            e.input = rng.normals(4);
        }
        let (a, b) = (build_task_posterior(versa(), &ep).unwrap(), build_task_posterior(versa(), &other).unwrap());
        for c in (0..5).filter(|&c| c != changed) {
            prop_assert_eq!(&classes(&a)[c], &classes(&b)[c]);
        }
    }

    #[test]
    fn predictive_is_a_distribution(seed in any::<u64>(), samples in 1usize..8) {
        let ep = cluster(5, 2, seed);
        let post = build_task_posterior(versa(), &ep).unwrap();
        let lp = predict(versa(), &post, &ep.target_inputs().unwrap(), samples, &mut SeededRng::new(seed)).unwrap();
        for row in lp.values().chunks(5) {
            prop_assert!((row.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bayes_posteriors_are_normalized(seed in any::<u64>()) {
        let spec = ClusterTaskSpec::default();
        let t = sample_cluster_episode(&spec, seed, &mut SeededRng::new(seed));
        for e in &t.episode.target {
            let lp = oracle::bayes_classify(&t.class_means, &spec, &e.input);
            prop_assert!((lp.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn elbo_never_exceeds_the_evidence(seed in any::<u64>(), mean in -3.0f64..3.0, log_var in -6.0f64..2.0) {
        let spec = ToyModelSpec::default();
        let ep = sample_toy_episode(&spec, seed, &mut SeededRng::new(seed)).episode;
        let ys = context_values(&ep);
        let truth = oracle::true_posterior(&spec, &ys);
        let elbo = oracle::toy_elbo(&spec, &ys, mean, log_var.exp());
        let gap = truth.log_evidence - elbo;
        prop_assert!(gap >= -1e-12);
        // The gap is exactly KL(q ‖ true posterior).
        let kl = oracle::gaussian_kl(mean, log_var.exp(), truth.mean, truth.variance);
        prop_assert!((gap - kl).abs() < 1e-9 * (1.0 + kl));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_logsumexp_shifts(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 4), 1..6), shift in -20.0f64..20.0) {
        let n = rows.len();
        let t = Tensor::from_rows(&rows, 4).unwrap();
        let shifted = t.map(|v| v + shift);
        let mut g = Graph::new();
        let (x, y) = (g.constant(t), g.constant(shifted));
        let s = g.softmax(x, 1).unwrap();
        let (lx, ly) = (g.logsumexp(x, 1).unwrap(), g.logsumexp(y, 1).unwrap());
        for row in g.value(s).values().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for i in 0..n {
            prop_assert!((g.value(ly).values()[i] - g.value(lx).values()[i] - shift).abs() < 1e-9);
        }
    }
}

#[test]
fn adaptation_is_deterministic() {
    let ep = cluster(5, 3, 99);
    assert_eq!(adapt(versa(), &ep).unwrap(), adapt(versa(), &ep).unwrap());
}

/// The predictive bound tightens as the sample count grows.
#[test]
fn loss_decreases_with_more_samples() {
    let spec = NetworkSpec::Toy(ToyNetSpec {
        model: ToyModelSpec::default(),
        inference: ToyInference::TruePosterior,
    });
    let m = Model::init(spec, Strategy::Versa, 0.5, 0, &mut SeededRng::new(0)).unwrap();
    let eps: Vec<Episode> = (0..50)
        .map(|i| sample_toy_episode(&ToyModelSpec::default(), i, &mut SeededRng::new(i)).episode)
        .collect();
    let losses: Vec<f64> = [1, 4, 32]
        .iter()
        .map(|&l| mlpip_loss(&m, &eps, l, &mut SeededRng::new(l as u64)).unwrap().report.loss)
        .collect();
    let exact: f64 = eps
        .iter()
        .map(|ep| {
            let p = oracle::true_posterior(&ToyModelSpec::default(), &context_values(ep));
            oracle::expected_nll(p.mean, p.variance, &ToyModelSpec::default(), &target_values(ep))
        })
        .sum::<f64>()
        / 50.0;
    assert!(losses[0] > losses[1] && losses[1] > losses[2], "{losses:?}");
    assert!(losses[2] > exact - 1e-3, "{losses:?} vs {exact}");
}
