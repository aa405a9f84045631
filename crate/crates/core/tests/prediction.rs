mod common;

use fmtm::corpus::Document;
use fmtm::evaluation::conditional_perplexity;
use fmtm::generative::{make_synthetic_scenario, ScenarioConfig};
use fmtm::inference::LocalOptions;
use fmtm::par::Executor;
use fmtm::prediction::{predict_document, Predictor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn predictions_are_distributions(seed in any::<u64>(), t0 in 1usize..5, t1 in 1usize..5, tied in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts = if tied { [t0, t0] } else { [t0, t1] };
        let params = common::random_params(&counts, &[6, 5], tied, &mut rng);
        let tokens = rng.random_range(1..12);
        let bag = common::random_bag(6, tokens, &mut rng);
        for predictor in [Predictor::Conditional, Predictor::PriorMean] {
            let out = predict_document("d", &[&bag], &params, &[0], 1, predictor, &LocalOptions::default()).unwrap();
            prop_assert_eq!(out.theta_predicted.len(), counts[1]);
            prop_assert_eq!(out.word_dist.len(), 5);
            for dist in [&out.theta_predicted, &out.word_dist] {
                prop_assert!(dist.iter().all(|&x| x >= 0.0));
                prop_assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn independent_modalities_fall_back_to_the_prior(seed in any::<u64>(), t0 in 1usize..5, t1 in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = common::random_params(&[t0, t1], &[6, 5], false, &mut rng);
        for i in 0..t0 {
            for j in t0..t0 + t1 {
                params.prior.sigma[(i, j)] = 0.0;
                params.prior.sigma[(j, i)] = 0.0;
            }
        }
        let bag = common::random_bag(6, 10, &mut rng);
        let opts = LocalOptions::default();
        let cond = predict_document("d", &[&bag], &params, &[0], 1, Predictor::Conditional, &opts).unwrap();
        let prior = predict_document("d", &[&bag], &params, &[0], 1, Predictor::PriorMean, &opts).unwrap();
        prop_assert_eq!(cond.xi_predicted, prior.xi_predicted);
        prop_assert_eq!(cond.theta_predicted, prior.theta_predicted);
        prop_assert_eq!(cond.word_dist, prior.word_dist);
    }
}

#[test]
fn conditional_perplexity_ignores_order_and_sharding() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let params = common::random_params(&[3, 4], &[8, 6], false, &mut rng);
    let corpus = common::random_corpus(&[8, 6], 25, 12, &mut rng);
    let opts = LocalOptions::default();
    let run = |c: &fmtm::corpus::MultiModalCorpus, workers: usize| {
        conditional_perplexity(c, &params, "m0", "m1", Predictor::Conditional, &opts, &Executor::new(workers)).unwrap()
    };
    let base = run(&corpus, 1);
    let mut shuffled = corpus.clone();
    shuffled.documents.reverse();
    shuffled.documents.swap(0, 7);
    for other in [run(&corpus, 3), run(&corpus, 8), run(&shuffled, 1), run(&shuffled, 4)] {
        assert!((other.perplexity - base.perplexity).abs() <= 1e-12 * base.perplexity);
        assert_eq!((other.tokens, other.documents, other.skipped), (base.tokens, base.documents, base.skipped));
    }
}

#[test]
fn duplicated_corpus_keeps_its_perplexity() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let params = common::random_params(&[3, 2], &[7, 5], false, &mut rng);
    let corpus = common::random_corpus(&[7, 5], 12, 10, &mut rng);
    let mut doubled = corpus.clone();
    doubled.documents.extend(corpus.documents.iter().map(|d| Document { id: format!("{}-copy", d.id), ..d.clone() }));
    let opts = LocalOptions::default();
    let exec = Executor::new(1);
    let a = conditional_perplexity(&corpus, &params, "m1", "m0", Predictor::Conditional, &opts, &exec).unwrap();
    let b = conditional_perplexity(&doubled, &params, "m1", "m0", Predictor::Conditional, &opts, &exec).unwrap();
    assert!((a.perplexity - b.perplexity).abs() <= 1e-12 * a.perplexity);
    assert_eq!(b.tokens, 2 * a.tokens);
}

/// With the generating parameters, a text document dominated by a shared
/// topic should put most predicted image mass on that topic's partner.
#[test]
fn shared_pairs_carry_over_to_the_other_modality() {
    let spec = ScenarioConfig::acceptance();
    let (truth, corpus, latent) = make_synthetic_scenario(&spec, &Executor::new(1)).unwrap();
    let opts = LocalOptions::default();
    let (mut dominated, mut hits) = (0, 0);
    for (doc, record) in corpus.documents.iter().zip(&latent) {
        let theta = &record.theta[0];
        let Some(&(_, partner, _)) = spec.shared_pairs.iter().find(|&&(k, _, _)| theta[k] > 0.5) else {
            continue;
        };
        dominated += 1;
        let out = predict_document(&doc.id, &[&doc.counts[0]], &truth, &[0], 1, Predictor::Conditional, &opts).unwrap();
        let best = (0..out.theta_predicted.len())
            .max_by(|&a, &b| out.theta_predicted[a].total_cmp(&out.theta_predicted[b]))
            .unwrap();
        hits += usize::from(best == partner);
    }
    assert!(dominated >= 50, "only {dominated} dominated documents");
    assert!(hits as f64 >= 0.9 * dominated as f64, "{hits} of {dominated}");
}
